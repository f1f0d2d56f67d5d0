import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_hota, random_small_sequence
from panotrack.errors import InputError
from panotrack.geometry import PanoBox
from panotrack.metrics import (MetricReport, aggregate, eval_hota, eval_idf1, eval_mota, eval_ospa, evaluate,
                               ospa_frame)


def B(cu, cv=0.5, w=0.1, h=0.3):
    return PanoBox(cu % 1.0, cv, w, h)


def to_boxes(seq):
    return {f: [(i, PanoBox(*b)) for i, b in items] for f, items in seq.items()}


def perfect_fixture():
    return {f: [(1, B(0.1 + 0.01 * f)), (2, B(0.98 + 0.01 * f)), (3, B(0.5))] for f in range(1, 11)}


def test_perfect_tracking():
    gt = perfect_fixture()
    rep = evaluate(gt, gt)
    assert (rep.hota, rep.deta, rep.assa, rep.mota, rep.idf1, rep.ospa) == (1.0, 1.0, 1.0, 1.0, 1.0, 0.0)


def test_mota_missing_three():
    gt = {f: [(1, B(0.1)), (2, B(0.5))] for f in range(1, 6)}
    pred = {f: [(1, B(0.1))] + ([(2, B(0.5))] if f > 3 else []) for f in range(1, 6)}
    mota, counts = eval_mota(gt, pred)
    assert mota == pytest.approx(0.7)
    assert counts == {"TP": 7, "FP": 0, "FN": 3, "IDSW": 0, "GT": 10}


def test_mota_fp_fn_idsw():
    gt = {f: [(1, B(0.1)), (2, B(0.5))] for f in range(1, 6)}
    pred = {}
    for f in range(1, 6):
        items = [(10 if f <= 2 else 11, B(0.1))]
        if f < 5:
            items.append((20, B(0.5)))
        if f == 3:
            items.append((30, B(0.8)))
        pred[f] = items
    mota, counts = eval_mota(gt, pred)
    assert counts["FP"] == 1 and counts["FN"] == 1 and counts["IDSW"] == 1
    assert mota == pytest.approx(0.7)


def test_mota_continuity_keeps_previous_match():
    # two predictions overlap one GT; the one matched last frame is preferred even with lower IoU
    gt = {1: [(1, B(0.5))], 2: [(1, B(0.5))]}
    pred = {1: [(7, B(0.5))], 2: [(7, B(0.52)), (8, B(0.5))]}
    _, counts = eval_mota(gt, pred)
    assert counts["IDSW"] == 0


def test_mota_empty_gt():
    mota, counts = eval_mota({1: []}, {1: [(1, B(0.2))]})
    assert mota == float("-inf") and counts["FP"] == 1
    assert eval_mota({}, {})[0] == 1.0


def test_idf1_swap_fixture():
    gt = {f: [(1, B(0.3))] for f in range(1, 11)}
    pred = {f: [(100 if f <= 5 else 200, B(0.3))] for f in range(1, 11)}
    assert eval_idf1(gt, pred) == pytest.approx(0.5, abs=1e-9)


def test_idf1_edge_cases():
    gt = {1: [(1, B(0.3))]}
    assert eval_idf1(gt, {}) == 0.0
    assert eval_idf1({}, {}) == 1.0


def test_hota_edge_cases():
    gt = perfect_fixture()
    assert eval_hota(gt, {}) == (0.0, 0.0, 0.0)
    assert eval_hota({}, {}) == (1.0, 1.0, 1.0)


def test_hota_swap_matches_brute_force():
    gt, pred = {}, {}
    for f in range(1, 7):
        gt[f] = [(1, (0.2 + 0.01 * f, 0.5, 0.1, 0.3)), (2, (0.25 + 0.01 * f, 0.5, 0.1, 0.3))]
        a, b = (11, 12) if f <= 3 else (12, 11)
        pred[f] = [(a, (0.2 + 0.01 * f + 0.005, 0.5, 0.1, 0.3)), (b, (0.25 + 0.01 * f - 0.004, 0.5, 0.1, 0.3))]
    got = eval_hota(to_boxes(gt), to_boxes(pred))
    want = brute_hota(gt, pred)
    np.testing.assert_allclose(got, want, atol=1e-6)
    assert got[0] < 1.0


def test_hota_matches_brute_force_corpus():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        gt, pred = random_small_sequence(rng)
        np.testing.assert_allclose(eval_hota(to_boxes(gt), to_boxes(pred)), brute_hota(gt, pred), atol=1e-6)


def test_hota_detail_has_19_alphas():
    gt = perfect_fixture()
    *_, d = eval_hota(gt, gt, detail=True)
    assert len(d["alphas"]) == 19 and np.all(d["hota"] == 1.0)


def test_ospa_examples():
    assert eval_ospa({1: []}, {1: []}) == 0.0
    gt = perfect_fixture()
    assert eval_ospa(gt, gt) == 0.0
    assert eval_ospa({1: [(1, B(0.2)), (2, B(0.7))]}, {1: [(5, B(0.2))]}) == pytest.approx(0.5)


def test_ospa_order_and_cutoff():
    g = np.array([[0.2, 0.5, 0.1, 0.3], [0.7, 0.5, 0.1, 0.3]])
    p = np.array([[0.2, 0.5, 0.1, 0.3]])
    assert ospa_frame(g, p, cutoff=0.5, order=2) == pytest.approx(math.sqrt(0.25 / 2))
    with pytest.raises(InputError):
        eval_ospa({}, {}, cutoff=0)


def test_duplicate_ids_rejected():
    with pytest.raises(InputError):
        eval_hota({1: [(1, B(0.2)), (1, B(0.4))]}, {})


def test_evaluate_unknown_metric():
    with pytest.raises(KeyError):
        evaluate({}, {}, ("hota", "bogus"))


def test_aggregate_weights_by_gt():
    a = MetricReport(hota=1.0, deta=1.0, assa=1.0, mota=1.0, idf1=1.0, ospa=0.0, counts={"GT": 30})
    b = MetricReport(hota=0.0, deta=0.0, assa=0.0, mota=0.0, idf1=0.0, ospa=1.0, counts={"GT": 10})
    agg = aggregate([a, b])
    assert agg.hota == pytest.approx(0.75) and agg.ospa == pytest.approx(0.25)
    assert agg.counts["GT"] == 40


# --- properties on the random corpus ---------------------------------------------------


seeds = st.integers(0, 2**31 - 1)


@given(seeds, st.floats(-2, 2))
def test_metrics_invariant_under_global_shift(seed, s):
    gt, pred = random_small_sequence(np.random.default_rng(seed))
    G, P = to_boxes(gt), to_boxes(pred)
    shift = lambda seq: {f: [(i, b.shifted(s)) for i, b in items] for f, items in seq.items()}
    a, b = evaluate(G, P), evaluate(shift(G), shift(P))
    for name in ("hota", "mota", "idf1", "ospa"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-9)


@given(seeds)
def test_relabeling_predictions_keeps_hota_and_idf1(seed):
    rng = np.random.default_rng(seed)
    gt, pred = random_small_sequence(rng)
    ids = sorted({i for items in pred.values() for i, _ in items})
    perm = dict(zip(ids, rng.permutation([1000 + k for k in range(len(ids))]).tolist()))
    relabeled = {f: [(perm[i], b) for i, b in items] for f, items in pred.items()}
    G = to_boxes(gt)
    assert eval_hota(G, to_boxes(relabeled)) == pytest.approx(eval_hota(G, to_boxes(pred)), abs=1e-12)
    assert eval_idf1(G, to_boxes(relabeled)) == pytest.approx(eval_idf1(G, to_boxes(pred)), abs=1e-12)


@given(seeds)
def test_deleting_true_positive_never_helps(seed):
    rng = np.random.default_rng(seed)
    gt = {f: [(g, (0.1 + 0.2 * g + 0.01 * f, 0.5, 0.1, 0.3)) for g in range(1, 4)] for f in range(1, 8)}
    pred = {f: [(g + 10, (b[0] + float(rng.normal(0, 0.005)), 0.5, 0.1, 0.3)) for g, b in items]
            for f, items in gt.items()}
    f = int(rng.integers(1, 8))
    k = int(rng.integers(0, 3))
    fewer = {ff: [x for j, x in enumerate(items) if not (ff == f and j == k)] for ff, items in pred.items()}
    G = to_boxes(gt)
    full, cut = evaluate(G, to_boxes(pred)), evaluate(G, to_boxes(fewer))
    assert cut.mota <= full.mota + 1e-12
    assert cut.idf1 <= full.idf1 + 1e-12
    assert cut.hota <= full.hota + 1e-12
