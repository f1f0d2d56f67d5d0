import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from panotrack.association import AssocConfig, Detection
from panotrack.feedback import (FlexiTrackInstance, claim_detections, conditional_entropy, encode_anchor,
                                encode_anchors, entropy, feedback_gain, make_instances, perturb)
from panotrack.geometry import PanoBox, kalman_initiate, kalman_predict, cyclic_iou
from panotrack.memory import MemoryBank, MemorySlot, MoeParams, admit
from panotrack.rng import CounterRNG
from panotrack.tracker import Tracklet


def _loop_conditional_entropy(joint):
    h = 0.0
    n, m = joint.shape
    for j in range(m):
        py = sum(joint[i][j] for i in range(n))
        for i in range(n):
            if joint[i][j] > 0:
                h -= joint[i][j] * math.log(joint[i][j] / py)
    return h


# --- entropy -------------------------------------------------------------------------


def test_entropy_examples():
    assert entropy([1.0, 0.0]) == 0.0
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(math.log(8), abs=1e-12)


def test_entropy_rejects_bad_mass():
    with pytest.raises(ValueError):
        entropy([0.5, 0.4])
    with pytest.raises(ValueError):
        entropy([1.5, -0.5])
    with pytest.raises(ValueError):
        conditional_entropy(np.full((2, 2), 0.3))


def test_conditional_entropy_examples():
    px, py = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.4])
    assert conditional_entropy(np.outer(px, py)) == pytest.approx(entropy(px), abs=1e-12)
    assert conditional_entropy(np.eye(3) / 3) == 0.0
    assert conditional_entropy(np.array([[0.4, 0.1], [0.1, 0.4]])) == pytest.approx(0.5004, abs=1e-4)


def test_conditional_entropy_matches_loop(rng):
    for _ in range(50):
        j = rng.random((3, 5))
        j /= j.sum()
        assert conditional_entropy(j) == pytest.approx(_loop_conditional_entropy(j), abs=1e-12)


@st.composite
def joints(draw):
    n = draw(st.integers(1, 5))
    m = draw(st.integers(1, 5))
    a = draw(arrays(float, (n, m), elements=st.floats(0, 1)))
    if a.sum() <= 0:
        a[0, 0] = 1.0
    return a / a.sum()


@given(joints())
def test_conditioning_never_raises_entropy(j):
    assert conditional_entropy(j) <= entropy(j.sum(axis=1)) + 1e-9


def test_feedback_gain_cases():
    rng = np.random.default_rng(3)
    tables = []
    for _ in range(5):
        px, py = rng.random(4), rng.random(4)
        tables.append(np.outer(px / px.sum(), py / py.sum()))
    assert abs(feedback_gain(tables)) < 1e-9
    T, n = 7, 5
    assert feedback_gain([np.eye(n) / n] * T) == pytest.approx(T * math.log(n), abs=1e-9)
    with pytest.raises(ValueError):
        feedback_gain([])


@given(st.lists(joints(), min_size=1, max_size=5))
def test_feedback_gain_non_negative(tables):
    assert feedback_gain(tables) >= -1e-9


def test_feedback_gain_strict_iff_dependence():
    dep = np.array([[0.4, 0.1], [0.1, 0.4]])
    assert feedback_gain([dep]) > 1e-3


# --- anchors and instances ------------------------------------------------------------


def test_anchor_encoding_is_periodic_in_azimuth():
    a = encode_anchor(PanoBox(0.0, 0.5, 0.1, 0.2))
    b = encode_anchors(np.array([[1.0, 0.5, 0.1, 0.2]]))[0]
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a.shape == (32,)
    assert encode_anchor(PanoBox(0.3, 0.5, 0.1, 0.2), 18).shape == (18,)


def _track(tid, cu, emb, score=0.8):
    bank = admit(MemoryBank(8), MemorySlot(np.asarray(emb, float), score, 0))
    return Tracklet(tid, kalman_initiate(PanoBox(cu, 0.5, 0.05, 0.2)), bank, np.asarray(emb, float), score)


def test_make_instances_empty():
    assert make_instances([], MoeParams.seeded(8, seed=0), 8) == []


def test_make_instances_single_identity_memory():
    e = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    t = _track(4, 0.3, e)
    (inst,) = make_instances([t], MoeParams.identity(8), 8)
    np.testing.assert_allclose(inst.X, e, atol=1e-12)
    assert inst.Y_box == kalman_predict(t.kalman).box
    assert inst.track_id == 4 and inst.score == 0.8
    np.testing.assert_array_equal(inst.Y_enc, encode_anchor(inst.Y_box, 8))


def test_make_instances_cardinality(rng):
    tracks = [_track(i + 1, rng.random(), rng.normal(size=8)) for i in range(5)]
    inst = make_instances(tracks, MoeParams.seeded(8, seed=1), 8)
    assert len(inst) == 5
    assert len({i.track_id for i in inst}) == 5


def test_make_instances_without_memory_uses_query(rng):
    tracks = [_track(i + 1, rng.random(), rng.normal(size=8)) for i in range(3)]
    for t, inst in zip(tracks, make_instances(tracks, None, 8, use_memory=False)):
        np.testing.assert_array_equal(inst.X, t.query)


def _instance(cu=0.4, X=None):
    box = PanoBox(cu, 0.5, 0.05, 0.2)
    X = np.ones(8) if X is None else np.asarray(X, float)
    return FlexiTrackInstance(1, X, box, encode_anchor(box, 8), 0.7)


def test_perturb_zero_is_identity():
    inst = _instance()
    assert perturb(inst, 0.0, 0.0, CounterRNG(0)) is inst


def test_perturb_is_seeded():
    a = perturb(_instance(), 0.1, 0.1, CounterRNG(5, 3))
    b = perturb(_instance(), 0.1, 0.1, CounterRNG(5, 3))
    np.testing.assert_array_equal(a.X, b.X)
    assert a.Y_box == b.Y_box
    np.testing.assert_array_equal(a.Y_enc, encode_anchor(a.Y_box, 8))


def test_perturb_feature_noise_scale():
    inst = _instance(X=np.zeros(10_000))
    out = perturb(inst, 0.1, 0.0, CounterRNG(11))
    assert abs(np.std(out.X) - 0.1) < 0.005
    assert out.Y_box == inst.Y_box


def test_perturb_rejects_negative():
    with pytest.raises(ValueError):
        perturb(_instance(), -0.1, 0.0, CounterRNG(0))


# --- claiming ------------------------------------------------------------------------


def test_claim_no_instances():
    dets = [Detection(PanoBox(0.1, 0.5, 0.05, 0.2), 0.6, np.ones(8))]
    c = claim_detections([], dets)
    assert c.D_F == [] and [u.det_index for u in c.D_L] == [0]


def test_claim_exact_match_similarity_one():
    inst = _instance(0.4)
    c = claim_detections([inst], [Detection(inst.Y_box, 0.9, inst.X.copy())])
    assert len(c.D_F) == 1
    assert c.D_F[0].similarity == pytest.approx(1.0, abs=1e-12)
    assert c.D_F[0].score == pytest.approx(0.9)


def _brute_claims(instances, dets, gate, cfg=AssocConfig()):
    """Exhaustive search over every injective instance -> detection map for the minimum hybrid cost."""
    n, m = len(instances), len(dets)
    cost = np.zeros((n, m))
    mask = np.zeros((n, m), bool)
    for i, inst in enumerate(instances):
        for j, d in enumerate(dets):
            iou = cyclic_iou(inst.Y_box, d.box)
            cos = inst.X @ d.embedding / (np.linalg.norm(inst.X) * np.linalg.norm(d.embedding))
            cost[i, j] = cfg.w_iou * (1 - iou) + cfg.w_app * (1 - cos) / 2
            mask[i, j] = iou <= 0 and cos < cfg.app_gate
    best, best_pairs = np.inf, None
    for cols in itertools.permutations(range(m), n):
        total = sum(1e6 if mask[i, k] else cost[i, k] for i, k in enumerate(cols))
        if total < best:
            best, best_pairs = total, list(enumerate(cols))
    return {(instances[i].track_id, k) for i, k in best_pairs if not mask[i, k] and 1 - cost[i, k] >= gate}


def test_claims_match_exhaustive_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(30):
        insts = []
        for tid in range(1, 4):
            box = PanoBox(rng.random(), 0.5, 0.08, 0.2)
            insts.append(FlexiTrackInstance(tid, rng.normal(size=6), box, encode_anchor(box, 8), 0.5))
        dets = []
        for k in range(5):
            base = insts[k % 3].Y_box if k < 3 else PanoBox(rng.random(), 0.5, 0.08, 0.2)
            box = PanoBox((base.cu + rng.normal(0, 0.02)) % 1, 0.5, 0.08, 0.2)
            emb = insts[k % 3].X + rng.normal(0, 0.5, 6)
            dets.append(Detection(box, float(rng.random()), emb))
        got = claim_detections(insts, dets, gate=0.4)
        assert {(c.track_id, c.det_index) for c in got.D_F} == _brute_claims(insts, dets, 0.4)
        assert len(got.D_F) + len(got.D_L) == len(dets)
        assert sorted([c.det_index for c in got.D_F] + [u.det_index for u in got.D_L]) == list(range(5))
        assert all(0.0 <= c.score <= 1.0 for c in got.D_F)
