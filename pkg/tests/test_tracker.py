import itertools

import numpy as np
import pytest

from panotrack.association import Detection
from panotrack.errors import ConfigError, InputError
from panotrack.feedback import Claim, ClaimedDetections, FlexiTrackInstance, Unclaimed, encode_anchor
from panotrack.geometry import PanoBox, cyclic_iou
from panotrack.synth import ScenarioConfig, generate
from panotrack.tracker import (Branch, FrameResult, TrackOutput, Tracker, TrackerConfig, TrackState,
                               branch_select, e2e_threshold, ensemble, tbd_step)

E2E, TBD = Branch.E2E, Branch.TBD


def _claimed(n_claims, n_free=0):
    return ClaimedDetections([Claim(i + 1, i, 0.9, 0.9) for i in range(n_claims)],
                             [Unclaimed(n_claims + k, 0.9) for k in range(n_free)])


def _det(cu, score=0.9, emb=None, cv=0.5):
    emb = np.eye(8)[0] if emb is None else emb
    return Detection(PanoBox(cu, cv, 0.05, 0.2), score, np.asarray(emb, float))


# --- branch selection ----------------------------------------------------------------


def test_branch_select_modes():
    tracks = list(range(10))
    assert branch_select(_claimed(0), tracks, TrackerConfig(mode="e2e")) == {E2E}
    assert branch_select(_claimed(0), tracks, TrackerConfig(mode="tbd")) == {TBD}
    assert branch_select(_claimed(0), tracks, TrackerConfig(mode="ensemble")) == {E2E, TBD}
    auto = TrackerConfig(mode="auto")
    assert branch_select(_claimed(10), tracks, auto) == {E2E}
    assert branch_select(_claimed(3), tracks, auto) == {TBD}
    assert branch_select(_claimed(6), tracks, auto) == {E2E, TBD}
    assert branch_select(_claimed(0), [], auto) == {TBD}


# --- E2E thresholding ----------------------------------------------------------------


def test_e2e_threshold_examples():
    cfg = TrackerConfig()
    d = e2e_threshold(ClaimedDetections([Claim(7, 0, 0.6, 0.8)], [Unclaimed(1, 0.4), Unclaimed(2, 0.51)]), [], cfg)
    assert d.updates == [(7, 0, 0.6)]
    assert d.inits == [2]
    assert d.deletes == [1]


def test_e2e_threshold_is_strict():
    cfg = TrackerConfig()
    d = e2e_threshold(ClaimedDetections([Claim(1, 0, 0.5, 1.0)], [Unclaimed(1, 0.5)]), [], cfg)
    assert d.updates == [] and d.inits == [] and d.deletes == [0, 1]


# --- TBD step ------------------------------------------------------------------------


def _instance(tid, cu, emb):
    box = PanoBox(cu, 0.5, 0.05, 0.2)
    return FlexiTrackInstance(tid, np.asarray(emb, float), box, encode_anchor(box, 8), 0.8)


def test_tbd_perfect_frame():
    E = np.eye(8)
    inst = [_instance(i + 1, 0.1 + 0.2 * i, E[i]) for i in range(3)]
    dets = [_det(0.1 + 0.2 * i, 0.9, E[i]) for i in range(3)]
    d = tbd_step(dets, inst, TrackerConfig(c_s=8))
    assert d.updates == [(1, 0, 0.9), (2, 1, 0.9), (3, 2, 0.9)]
    assert d.inits == [] and d.deletes == []


def test_tbd_crafted_frame_matches_replay():
    """Three tracks, four detections: brute-force assignment of the high-score stage plus threshold replay."""
    E = np.eye(8)
    inst = [_instance(1, 0.1, E[0]), _instance(2, 0.3, E[1]), _instance(3, 0.7, E[2])]
    dets = [_det(0.302, 0.8, E[1]), _det(0.101, 0.9, E[0]), _det(0.5, 0.7, E[3]), _det(0.45, 0.3, E[4])]
    cfg = TrackerConfig(c_s=8)
    d = tbd_step(dets, inst, cfg)

    high = [j for j, x in enumerate(dets) if x.score >= cfg.tau_split]

    def cost(i, j):
        iou = cyclic_iou(inst[i].Y_box, dets[j].box)
        cos = float(inst[i].X @ dets[j].embedding)
        return 0.6 * (1 - iou) + 0.4 * (1 - cos) / 2, iou <= 0 and cos < 0.3

    best, best_pairs = np.inf, None
    for cols in itertools.permutations(high, 3):
        total = sum(1e6 if cost(i, j)[1] else cost(i, j)[0] for i, j in enumerate(cols))
        if total < best:
            best, best_pairs = total, [(i, j) for i, j in enumerate(cols) if not cost(i, j)[1] and cost(i, j)[0] <= 0.8]
    want_updates = sorted((inst[i].track_id, j, dets[j].score) for i, j in best_pairs)
    assert sorted(d.updates) == want_updates
    unmatched = [j for j in range(4) if j not in {j for _, j, _ in want_updates}]
    assert d.inits == [j for j in unmatched if dets[j].score > 0.5]
    assert d.deletes == [j for j in unmatched if dets[j].score <= 0.5]


# --- ensemble ------------------------------------------------------------------------


def _out(tid, cu, score=0.8, hits=1, prov=TBD):
    return TrackOutput(tid, PanoBox(cu, 0.5, 0.05, 0.2), score, prov, hits)


def test_ensemble_idempotent():
    r = FrameResult(3, [_out(1, 0.1), _out(2, 0.5)])
    assert ensemble(r, r).outputs == r.outputs


def test_ensemble_union_of_disjoint():
    a = FrameResult(3, [_out(1, 0.1)])
    b = FrameResult(3, [_out(2, 0.6, prov=E2E)])
    assert [o.id for o in ensemble(a, b).outputs] == [1, 2]


def test_ensemble_conflict_keeps_longer_history():
    a = FrameResult(3, [_out(4, 0.3, score=0.9, hits=2)])
    b = FrameResult(3, [_out(9, 0.301, score=0.7, hits=10, prov=E2E)])
    (o,) = ensemble(a, b).outputs
    assert o.id == 9
    assert o.box == a.outputs[0].box and o.score == 0.9
    assert o.provenance == Branch.ENSEMBLE


def test_ensemble_frame_mismatch():
    with pytest.raises(InputError):
        ensemble(FrameResult(1, []), FrameResult(2, []))


# --- stepping ------------------------------------------------------------------------


def test_cold_start_and_lost_suppression():
    tr = Tracker(TrackerConfig(c_s=8, mode="tbd"))
    r1 = tr.step(1, [_det(0.2, emb=np.eye(8)[0]), _det(0.6, emb=np.eye(8)[1])])
    assert [o.id for o in r1.outputs] == [1, 2]
    r2 = tr.step(2, [])
    assert r2.outputs == []
    assert all(t.time_since_update == 1 and t.state == TrackState.LOST for t in tr.tracks)


def test_lost_tracks_emitted_when_configured():
    tr = Tracker(TrackerConfig(c_s=8, mode="tbd", emit_lost=True))
    tr.step(1, [_det(0.2)])
    assert [o.id for o in tr.step(2, []).outputs] == [1]


def test_out_of_order_frame_rejected():
    tr = Tracker(TrackerConfig(c_s=8))
    tr.step(5, [])
    with pytest.raises(InputError):
        tr.step(5, [])


def test_removal_after_max_age_and_no_id_reuse():
    tr = Tracker(TrackerConfig(c_s=8, mode="tbd", max_age=3))
    tr.step(1, [_det(0.2)])
    for f in range(2, 6):
        tr.step(f, [])
    assert tr.tracks == [] and tr.removed_ids == {1}
    r = tr.step(6, [_det(0.2)])
    assert [o.id for o in r.outputs] == [2]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrackerConfig(mode="both").validate()
    with pytest.raises(ConfigError):
        TrackerConfig(tau_init=1.5).validate()
    with pytest.raises(ConfigError):
        TrackerConfig(w_iou=0.5, w_app=0.2).validate()


def _scenario(**kw):
    base = dict(n_targets=5, seq_len=60, embed_dim=32, seed=3)
    base.update(kw)
    return generate(ScenarioConfig(**base))


@pytest.mark.parametrize("mode", ["e2e", "tbd", "ensemble", "auto"])
def test_run_invariants(mode):
    seq = _scenario()
    tr = Tracker(TrackerConfig(mode=mode))
    results = tr.run(seq.frames())
    born: set[int] = set()
    for r in results:
        ids = [o.id for o in r.outputs]
        assert len(ids) == len(set(ids))
        assert r.diagnostics["branches"] in ("E2E", "TBD", "E2E+TBD")
        assert r.diagnostics["n_update"] + r.diagnostics["n_init"] + r.diagnostics["n_delete"] == r.diagnostics["n_detections"]
        new = set(ids) - born
        assert len(new) == r.diagnostics["n_init"]
        assert all(i > max(born, default=0) for i in new)  # fresh ids only
        born |= new
    assert all(t.state != TrackState.REMOVED for t in tr.tracks)
    assert not ({t.id for t in tr.tracks} & tr.removed_ids)


def test_lifecycle_counters_step_by_one():
    seq = _scenario(p_miss=0.3)
    tr = Tracker(TrackerConfig(mode="tbd"))
    prev = {}
    for f, dets in seq.frames():
        r = tr.step(f, dets)
        updated = {o.id for o in r.outputs}
        for t in tr.tracks:
            if t.id in updated:
                assert t.time_since_update == 0
            elif t.id in prev:
                assert t.time_since_update == prev[t.id] + 1
        prev = {t.id: t.time_since_update for t in tr.tracks}


def test_run_is_deterministic():
    seq = _scenario()
    a = Tracker(TrackerConfig(mode="auto", sigma_x=0.1, sigma_y=0.1)).run(seq.frames())
    b = Tracker(TrackerConfig(mode="auto", sigma_x=0.1, sigma_y=0.1)).run(seq.frames())
    assert [(r.frame, r.outputs, r.diagnostics) for r in a] == [(r.frame, r.outputs, r.diagnostics) for r in b]


def test_e2e_mode_builds_no_cost_matrix():
    seq = _scenario()
    tr = Tracker(TrackerConfig(mode="e2e"))
    results = tr.run(seq.frames())
    assert tr.cost_matrix_count == 0
    assert all(r.diagnostics["cost_matrices"] == 0 for r in results)
    tr2 = Tracker(TrackerConfig(mode="tbd"))
    tr2.run(seq.frames())
    assert tr2.cost_matrix_count > 0


def test_noiseless_sequence_is_tracked_perfectly():
    seq = _scenario(p_miss=0.0, clutter_rate=0.0, jitter_sigma=0.0, embed_noise=0.0, score_std=0.0)
    results = Tracker(TrackerConfig(mode="tbd")).run(seq.frames())
    mapping = {}
    for r, (f, dets) in zip(results, seq.frames()):
        truth = seq.true_ids[f]
        for o in r.outputs:
            j = next(k for k, d in enumerate(dets) if d.box == o.box or cyclic_iou(d.box, o.box) > 0.9)
            mapping.setdefault(o.id, truth[j])
            assert mapping[o.id] == truth[j]
    assert len(set(mapping.values())) == len(mapping)


def test_dssm_variant_runs():
    seq = _scenario(seq_len=20)
    results = Tracker(TrackerConfig(mode="tbd", use_dssm=True)).run(seq.frames())
    assert len(results) == 20
