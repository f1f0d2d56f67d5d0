"""Tracklet management: branch selection, E2E thresholding, TBD association, ensembling, lifecycle.

Per frame the tracker builds FlexiTrack instances from its live tracks, lets
them claim detections, picks the E2E branch, the TBD branch or both, merges
the branch outputs, and writes the accepted detections back into each
track's motion state and memory bank.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from .association import AssocConfig, Detection, box_array, embedding_array, staged_associate, solve_assignment, CostMatrix
from .errors import ConfigError, InputError
from .feedback import ClaimedDetections, FlexiTrackInstance, claim_detections, encode_anchor, make_instances, perturb
from .geometry import DEFAULT_NOISE, CyclicKalmanState, PanoBox, iou_matrix, kalman_initiate, kalman_predict, kalman_update_many
from .memory import MemoryBank, MemorySlot, MoeParams, admit
from .rng import CounterRNG

log = logging.getLogger(__name__)

MODES = ("e2e", "tbd", "ensemble", "auto")


class Branch(str, Enum):
    E2E = "E2E"
    TBD = "TBD"
    ENSEMBLE = "Ensemble"


class TrackState(str, Enum):
    ACTIVE = "Active"
    LOST = "Lost"
    REMOVED = "Removed"


@dataclass
class TrackerConfig:
    tau_init: float = 0.5
    tau_update: float = 0.5
    max_age: int = 30
    mode: str = "auto"
    w_iou: float = 0.6
    w_app: float = 0.4
    max_cost: float = 0.8
    max_cost_low: float = 0.5
    tau_split: float = 0.5
    app_gate: float = 0.3
    claim_gate: float = 0.4
    auto_high: float = 0.8
    auto_low: float = 0.5
    ensemble_iou: float = 0.7
    n_m: int = 8
    K_r: int = 4
    n_e: int = 4
    theta_sim: float = 0.7
    temperature: float = 1.0
    lam: float = 0.5
    c_s: int = 32
    seed: int = 0
    use_memory: bool = True
    use_instances: bool = True
    feedback_instances: bool = True
    use_dssm: bool = False
    cyclic: bool = True
    emit_lost: bool = False
    sigma_x: float = 0.0
    sigma_y: float = 0.0

    def validate(self) -> "TrackerConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("tau_init", "tau_update", "tau_split", "lam", "claim_gate", "max_cost", "max_cost_low"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.max_age < 1:
            raise ConfigError("max_age must be >= 1")
        if self.w_iou < 0 or self.w_app < 0 or abs(self.w_iou + self.w_app - 1.0) > 1e-9:
            raise ConfigError("w_iou and w_app must be non-negative and sum to 1")
        if self.n_m < 2 or self.n_m % 2:
            raise ConfigError("n_m must be an even positive integer")
        if self.K_r < 1 or self.n_e < 1 or self.c_s < 8:
            raise ConfigError("K_r, n_e must be >= 1 and c_s >= 8")
        if self.temperature <= 0 or self.sigma_x < 0 or self.sigma_y < 0:
            raise ConfigError("temperature must be positive and noise scales non-negative")
        return self

    @property
    def assoc(self) -> AssocConfig:
        return AssocConfig(self.w_iou, self.w_app, self.max_cost, self.max_cost_low,
                           self.tau_split, self.app_gate, self.cyclic)

    def default_moe(self) -> MoeParams:
        return MoeParams.seeded(self.c_s, self.n_e, seed=self.seed, lam=self.lam,
                                K_r=self.K_r, temperature=self.temperature)


@dataclass
class Tracklet:
    id: int
    kalman: CyclicKalmanState
    bank: MemoryBank
    query: np.ndarray
    last_score: float
    state: TrackState = TrackState.ACTIVE
    hits: int = 1
    time_since_update: int = 0
    provenance: Branch = Branch.TBD


class TrackOutput(NamedTuple):
    id: int
    box: PanoBox
    score: float
    provenance: Branch
    hits: int


@dataclass
class FrameResult:
    frame: int
    outputs: list[TrackOutput]
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Decisions:
    updates: list[tuple[int, int, float]] = field(default_factory=list)  # (track id, det index, score)
    inits: list[int] = field(default_factory=list)
    deletes: list[int] = field(default_factory=list)


def branch_select(claimed: ClaimedDetections | None, tracks, cfg: TrackerConfig) -> frozenset[Branch]:
    if cfg.mode == "e2e":
        return frozenset({Branch.E2E})
    if cfg.mode == "tbd":
        return frozenset({Branch.TBD})
    if cfg.mode == "ensemble":
        return frozenset({Branch.E2E, Branch.TBD})
    n_claimed = len(claimed.D_F) if claimed is not None else 0
    frac = n_claimed / max(1, len(tracks))
    if frac >= cfg.auto_high:
        return frozenset({Branch.E2E})
    if frac < cfg.auto_low:
        return frozenset({Branch.TBD})
    return frozenset({Branch.E2E, Branch.TBD})


def e2e_threshold(claimed: ClaimedDetections, tracks, cfg: TrackerConfig) -> Decisions:
    """Claimed detections above ``tau_update`` update their track; unclaimed ones above ``tau_init`` start one."""
    dec = Decisions()
    for c in claimed.D_F:
        if c.score > cfg.tau_update:
            dec.updates.append((c.track_id, c.det_index, c.score))
        else:
            dec.deletes.append(c.det_index)
    for u in claimed.D_L:
        if u.score > cfg.tau_init:
            dec.inits.append(u.det_index)
        else:
            dec.deletes.append(u.det_index)
    dec.deletes.sort()
    return dec


def tbd_step(detections: list[Detection], instances: list[FlexiTrackInstance], cfg: TrackerConfig,
             on_cost_matrix=None) -> Decisions:
    """Two-stage association of detections to the predicted, memory-enhanced tracks."""
    res = staged_associate(
        box_array([i.Y_box for i in instances]),
        embedding_array([i.X for i in instances], cfg.c_s),
        detections, cfg.tau_split, cfg.assoc, on_cost_matrix,
    )
    dec = Decisions()
    for i, j in res.matches:
        dec.updates.append((instances[i].track_id, j, float(detections[j].score)))
    for j in res.unmatched_detections:
        (dec.inits if detections[j].score > cfg.tau_init else dec.deletes).append(j)
    return dec


def _ensemble(t_tbd: FrameResult, t_e2e: FrameResult, iou_thresh: float = 0.7):
    if t_tbd.frame != t_e2e.frame:
        raise InputError(f"cannot ensemble frames {t_tbd.frame} and {t_e2e.frame}")
    A, B = t_tbd.outputs, t_e2e.outputs
    sources: dict[int, Branch] = {}
    merged: list[TrackOutput] = []
    pairs: list[tuple[int, int]] = []
    if A and B:
        iou = iou_matrix(box_array([o.box for o in A]), box_array([o.box for o in B]))
        pairs = solve_assignment(CostMatrix(1.0 - iou, iou < iou_thresh), 1.0).matches
    in_pair_a = {i for i, _ in pairs}
    in_pair_b = {k for _, k in pairs}
    for i, k in pairs:
        a, b = A[i], B[k]
        if a.id == b.id:
            keep_id, id_src = a.id, (Branch.TBD if a.score >= b.score else Branch.E2E)
        elif (a.hits, a.id > 0) >= (b.hits, b.id > 0):
            keep_id, id_src = a.id, Branch.TBD
        else:
            keep_id, id_src = b.id, Branch.E2E
        best = a if a.score >= b.score else b
        hits = max(a.hits, b.hits)
        prov = Branch.ENSEMBLE if (a.id, a.box, a.score) != (b.id, b.box, b.score) else a.provenance
        merged.append(TrackOutput(keep_id, best.box, best.score, prov, hits))
        sources[keep_id] = id_src
    for i, a in enumerate(A):
        if i not in in_pair_a:
            merged.append(a)
            sources.setdefault(a.id, Branch.TBD)
    for k, b in enumerate(B):
        if k not in in_pair_b:
            merged.append(b)
    # one output per id: the higher score wins
    by_id: dict[int, TrackOutput] = {}
    for o in merged:
        cur = by_id.get(o.id)
        if cur is None or o.score > cur.score:
            by_id[o.id] = o
            if o.provenance == Branch.E2E:
                sources[o.id] = Branch.E2E
            elif o.provenance == Branch.TBD:
                sources[o.id] = Branch.TBD
    outputs = sorted(by_id.values(), key=lambda o: o.id)
    return FrameResult(t_tbd.frame, outputs, {"merged_pairs": len(pairs)}), sources


def ensemble(t_tbd: FrameResult, t_e2e: FrameResult, iou_thresh: float = 0.7) -> FrameResult:
    """Fuse the two branch outputs.

    Boxes overlapping across branches at ``iou_thresh`` or more merge into one
    output that keeps the id with the longer history and the box and score of
    the higher-scoring side; everything else is unioned.
    """
    return _ensemble(t_tbd, t_e2e, iou_thresh)[0]


class Tracker:
    """Stateful single-sequence tracker.  Not thread-safe; use one instance per sequence."""

    def __init__(self, cfg: TrackerConfig | None = None, moe: MoeParams | None = None, dssm=None,
                 noise=DEFAULT_NOISE):
        self.cfg = (cfg or TrackerConfig()).validate()
        self.moe = moe if moe is not None else self.cfg.default_moe()
        if self.cfg.use_dssm and dssm is None:
            from .dssm import DssmParams
            dssm = DssmParams.seeded(self.cfg.c_s, seed=self.cfg.seed)
        self.dssm = dssm
        self.noise = noise
        self.rng = CounterRNG(self.cfg.seed, stream=7)
        self.tracks: list[Tracklet] = []
        self.next_id = 1
        self.last_frame: int | None = None
        self.removed_ids: set[int] = set()
        self.cost_matrix_count = 0

    # -- helpers --------------------------------------------------------------------

    def _count_cost_matrix(self, _c) -> None:
        self.cost_matrix_count += 1

    def _instances(self, live: list[Tracklet]) -> list[FlexiTrackInstance]:
        cfg = self.cfg
        if cfg.feedback_instances:
            inst = make_instances(live, self.moe, cfg.c_s, cfg.use_memory, self.noise)
        else:
            # raw last observation: no motion prediction, no memory enhancement
            inst = []
            for t in live:
                pred = kalman_predict(t.kalman, self.noise)
                box = t.kalman.box
                inst.append(FlexiTrackInstance(t.id, np.asarray(t.query, float).copy(), box,
                                               encode_anchor(box, cfg.c_s), t.last_score, pred))
        if cfg.sigma_x > 0 or cfg.sigma_y > 0:
            inst = [perturb(i, cfg.sigma_x, cfg.sigma_y, self.rng) for i in inst]
        return inst

    def _propose(self, dec: Decisions, dets, tracks_by_id, predicted, frame, prov):
        outputs, states = [], {}
        posts = kalman_update_many([predicted[tid] for tid, _, _ in dec.updates],
                                   [dets[j].box for _, j, _ in dec.updates], self.noise)
        for (tid, j, _s), st in zip(dec.updates, posts):
            outputs.append(TrackOutput(tid, st.box, float(dets[j].score), prov, tracks_by_id[tid].hits + 1))
            states[tid] = (j, st)
        for j in dec.inits:
            pid = -(j + 1)
            outputs.append(TrackOutput(pid, dets[j].box, float(dets[j].score), prov, 1))
            states[pid] = (j, None)
        return FrameResult(frame, outputs), states

    # -- main loop ------------------------------------------------------------------

    def step(self, frame: int, detections: list[Detection]) -> FrameResult:
        cfg = self.cfg
        if self.last_frame is not None and frame <= self.last_frame:
            raise InputError(f"frame {frame} presented after frame {self.last_frame}")
        self.last_frame = frame
        dets = list(detections)
        if cfg.use_dssm and dets:
            refined = _refine(dets, self.dssm)
            dets = [dataclasses.replace(d, embedding=e) for d, e in zip(dets, refined)]

        live = self.tracks
        by_id = {t.id: t for t in live}
        instances = self._instances(live)
        predicted = {i.track_id: i.state for i in instances}

        claimed = None
        if cfg.mode != "tbd":
            claimers = instances if cfg.use_instances else []
            claimed = claim_detections(claimers, dets, cfg.claim_gate, cfg.assoc)
        branches = branch_select(claimed, live, cfg)
        assert branches, "No valid tracking paradigm activated."
        cm_before = self.cost_matrix_count

        proposals = {}
        results = {}
        if Branch.E2E in branches:
            dec = e2e_threshold(claimed, live, cfg)
            results[Branch.E2E], proposals[Branch.E2E] = self._propose(dec, dets, by_id, predicted, frame, Branch.E2E)
        if Branch.TBD in branches:
            dec = tbd_step(dets, instances, cfg, self._count_cost_matrix)
            results[Branch.TBD], proposals[Branch.TBD] = self._propose(dec, dets, by_id, predicted, frame, Branch.TBD)

        if len(results) == 2:
            merged, sources = _ensemble(results[Branch.TBD], results[Branch.E2E], cfg.ensemble_iou)
        else:
            (only,) = results
            merged = results[only]
            sources = {o.id: only for o in merged.outputs}

        # Commit: existing tracks first, then births in detection order.
        used_dets: dict[int, int] = {}
        committed = []
        for o in sorted(merged.outputs, key=lambda o: (-o.hits, o.id)):
            j, st = proposals[sources[o.id]][o.id]
            if j in used_dets:
                continue
            used_dets[j] = o.id
            committed.append((o, j, st))

        updated: set[int] = set()
        outputs: list[TrackOutput] = []
        births = []
        for o, j, st in committed:
            d = dets[j]
            if o.id > 0:
                t = by_id[o.id]
                t.kalman = st
                if cfg.use_memory:
                    t.bank = admit(t.bank, MemorySlot(np.asarray(d.embedding, float), float(d.score), frame), cfg.theta_sim)
                t.query = np.asarray(d.embedding, float)
                t.last_score = float(d.score)
                t.hits += 1
                t.time_since_update = 0
                t.state = TrackState.ACTIVE
                t.provenance = o.provenance
                updated.add(t.id)
                outputs.append(o._replace(hits=t.hits))
            else:
                births.append((j, o))

        n_removed = 0
        for t in live:
            if t.id in updated:
                continue
            t.kalman = predicted[t.id]
            t.time_since_update += 1
            t.state = TrackState.LOST
            if t.time_since_update > cfg.max_age:
                t.state = TrackState.REMOVED
                self.removed_ids.add(t.id)
                n_removed += 1

        new_tracks = []
        for j, o in sorted(births, key=lambda b: b[0]):
            d = dets[j]
            tid = self.next_id
            self.next_id += 1
            bank = MemoryBank(cfg.n_m)
            if cfg.use_memory:
                bank = admit(bank, MemorySlot(np.asarray(d.embedding, float), float(d.score), frame), cfg.theta_sim)
            t = Tracklet(tid, kalman_initiate(d.box, self.noise, cfg.cyclic), bank,
                         np.asarray(d.embedding, float), float(d.score), provenance=o.provenance)
            new_tracks.append(t)
            outputs.append(TrackOutput(tid, d.box, float(d.score), o.provenance, 1))

        self.tracks = [t for t in live if t.state != TrackState.REMOVED] + new_tracks
        if cfg.emit_lost:
            for t in self.tracks:
                if t.state == TrackState.LOST:
                    outputs.append(TrackOutput(t.id, t.kalman.box, t.last_score, t.provenance, t.hits))
        outputs.sort(key=lambda o: o.id)

        diagnostics = {
            "branches": "+".join(sorted(b.value for b in branches)),
            "n_detections": len(dets),
            "n_claimed": len(claimed.D_F) if claimed is not None else 0,
            "n_update": len(updated),
            "n_init": len(new_tracks),
            "n_delete": len(dets) - len(updated) - len(new_tracks),
            "n_removed": n_removed,
            "n_live": len(self.tracks),
            "cost_matrices": self.cost_matrix_count - cm_before,
        }
        return FrameResult(frame, outputs, diagnostics)

    def run(self, frames: Iterable[tuple[int, list[Detection]]]) -> list[FrameResult]:
        return [self.step(f, d) for f, d in frames]


def _refine(dets: list[Detection], dssm) -> np.ndarray:
    from .dssm import refine_embeddings
    return refine_embeddings(box_array([d.box for d in dets]), embedding_array([d.embedding for d in dets]), dssm)
