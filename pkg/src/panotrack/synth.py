"""Synthetic panoramic sequences with ground truth, noisy detections and identity embeddings.

Targets move on the unit cylinder at a constant angular velocity plus an
azimuth random walk.  Camera ego-motion displaces every box vertically
(``gait``: sinusoidal bob) or shears it by ``pitch * cos(2 pi cu)``
(``pitch``).  A target is hidden when a nearer target covers it with cyclic
IoU above ``occlusion_iou``.

Random draws come from :class:`panotrack.rng.CounterRNG` on fixed streams, so
sequences are bit-identical across runs and platforms:

==========  =======================================
stream      use
==========  =======================================
1           target layout and identity means
2           azimuth random walk (one draw per target per frame)
3           ego-motion jitter (four draws per frame, indexed by frame)
4           detection dropout, jitter, score and embedding noise (all targets per frame)
5           clutter
==========  =======================================
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import Detection
from .geometry import PanoBox, iou_matrix
from .rng import CounterRNG

REGIMES = ("smooth", "gait", "pitch")


@dataclass(frozen=True)
class ScenarioConfig:
    n_targets: int = 12
    seq_len: int = 600
    motion_regime: str = "gait"
    gait_amp: float = 0.02
    gait_freq: float = 0.1
    pitch_amp: float = 0.02
    pitch_freq: float = 0.05
    ego_jitter: float = 0.0
    p_miss: float = 0.1
    clutter_rate: float = 0.5
    jitter_sigma: float = 0.05
    embed_dim: int = 32
    embed_noise: float = 0.15
    distortion_gain: float = 0.3
    seed: int = 7
    # layout
    speed_mean: float = 0.003
    speed_std: float = 0.0015
    walk_sigma: float = 0.0005
    cv_spread: float = 0.03
    box_w: float = 0.03
    box_h: float = 0.25
    size_spread: float = 0.1
    start_cu: float | None = None
    birth_spread: float = 0.0  # births uniform over the first birth_spread * seq_len frames
    lifespan: int = 0  # mean frames on screen; 0 keeps every target for the whole sequence
    occlusion_iou: float = 0.6
    # detector
    score_mean: float = 0.75
    score_std: float = 0.12
    clutter_score: tuple[float, float] = (0.05, 0.5)

    def __post_init__(self):
        if self.motion_regime not in REGIMES:
            raise ValueError(f"motion_regime must be one of {REGIMES}")
        if self.n_targets < 0 or self.seq_len < 1:
            raise ValueError("need n_targets >= 0 and seq_len >= 1")
        for name in ("gait_amp", "pitch_amp", "ego_jitter", "clutter_rate", "jitter_sigma", "embed_noise",
                     "distortion_gain", "speed_std", "walk_sigma", "cv_spread", "size_spread", "score_std",
                     "birth_spread", "lifespan"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.p_miss <= 1.0:
            raise ValueError("p_miss must lie in [0, 1]")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be positive")


@dataclass
class SyntheticSequence:
    cfg: ScenarioConfig
    gt: dict[int, list[tuple[int, PanoBox]]]
    detections: dict[int, list[Detection]]
    true_ids: dict[int, list[int]]  # per detection; -1 for clutter
    ego: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (seq_len, 2): dz, pitch
    paths: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 4)))  # (seq_len, n_targets, 4) before occlusion

    def frames(self):
        """``(frame, detections)`` pairs in order, as consumed by the tracker."""
        return [(f, self.detections[f]) for f in sorted(self.detections)]


def ego_noise(t: int, cfg: ScenarioConfig) -> tuple[float, float]:
    """Camera displacement ``(dz, pitch)`` at frame ``t``."""
    if cfg.motion_regime == "smooth":
        return 0.0, 0.0
    j = np.zeros(2)
    if cfg.ego_jitter > 0:
        rng = CounterRNG(cfg.seed, stream=3)
        rng.counter = 4 * int(t)
        j = cfg.ego_jitter * rng.normal(2)
    if cfg.motion_regime == "gait":
        dz = cfg.gait_amp * np.sin(2.0 * np.pi * cfg.gait_freq * t)
        return float(dz + j[0]), float(j[1])
    pitch = cfg.pitch_amp * np.sin(2.0 * np.pi * cfg.pitch_freq * t)
    return float(j[0]), float(pitch + j[1])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate(cfg: ScenarioConfig) -> SyntheticSequence:
    n, T, c = cfg.n_targets, cfg.seq_len, cfg.embed_dim
    layout = CounterRNG(cfg.seed, stream=1)
    walk = CounterRNG(cfg.seed, stream=2)
    det_rng = CounterRNG(cfg.seed, stream=4)
    clutter = CounterRNG(cfg.seed, stream=5)

    if cfg.start_cu is None:
        cu0 = layout.uniform(n)
    else:
        cu0 = (cfg.start_cu + np.arange(n) / max(n, 1)) % 1.0
    sign = np.where(layout.uniform(n) < 0.5, -1.0, 1.0)
    speed = sign * np.abs(cfg.speed_mean + cfg.speed_std * layout.normal(n))
    cv0 = 0.5 + cfg.cv_spread * layout.normal(n)
    scale = np.exp(cfg.size_spread * layout.normal(n))
    depth = layout.uniform(n, 1.0, 10.0)
    means = _unit(layout.normal((n, c))) if n else np.zeros((0, c))
    distort_dir = _unit(layout.normal(c))
    birth = np.floor(layout.uniform(n) * cfg.birth_spread * T).astype(int)
    life = layout.uniform(n, 0.5, 1.5)
    death = birth + np.maximum(1, (life * cfg.lifespan).astype(int)) if cfg.lifespan else np.full(n, T)

    paths = np.zeros((T, n, 4))
    ego = np.zeros((T, 2))
    cu = cu0.copy()
    for t in range(T):
        dz, pitch = ego_noise(t, cfg)
        ego[t] = dz, pitch
        if t:
            cu = (cu + speed + cfg.walk_sigma * walk.normal(n)) % 1.0
            cu[cu >= 1.0] = 0.0
        cv = cv0 + dz + pitch * np.cos(2.0 * np.pi * cu)
        paths[t, :, 0] = cu
        paths[t, :, 1] = np.clip(cv, 0.0, 1.0)
        paths[t, :, 2] = np.minimum(cfg.box_w * scale, 1.0)
        paths[t, :, 3] = np.minimum(cfg.box_h * scale, 1.0)

    order = np.argsort(depth, kind="stable")  # nearest first
    gt: dict[int, list[tuple[int, PanoBox]]] = {}
    dets: dict[int, list[Detection]] = {}
    tids: dict[int, list[int]] = {}
    lo, hi = cfg.clutter_score
    for t in range(T):
        f = t + 1
        boxes = paths[t]
        alive = (birth[order] <= t) & (t < death[order])
        over = np.tril(iou_matrix(boxes[order], boxes[order]) > cfg.occlusion_iou, -1) & alive[None, :]
        covered = over.any(axis=1) | ~alive
        visible = sorted(int(i) for i in order[~covered])
        gt[f] = [(i + 1, PanoBox.from_array(boxes[i])) for i in visible]

        # fixed draw count per frame (all targets), so visibility never shifts the stream
        miss = det_rng.uniform(n)
        zs = det_rng.normal((n, 5))
        es = det_rng.normal((n, c))
        kept = np.array([i for i in visible if not miss[i] < cfg.p_miss], dtype=int)
        b = boxes[kept]
        z = zs[kept]
        js = cfg.jitter_sigma
        if js:
            b = np.stack([b[:, 0] + js * b[:, 2] * z[:, 0], b[:, 1] + js * b[:, 3] * z[:, 1],
                          b[:, 2] * np.exp(js * z[:, 2]), b[:, 3] * np.exp(js * z[:, 3])], axis=1)
        scores = np.clip(cfg.score_mean + cfg.score_std * z[:, 4], 0.01, 1.0).tolist()
        embs = (means[kept] + cfg.embed_noise * es[kept]
                + cfg.distortion_gain * np.abs(b[:, 1] - 0.5)[:, None] * distort_dir)
        frame_dets = [Detection(PanoBox.from_array(bb), sc, e) for bb, sc, e in zip(b, scores, embs)]
        frame_ids = (kept + 1).tolist()

        for _ in range(clutter.poisson(cfg.clutter_rate)):
            u = clutter.uniform(5)
            b = np.array([u[0], 0.5 + 4 * cfg.cv_spread * (u[1] - 0.5),
                          cfg.box_w * (0.7 + 0.6 * u[2]), cfg.box_h * (0.7 + 0.6 * u[3])])
            emb = _unit(clutter.normal(c))
            frame_dets.append(Detection(PanoBox.from_array(b), float(lo + (hi - lo) * u[4]), emb))
            frame_ids.append(-1)
        dets[f] = frame_dets
        tids[f] = frame_ids
    return SyntheticSequence(cfg, gt, dets, tids, ego, paths)


def wrap_events(cu: np.ndarray) -> int:
    """Number of seam crossings in an azimuth series."""
    d = np.diff(np.asarray(cu, dtype=float))
    return int(np.sum(np.abs(d) > 0.5))
