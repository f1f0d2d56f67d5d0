"""Trajectory feedback: entropy accounting, FlexiTrack instances and detection claiming.

Entropies are in nats.  A joint table is indexed ``joint[i, j] = P(x = i, y = j)``
with ``x`` the current-frame detection variable and ``y`` the previous-frame
feedback variable.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .association import AssocConfig, Detection, box_array, cosine_matrix, embedding_array
from .geometry import DEFAULT_NOISE, CyclicKalmanState, NoiseConfig, PanoBox, iou_matrix, kalman_predict_many
from .memory import MoeParams, enhance_many
from .rng import CounterRNG

MASS_TOL = 1e-9


def _check_mass(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("distribution entries must be finite and non-negative")
    if abs(p.sum() - 1.0) > MASS_TOL:
        raise ValueError(f"distribution mass is {p.sum()!r}, expected 1")
    return p


def _plogp(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy(p) -> float:
    p = _check_mass(p)
    return float(-_plogp(p.ravel()).sum())


def conditional_entropy(joint) -> float:
    """H(x | y) for a joint table over (x_t, y_{t-1})."""
    joint = _check_mass(joint)
    if joint.ndim != 2:
        raise ValueError("joint table must be two-dimensional")
    p_y = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    ratio = np.ones_like(joint)
    ratio[nz] = joint[nz] / np.broadcast_to(p_y, joint.shape)[nz]
    return float(max(-(joint[nz] * np.log(ratio[nz])).sum(), 0.0))


def feedback_gain(joints: Sequence) -> float:
    """Summed per-frame drop from H(x_t) to H(x_t | y_{t-1}); the mutual information over frames.

    The global association term of the independent pipeline is a shared offset
    and is left out.
    """
    if len(joints) == 0:
        raise ValueError("need at least one frame")
    total = 0.0
    for joint in joints:
        joint = _check_mass(joint)
        total += entropy(joint.sum(axis=1)) - conditional_entropy(joint)
    return total


# --- FlexiTrack instances ------------------------------------------------------------


def encode_anchors(boxes: np.ndarray, c_s: int = 32) -> np.ndarray:
    """Row-wise sinusoidal encoding of ``(N, 4)`` boxes; integer frequencies keep ``cu`` periodic."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    per = c_s // 4
    n_freq = per // 2
    ang = boxes[:, :, None] * (2.0 * np.pi * (2.0 ** np.arange(n_freq)))
    out = np.zeros((len(boxes), 4, per))
    out[:, :, :n_freq] = np.sin(ang)
    out[:, :, n_freq:2 * n_freq] = np.cos(ang)
    return np.concatenate([out.reshape(len(boxes), 4 * per), np.zeros((len(boxes), c_s - 4 * per))], axis=1)


def encode_anchor(box: PanoBox, c_s: int = 32) -> np.ndarray:
    return encode_anchors(box.as_array(), c_s)[0]


@dataclass(frozen=True, eq=False)
class FlexiTrackInstance:
    track_id: int
    X: np.ndarray
    Y_box: PanoBox
    Y_enc: np.ndarray
    score: float
    state: CyclicKalmanState | None = None  # predicted motion state behind Y_box


def make_instances(
    tracks,
    moe: MoeParams | None,
    c_s: int = 32,
    use_memory: bool = True,
    noise: NoiseConfig = DEFAULT_NOISE,
) -> list[FlexiTrackInstance]:
    """One instance per track: memory-enhanced feature plus the motion-predicted anchor.

    Tracks need ``id``, ``kalman``, ``bank``, ``query`` (latest embedding) and
    ``last_score`` attributes.  With ``use_memory=False`` the feature is the
    raw latest embedding.
    """
    tracks = list(tracks)
    states = kalman_predict_many([t.kalman for t in tracks], noise)
    if use_memory and tracks:
        feats = enhance_many([t.bank for t in tracks], [t.query for t in tracks], moe)
    else:
        feats = [np.asarray(t.query, dtype=float).copy() for t in tracks]
    boxes = [s.box for s in states]
    enc = encode_anchors(np.array([b.as_array() for b in boxes]), c_s)
    return [FlexiTrackInstance(t.id, X, box, e, float(t.last_score), state)
            for t, state, X, box, e in zip(tracks, states, feats, boxes, enc)]


def perturb(inst: FlexiTrackInstance, sigma_x: float, sigma_y: float, rng: CounterRNG) -> FlexiTrackInstance:
    """Additive Gaussian noise on the feature and on the anchor box (scaled by box size), then re-encode."""
    if sigma_x < 0 or sigma_y < 0:
        raise ValueError("noise scales must be non-negative")
    if sigma_x == 0 and sigma_y == 0:
        return inst
    X = inst.X + sigma_x * rng.normal(inst.X.shape) if sigma_x else inst.X.copy()
    box = inst.Y_box
    if sigma_y:
        n = rng.normal(4)
        box = PanoBox.from_array([
            box.cu + sigma_y * box.w * n[0],
            box.cv + sigma_y * box.h * n[1],
            box.w * np.exp(sigma_y * n[2]),
            box.h * np.exp(sigma_y * n[3]),
        ])
    return dataclasses.replace(inst, X=X, Y_box=box, Y_enc=encode_anchor(box, len(inst.Y_enc)))


# --- detection claiming --------------------------------------------------------------


class Claim(NamedTuple):
    track_id: int
    det_index: int
    score: float
    similarity: float


class Unclaimed(NamedTuple):
    det_index: int
    score: float


@dataclass
class ClaimedDetections:
    D_F: list[Claim]
    D_L: list[Unclaimed]

    @property
    def claimed_tracks(self) -> set[int]:
        return {c.track_id for c in self.D_F}


def claim_similarity(instances, detections, cfg: AssocConfig = AssocConfig()):
    """Similarity ``1 - hybrid cost`` between instances and detections plus the gate mask."""
    iou = iou_matrix(box_array([i.Y_box for i in instances]),
                     box_array([d.box for d in detections]), cyclic=cfg.cyclic)
    cos = cosine_matrix(embedding_array([i.X for i in instances]),
                        embedding_array([d.embedding for d in detections]))
    cost = cfg.w_iou * (1.0 - iou) + cfg.w_app * (1.0 - cos) / 2.0
    mask = (iou <= 0.0) & (cos < cfg.app_gate)
    return 1.0 - cost, mask


def claim_detections(
    instances: Sequence[FlexiTrackInstance],
    detections: Sequence[Detection],
    gate: float = 0.4,
    cfg: AssocConfig = AssocConfig(),
) -> ClaimedDetections:
    """Deterministic stand-in for the decoder: each instance claims at most one detection.

    The one-to-one assignment minimizes the hybrid cost; pairs whose similarity
    reaches ``gate`` are claimed with score ``detection score * similarity``.
    """
    claims: list[Claim] = []
    taken: set[int] = set()
    if instances and detections:
        sim, mask = claim_similarity(instances, detections, cfg)
        rows, cols = linear_sum_assignment(np.where(mask, 1e6, 1.0 - sim))
        for r, k in zip(rows, cols):
            if mask[r, k] or sim[r, k] < gate:
                continue
            s = float(sim[r, k])
            claims.append(Claim(instances[r].track_id, int(k), float(detections[k].score) * s, s))
            taken.add(int(k))
    unclaimed = [Unclaimed(j, float(d.score)) for j, d in enumerate(detections) if j not in taken]
    return ClaimedDetections(claims, unclaimed)
