"""Cyclic geometry on the panoramic cylinder.

Azimuth is normalized to [0, 1) and wraps; the vertical axis is linear.
Boxes are stored in center form ``(cu, cv, w, h)``.  Hot paths work on
``(N, 4)`` float arrays with the same column order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np


def canon(x: float) -> float:
    """Map an azimuth onto [0, 1).  Guards the float ``%`` edge that yields 1.0."""
    r = x % 1.0
    return 0.0 if r >= 1.0 else r


@dataclass(frozen=True, slots=True)
class PanoBox:
    cu: float
    cv: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cu, self.cv, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if not 0.0 <= self.cv <= 1.0:
            raise ValueError(f"cv out of [0, 1]: {self.cv}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box extent out of (0, 1]: w={self.w}, h={self.h}")
        object.__setattr__(self, "cu", canon(float(self.cu)))

    def as_array(self) -> np.ndarray:
        return np.array([self.cu, self.cv, self.w, self.h])

    @classmethod
    def from_array(cls, a) -> "PanoBox":
        """Build a box from a possibly out-of-range state vector (clamped)."""
        cu, cv, w, h = map(float, a[:4].tolist() if isinstance(a, np.ndarray) else a[:4])
        if not (math.isfinite(cu) and math.isfinite(cv) and math.isfinite(w) and math.isfinite(h)):
            raise ValueError(f"non-finite box coordinates: {(cu, cv, w, h)}")
        # clamped values are valid by construction, so skip the checks in __post_init__
        box = object.__new__(cls)
        object.__setattr__(box, "cu", canon(cu))
        object.__setattr__(box, "cv", min(max(cv, 0.0), 1.0))
        object.__setattr__(box, "w", min(max(w, 1e-6), 1.0))
        object.__setattr__(box, "h", min(max(h, 1e-6), 1.0))
        return box

    def shifted(self, s: float) -> "PanoBox":
        return PanoBox(self.cu + s, self.cv, self.w, self.h)


# Displacements this close to half a turn count as antipodal (decimal inputs such
# as 0.2 and 0.7 are not exactly 0.5 apart in binary).
ANTIPODE_TOL = 1e-12


def wrap_delta(a: float, b: float) -> float:
    """Signed shortest azimuthal displacement from ``b`` to ``a``, in [-0.5, 0.5)."""
    r = (a - b + 0.5) % 1.0
    if r >= 1.0 or r < ANTIPODE_TOL or r > 1.0 - ANTIPODE_TOL:
        r = 0.0
    return r - 0.5


def wrap_delta_array(a, b) -> np.ndarray:
    r = np.mod(np.asarray(a, dtype=float) - b + 0.5, 1.0)
    r = np.where((r >= 1.0) | (r < ANTIPODE_TOL) | (r > 1.0 - ANTIPODE_TOL), 0.0, r)
    return r - 0.5


def _arc_overlap(ca, wa, cb, wb):
    # Sum of linear overlaps of A against B shifted by -1, 0, +1; exact on the
    # circle while both arcs are at most one full turn.
    total = 0.0
    for k in (-1.0, 0.0, 1.0):
        total = total + _lin_overlap(ca, wa, cb + k, wb)
    return np.minimum(total, np.minimum(wa, wb))


def _arc_overlap_short(ca, wa, cb, wb):
    # Valid when wa + wb <= 1: two such arcs meet in at most one interval.
    r = np.mod(ca - cb + 0.5, 1.0)
    d = np.abs(np.where(r >= 1.0, 0.0, r) - 0.5)
    return np.clip(np.minimum((wa + wb) / 2 - d, np.minimum(wa, wb)), 0.0, None)


def _lin_overlap(ca, wa, cb, wb):
    # center-distance form: identical intervals overlap by exactly their width
    return np.clip(np.minimum((wa + wb) / 2 - np.abs(ca - cb), np.minimum(wa, wb)), 0.0, None)


def cyclic_iou(a: PanoBox, b: PanoBox) -> float:
    """IoU on the cylinder: azimuth intervals intersect modulo 1, vertical linearly."""
    inter = float(_arc_overlap(a.cu, a.w, b.cu, b.w)) * float(_lin_overlap(a.cv, a.h, b.cv, b.h))
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def _clamp_interval(c, w):
    lo = np.clip(c - w / 2, 0.0, 1.0)
    hi = np.clip(c + w / 2, 0.0, 1.0)
    return lo, hi


def clamped_iou(a: PanoBox, b: PanoBox) -> float:
    """Flat-image IoU: azimuth treated as a clamped linear axis (no wrap)."""
    return float(iou_matrix(a.as_array()[None], b.as_array()[None], cyclic=False)[0, 0])


def iou_matrix(a: np.ndarray, b: np.ndarray, cyclic: bool = True) -> np.ndarray:
    """Pairwise IoU between box arrays of shape ``(N, 4)`` and ``(M, 4)``."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    A = a[:, None, :]
    B = b[None, :, :]
    inter_v = _lin_overlap(A[..., 1], A[..., 3], B[..., 1], B[..., 3])
    if cyclic:
        short = a[:, 2].max() + b[:, 2].max() <= 1.0
        inter_u = (_arc_overlap_short if short else _arc_overlap)(A[..., 0], A[..., 2], B[..., 0], B[..., 2])
        area_a = A[..., 2] * A[..., 3]
        area_b = B[..., 2] * B[..., 3]
    else:
        alo, ahi = _clamp_interval(A[..., 0], A[..., 2])
        blo, bhi = _clamp_interval(B[..., 0], B[..., 2])
        inter_u = np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None)
        area_a = (ahi - alo) * A[..., 3]
        area_b = (bhi - blo) * B[..., 3]
    inter = inter_u * inter_v
    union = area_a + area_b - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


# --- constant-velocity Kalman filter -------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    """Standard deviations, in normalized panoramic units per frame."""

    pos: float = 0.002
    size: float = 0.001
    vel: float = 0.0008
    size_vel: float = 0.0002
    meas_pos: float = 0.003
    meas_size: float = 0.003
    init_pos: float = 0.005
    init_vel: float = 0.01


DEFAULT_NOISE = NoiseConfig()

_F = np.eye(8)
_F[np.arange(4), np.arange(4) + 4] = 1.0
_H = np.eye(4, 8)


@dataclass(frozen=True, eq=False)
class CyclicKalmanState:
    mean: np.ndarray
    covariance: np.ndarray
    cyclic: bool = True

    @cached_property
    def box(self) -> PanoBox:
        m = self.mean[:4]
        if not self.cyclic:
            m = m.copy()
            m[0] = min(max(m[0], 0.0), 1.0 - 1e-9)
        return PanoBox.from_array(m)

    @property
    def box_array(self) -> np.ndarray:
        """Measurement-space vector without clamping (for vectorized cost building)."""
        return self.mean[:4].copy()


def kalman_initiate(box: PanoBox, noise: NoiseConfig = DEFAULT_NOISE, cyclic: bool = True) -> CyclicKalmanState:
    mean = np.r_[box.as_array(), np.zeros(4)]
    std = np.array([noise.init_pos, noise.init_pos, noise.init_pos, noise.init_pos,
                    noise.init_vel, noise.init_vel, noise.init_vel / 4, noise.init_vel / 4])
    return CyclicKalmanState(mean, np.diag(std**2), cyclic)


@lru_cache(maxsize=32)
def _process_cov(noise: NoiseConfig) -> np.ndarray:
    return np.diag(np.array([noise.pos, noise.pos, noise.size, noise.size,
                             noise.vel, noise.vel, noise.size_vel, noise.size_vel]) ** 2)


@lru_cache(maxsize=32)
def _meas_cov(noise: NoiseConfig) -> np.ndarray:
    return np.diag(np.array([noise.meas_pos, noise.meas_pos, noise.meas_size, noise.meas_size]) ** 2)


def kalman_predict_many(states, noise: NoiseConfig = DEFAULT_NOISE) -> list[CyclicKalmanState]:
    """Vectorized one-step prediction for a list of states."""
    if not states:
        return []
    M = np.stack([s.mean for s in states]) @ _F.T
    P = _F @ np.stack([s.covariance for s in states]) @ _F.T + _process_cov(noise)
    P = 0.5 * (P + P.transpose(0, 2, 1))
    out = []
    for s, m, p in zip(states, M, P):
        if s.cyclic:
            m[0] = canon(m[0])
        out.append(CyclicKalmanState(m, p, s.cyclic))
    return out


def kalman_predict(state: CyclicKalmanState, noise: NoiseConfig = DEFAULT_NOISE) -> CyclicKalmanState:
    return kalman_predict_many([state], noise)[0]


def kalman_update(
    state: CyclicKalmanState, measurement: PanoBox | np.ndarray, noise: NoiseConfig = DEFAULT_NOISE
) -> CyclicKalmanState:
    return kalman_update_many([state], [measurement], noise)[0]


def kalman_update_many(states, measurements, noise: NoiseConfig = DEFAULT_NOISE) -> list[CyclicKalmanState]:
    """Vectorized measurement update; the azimuth innovation is the wrapped displacement."""
    if not states:
        return []
    Z = np.array([m.as_array() if isinstance(m, PanoBox) else np.asarray(m, dtype=float).reshape(4)
                  for m in measurements])
    if not np.all(np.isfinite(Z)):
        raise ValueError("non-finite measurement")
    M = np.stack([s.mean for s in states])
    P = np.stack([s.covariance for s in states])
    cyc = np.array([s.cyclic for s in states])
    innovation = Z - M[:, :4]
    innovation[cyc, 0] = wrap_delta_array(Z[cyc, 0], M[cyc, 0])
    R = _meas_cov(noise)
    S = P[:, :4, :4] + R
    K = np.linalg.solve(S, P[:, :4, :].copy()).transpose(0, 2, 1)  # (n, 8, 4)
    M = M + np.einsum("nij,nj->ni", K, innovation)
    # Joseph form keeps the posterior symmetric positive-definite.
    IKH = np.eye(8) - K @ _H
    P = IKH @ P @ IKH.transpose(0, 2, 1) + K @ R @ K.transpose(0, 2, 1)
    P = 0.5 * (P + P.transpose(0, 2, 1))
    out = []
    for s, m, p in zip(states, M, P):
        if s.cyclic:
            m[0] = canon(m[0])
        out.append(CyclicKalmanState(m, p, s.cyclic))
    return out
