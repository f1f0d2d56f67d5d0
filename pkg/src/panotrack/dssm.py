"""DynamicSSM feature block on small ``(C, H, W)`` maps.

Four stages: per-location distortion/scale estimation, distortion-aware
modulation with 3x3 mixing, a multi-directional scalar-state scan, and a
residual fusion.  The width axis is the panoramic azimuth, so horizontal
padding wraps; vertical padding reflects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import CounterRNG

DIRECTIONS = ("L2R", "R2L", "T2B", "B2T")


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Per-location channel projection ``y = weight @ x + bias`` (a 1x1 convolution)."""

    weight: np.ndarray  # (C_out, C_in)
    bias: np.ndarray  # (C_out,)

    @classmethod
    def identity(cls, c: int) -> "LinearMap":
        return cls(np.eye(c), np.zeros(c))

    @classmethod
    def zeros(cls, c: int) -> "LinearMap":
        return cls(np.zeros((c, c)), np.zeros(c))

    def __call__(self, f: np.ndarray) -> np.ndarray:
        if f.shape[0] != self.weight.shape[1]:
            raise ValueError(f"channel mismatch: map expects {self.weight.shape[1]}, got {f.shape[0]}")
        return np.einsum("oc,chw->ohw", self.weight, f) + self.bias[:, None, None]


@dataclass(frozen=True, eq=False)
class SsmParams:
    A: np.ndarray  # (C,) negative decay rates
    delta_proj: np.ndarray  # (C, C)
    B_proj: np.ndarray  # (C, C)
    C_proj: np.ndarray  # (C, C)
    L: int = 4

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if np.any(A >= 0):
            raise ValueError("A must be strictly negative")
        if self.L not in (1, 2, 4):
            raise ValueError(f"L must be 1, 2 or 4, got {self.L}")


@dataclass(frozen=True, eq=False)
class DssmParams:
    est_d: LinearMap
    est_s: LinearMap
    ssm: SsmParams
    fuse: LinearMap

    @classmethod
    def seeded(cls, c: int, seed: int = 0, L: int = 4, scale: float = 0.1) -> "DssmParams":
        rng = CounterRNG(seed, stream=202)
        s = scale / np.sqrt(c)

        def lin():
            return LinearMap(s * rng.normal((c, c)), np.zeros(c))

        ssm = SsmParams(
            A=-np.ones(c),
            delta_proj=s * rng.normal((c, c)),
            B_proj=np.eye(c) + s * rng.normal((c, c)),
            C_proj=np.eye(c) + s * rng.normal((c, c)),
            L=L,
        )
        return cls(lin(), lin(), ssm, LinearMap(np.eye(c) + s * rng.normal((c, c)), np.zeros(c)))

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "est_d.weight": self.est_d.weight, "est_d.bias": self.est_d.bias,
            "est_s.weight": self.est_s.weight, "est_s.bias": self.est_s.bias,
            "ssm.A": np.asarray(self.ssm.A, float), "ssm.delta_proj": self.ssm.delta_proj,
            "ssm.B_proj": self.ssm.B_proj, "ssm.C_proj": self.ssm.C_proj,
            "ssm.L": np.array([self.ssm.L], dtype=float),
            "fuse.weight": self.fuse.weight, "fuse.bias": self.fuse.bias,
        }

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "DssmParams":
        return cls(
            LinearMap(a["est_d.weight"], a["est_d.bias"]),
            LinearMap(a["est_s.weight"], a["est_s.bias"]),
            SsmParams(a["ssm.A"], a["ssm.delta_proj"], a["ssm.B_proj"], a["ssm.C_proj"], int(a["ssm.L"][0])),
            LinearMap(a["fuse.weight"], a["fuse.bias"]),
        )


def _check_map(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim != 3 or min(f.shape) < 1:
        raise ValueError(f"feature map must have shape (C, H, W) with all dims >= 1, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("feature map has non-finite entries")
    return f


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def estimate_distortion_scale(f: np.ndarray, est_d: LinearMap, est_s: LinearMap):
    """Returns ``(D, S)``: a linear distortion field and a sigmoid scale prior."""
    f = _check_map(f)
    return est_d(f), sigmoid(est_s(f))


def pad_panoramic(x: np.ndarray) -> np.ndarray:
    """One-cell border: reflect along rows, wrap along columns."""
    x = np.pad(x, ((0, 0), (1, 1), (0, 0)), mode="reflect")
    return np.pad(x, ((0, 0), (0, 0), (1, 1)), mode="wrap")


def box3(x: np.ndarray) -> np.ndarray:
    """3x3 mean with panoramic padding."""
    H, W = x.shape[1:]
    p = pad_panoramic(x)
    acc = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            acc += p[:, dy:dy + H, dx:dx + W]
    return acc / 9.0


def dynamic_modulate(D: np.ndarray, S: np.ndarray, f: np.ndarray) -> np.ndarray:
    f = _check_map(f)
    if D.shape != f.shape or S.shape != f.shape:
        raise ValueError("distortion/scale maps must match the feature map shape")
    return box3(f * (1.0 + D * S))


def _scan_l2r(z: np.ndarray, p: SsmParams) -> np.ndarray:
    C, H, W = z.shape
    A = np.broadcast_to(np.asarray(p.A, dtype=float), (C,))[:, None]
    h = np.zeros((C, H))
    y = np.empty_like(z)
    for t in range(W):
        x = z[:, :, t]
        delta = softplus(p.delta_proj @ x)
        h = np.exp(A * delta) * h + delta * (p.B_proj @ x)
        y[:, :, t] = p.C_proj @ h
    return y


def directional_scan(z: np.ndarray, direction: str, p: SsmParams) -> np.ndarray:
    """Scalar-state selective scan along one axis; reverse directions are flip-scan-flip."""
    z = _check_map(z)
    if direction == "L2R":
        return _scan_l2r(z, p)
    if direction == "R2L":
        return _scan_l2r(z[:, :, ::-1], p)[:, :, ::-1]
    if direction == "T2B":
        return _scan_l2r(z.transpose(0, 2, 1), p).transpose(0, 2, 1)
    if direction == "B2T":
        return _scan_l2r(z[:, ::-1, :].transpose(0, 2, 1), p).transpose(0, 2, 1)[:, ::-1, :]
    raise ValueError(f"unknown scan direction {direction!r}")


def multi_directional(z: np.ndarray, p: SsmParams) -> np.ndarray:
    outs = [directional_scan(z, d, p) for d in DIRECTIONS[: p.L]]
    return sum(outs[1:], outs[0]) / p.L


def fuse(residual: np.ndarray, z_star: np.ndarray, fuse_map: LinearMap) -> np.ndarray:
    if residual.shape != z_star.shape:
        raise ValueError(f"shape mismatch: {residual.shape} vs {z_star.shape}")
    return fuse_map(residual + z_star)


def dynamic_ssm_block(f: np.ndarray, params: DssmParams) -> np.ndarray:
    """Full block: estimate, modulate, scan, fuse with the identity residual branch."""
    f = _check_map(f)
    D, S = estimate_distortion_scale(f, params.est_d, params.est_s)
    z = dynamic_modulate(D, S, f)
    return fuse(f, multi_directional(z, params.ssm), params.fuse)


def refine_embeddings(boxes: np.ndarray, embeddings: np.ndarray, params: DssmParams,
                      grid: tuple[int, int] = (8, 64)) -> np.ndarray:
    """Rasterize detection embeddings onto a panoramic grid, run the block, read back a context correction.

    Each embedding receives ``block(F)[cell] - F[cell]`` at its center cell, so
    collocated detections keep their individual identity component.
    """
    if len(boxes) == 0:
        return np.asarray(embeddings, dtype=float)
    H, W = grid
    E = np.asarray(embeddings, dtype=float)
    C = E.shape[1]
    rows = np.clip((np.asarray(boxes)[:, 1] * H).astype(int), 0, H - 1)
    cols = np.clip((np.asarray(boxes)[:, 0] * W).astype(int), 0, W - 1)
    f = np.zeros((C, H, W))
    count = np.zeros((H, W))
    for e, r, c in zip(E, rows, cols):
        f[:, r, c] += e
        count[r, c] += 1
    f = f / np.maximum(count, 1.0)
    out = dynamic_ssm_block(f, params)
    return E + (out - f)[:, rows, cols].T
