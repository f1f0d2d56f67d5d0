"""Per-track expert memory.

Each track owns a :class:`MemoryBank` split into a confidence-ranked stable
half (SIM) and a recency-ordered dynamic half (DIM).  Retrieval routes the
top-``K_r`` slots by cosine similarity, a shared mixture of experts adapts
the query, and a gated soft selection over the routed slots supplies the
personal component; the two are blended by ``lambda``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .rng import CounterRNG


@dataclass(frozen=True, eq=False)
class MemorySlot:
    embedding: np.ndarray
    confidence: float
    frame: int


@dataclass(frozen=True, eq=False)
class MemoryBank:
    n_m: int = 8
    sim: tuple[MemorySlot, ...] = ()
    dim: tuple[MemorySlot, ...] = ()

    def __post_init__(self):
        if self.n_m < 2 or self.n_m % 2:
            raise ValueError(f"n_m must be an even positive integer, got {self.n_m}")

    @property
    def half(self) -> int:
        return self.n_m // 2

    @property
    def slots(self) -> tuple[MemorySlot, ...]:
        return self.sim + self.dim

    def __len__(self) -> int:
        return len(self.sim) + len(self.dim)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Slot embeddings stacked in ``slots`` order."""
        return np.stack([s.embedding for s in self.slots])


def admit(bank: MemoryBank, slot: MemorySlot, theta_sim: float = 0.7) -> MemoryBank:
    """Hierarchical memory controller: high confidence to SIM, the rest to DIM."""
    half = bank.half
    if slot.confidence >= theta_sim:
        if len(bank.sim) < half:
            return MemoryBank(bank.n_m, _insert_ranked(bank.sim, slot), bank.dim)
        if slot.confidence > bank.sim[-1].confidence:
            return MemoryBank(bank.n_m, _insert_ranked(bank.sim[:-1], slot), bank.dim)
    dim = bank.dim + (slot,)
    if len(dim) > half:
        dim = dim[len(dim) - half:]
    return MemoryBank(bank.n_m, bank.sim, dim)


def _insert_ranked(sim, slot):
    # stable: equal confidences keep arrival order
    i = 0
    while i < len(sim) and sim[i].confidence >= slot.confidence:
        i += 1
    return sim[:i] + (slot,) + sim[i:]


def _cosine_rows(q: np.ndarray, E: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(q)
    en = np.linalg.norm(E, axis=1)
    denom = qn * en
    dots = E @ q
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def route(q: np.ndarray, bank: MemoryBank, K_r: int) -> list[MemorySlot]:
    """Top-``K_r`` slots across SIM and DIM by cosine similarity to ``q``.

    Ties go to the higher confidence, then the earlier frame.
    """
    slots = bank.slots
    if not slots:
        return []
    sims = _cosine_rows(np.asarray(q, dtype=float), bank.matrix)
    return [slots[i] for i in _route_order(sims, slots)[:K_r]]


def _route_order(sims: np.ndarray, slots) -> list[int]:
    return sorted(range(len(slots)), key=lambda i: (-sims[i], -slots[i].confidence, slots[i].frame))


# --- shared mixture of experts -------------------------------------------------------

_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
    "identity": lambda x: x,
}


@dataclass(frozen=True, eq=False)
class MoeParams:
    """Stacked expert weights: expert ``k`` maps ``q -> w2[k] @ act(w1[k] @ q + b1[k]) + b2[k]``."""

    w1: np.ndarray  # (n_e, c, c)
    b1: np.ndarray  # (n_e, c)
    w2: np.ndarray  # (n_e, c, c)
    b2: np.ndarray  # (n_e, c)
    keys: np.ndarray  # (n_e, c)
    lam: float = 0.5
    K_r: int = 4
    temperature: float = 1.0
    activation: str = "tanh"

    def __post_init__(self):
        n_e, c = self.keys.shape
        if n_e < 1:
            raise ValueError("need at least one expert")
        for name, arr, shape in (("w1", self.w1, (n_e, c, c)), ("b1", self.b1, (n_e, c)),
                                 ("w2", self.w2, (n_e, c, c)), ("b2", self.b2, (n_e, c))):
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.K_r < 1 or self.temperature <= 0:
            raise ValueError("K_r must be >= 1 and temperature > 0")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_e(self) -> int:
        return self.keys.shape[0]

    @property
    def c_s(self) -> int:
        return self.keys.shape[1]

    def experts(self, q: np.ndarray) -> np.ndarray:
        """All expert outputs for one query, shape ``(n_e, c)``; a batch ``(n, c)`` gives ``(n, n_e, c)``."""
        act = _ACTIVATIONS[self.activation]
        hidden = act(np.einsum("kij,...j->...ki", self.w1, q) + self.b1)
        return np.einsum("kij,...kj->...ki", self.w2, hidden) + self.b2

    @classmethod
    def identity(cls, c_s: int, n_e: int = 1, keys: np.ndarray | None = None, **kw) -> "MoeParams":
        eye = np.broadcast_to(np.eye(c_s), (n_e, c_s, c_s)).copy()
        zeros = np.zeros((n_e, c_s))
        keys = np.zeros((n_e, c_s)) if keys is None else np.asarray(keys, dtype=float)
        return cls(eye, zeros, eye.copy(), zeros.copy(), keys, activation="identity", **kw)

    @classmethod
    def seeded(cls, c_s: int = 32, n_e: int = 4, seed: int = 0, jitter: float = 0.05, **kw) -> "MoeParams":
        """Near-identity experts with random routing keys (no training is provided)."""
        rng = CounterRNG(seed, stream=101)
        scale = jitter / np.sqrt(c_s)
        eye = np.eye(c_s)
        w1 = eye + scale * rng.normal((n_e, c_s, c_s))
        w2 = eye + scale * rng.normal((n_e, c_s, c_s))
        b1 = 0.1 * scale * rng.normal((n_e, c_s))
        b2 = 0.1 * scale * rng.normal((n_e, c_s))
        keys = rng.normal((n_e, c_s))
        return cls(w1, b1, w2, b2, keys, **kw)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "moe.w1": self.w1, "moe.b1": self.b1, "moe.w2": self.w2, "moe.b2": self.b2,
            "moe.keys": self.keys, "moe.lambda": np.array([self.lam]),
            "moe.K_r": np.array([self.K_r], dtype=float),
            "moe.temperature": np.array([self.temperature]),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], activation: str = "tanh") -> "MoeParams":
        return cls(
            np.asarray(arrays["moe.w1"], float), np.asarray(arrays["moe.b1"], float),
            np.asarray(arrays["moe.w2"], float), np.asarray(arrays["moe.b2"], float),
            np.asarray(arrays["moe.keys"], float),
            lam=float(arrays["moe.lambda"][0]), K_r=int(arrays["moe.K_r"][0]),
            temperature=float(arrays["moe.temperature"][0]), activation=activation,
        )


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


def routing_weights(q: np.ndarray, p: MoeParams) -> np.ndarray:
    scores = (p.keys @ q) / (np.sqrt(p.c_s) * p.temperature)
    return softmax(scores)


def moe_forward(q: np.ndarray, p: MoeParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    alpha = routing_weights(q, p)
    return alpha @ p.experts(q)


class ColdMemory(LookupError):
    """Raised by :func:`gated_select` on an empty bank; callers fall back to the query."""


def gated_select(slots, q: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Soft attention over slot embeddings; converges to the best slot as temperature -> 0.

    ``slots`` is a :class:`MemoryBank` or any sequence of :class:`MemorySlot`.
    """
    if isinstance(slots, MemoryBank):
        slots = slots.slots
    if not slots:
        raise ColdMemory("empty memory bank")
    E = np.stack([s.embedding for s in slots])
    w = softmax(_cosine_rows(np.asarray(q, dtype=float), E) / temperature)
    return w @ E


def fuse_embeddings(f_sh: np.ndarray, f_pl: np.ndarray, lam: float) -> np.ndarray:
    f_sh = np.asarray(f_sh, dtype=float)
    f_pl = np.asarray(f_pl, dtype=float)
    if f_sh.shape != f_pl.shape:
        raise ValueError(f"length mismatch: {f_sh.shape} vs {f_pl.shape}")
    if lam == 1.0:
        return f_sh.copy()
    if lam == 0.0:
        return f_pl.copy()
    return lam * f_sh + (1.0 - lam) * f_pl


def moe_forward_many(Q: np.ndarray, p: MoeParams) -> np.ndarray:
    """Row-wise :func:`moe_forward` for a batch of queries ``(n, c)``."""
    Q = np.asarray(Q, dtype=float)
    scores = (Q @ p.keys.T) / (np.sqrt(p.c_s) * p.temperature)
    z = np.exp(scores - scores.max(axis=1, keepdims=True))
    alpha = z / z.sum(axis=1, keepdims=True)
    return np.einsum("nk,nkc->nc", alpha, p.experts(Q))


def _personal(bank: MemoryBank, q: np.ndarray, p: MoeParams) -> np.ndarray:
    # route + gated_select sharing one cosine pass
    if not len(bank):
        return q
    E = bank.matrix
    sims = _cosine_rows(q, E)
    idx = _route_order(sims, bank.slots)[: p.K_r]
    w = softmax(sims[idx] / p.temperature)
    return w @ E[idx]


def enhance(bank: MemoryBank, q: np.ndarray, p: MoeParams) -> np.ndarray:
    """Memory-enhanced feature: ``lambda * MoE(q) + (1 - lambda) * gated_select(route(q))``.

    An empty bank falls back to the query for the personal part.
    """
    q = np.asarray(q, dtype=float)
    return fuse_embeddings(moe_forward(q, p), _personal(bank, q, p), p.lam)


def enhance_many(banks, queries, p: MoeParams) -> np.ndarray:
    """:func:`enhance` for several tracks at once; banks are padded to a common slot count."""
    Q = np.stack([np.asarray(q, dtype=float) for q in queries])
    shared = moe_forward_many(Q, p)
    n, c = Q.shape
    L = max((len(b) for b in banks), default=0)
    if L == 0:
        return fuse_embeddings(shared, Q, p.lam)
    E = np.zeros((n, L, c))
    conf = np.zeros((n, L))
    frame = np.zeros((n, L))
    valid = np.zeros((n, L), dtype=bool)
    for i, b in enumerate(banks):
        k = len(b)
        if k:
            E[i, :k] = b.matrix
            conf[i, :k] = [s.confidence for s in b.slots]
            frame[i, :k] = [s.frame for s in b.slots]
            valid[i, :k] = True
    qn = np.linalg.norm(Q, axis=1)[:, None]
    en = np.linalg.norm(E, axis=2)
    denom = qn * en
    dots = np.einsum("nlc,nc->nl", E, Q)
    sims = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    key = np.where(valid, -sims, np.inf)
    order = np.lexsort((frame, -conf, key), axis=-1)[:, : p.K_r]
    top = np.take_along_axis(sims, order, axis=1)
    ok = np.take_along_axis(valid, order, axis=1)
    logits = np.where(ok, top / p.temperature, -np.inf)
    logits[~ok.any(axis=1)] = 0.0  # empty banks; overwritten below
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    w = z / z.sum(axis=1, keepdims=True)
    f_pl = np.einsum("nk,nkc->nc", w, np.take_along_axis(E, order[:, :, None], axis=1))
    empty = ~valid.any(axis=1)
    f_pl[empty] = Q[empty]
    return fuse_embeddings(shared, f_pl, p.lam)
