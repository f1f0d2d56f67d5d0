"""Detection-to-track association: hybrid cost, optimal assignment, two-stage matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import PanoBox, iou_matrix

_FORBIDDEN = 1e6


@dataclass(frozen=True, eq=False)
class Detection:
    box: PanoBox
    score: float
    embedding: np.ndarray


def box_array(boxes) -> np.ndarray:
    return np.array([[b.cu, b.cv, b.w, b.h] for b in boxes], dtype=float).reshape(-1, 4)


def embedding_array(items, dim: int | None = None) -> np.ndarray:
    if not items:
        return np.zeros((0, dim or 0))
    return np.stack([np.asarray(e, dtype=float) for e in items])


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    na = np.linalg.norm(a, axis=1)[:, None]
    nb = np.linalg.norm(b, axis=1)[None, :]
    denom = na * nb
    dots = a @ b.T
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


@dataclass
class CostMatrix:
    costs: np.ndarray
    gate_mask: np.ndarray
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=float)
        n, m = self.costs.shape
        if self.gate_mask is None:
            self.gate_mask = np.zeros((n, m), dtype=bool)
        if self.gate_mask.shape != (n, m):
            raise ValueError("gate mask shape does not match costs")
        if not self.rows:
            self.rows = list(range(n))
        if not self.cols:
            self.cols = list(range(m))
        if not np.all(np.isfinite(self.costs[~self.gate_mask])):
            raise ValueError("unmasked costs must be finite")


@dataclass
class AssignmentResult:
    matches: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]


@dataclass(frozen=True)
class AssocConfig:
    w_iou: float = 0.6
    w_app: float = 0.4
    max_cost: float = 0.8
    max_cost_low: float = 0.5
    tau_split: float = 0.5
    app_gate: float = 0.3
    cyclic: bool = True


def hybrid_cost(
    track_boxes: np.ndarray,
    track_embs: np.ndarray,
    det_boxes: np.ndarray,
    det_embs: np.ndarray,
    w_iou: float = 0.6,
    w_app: float = 0.4,
    cyclic: bool = True,
    app_gate: float = 0.3,
) -> CostMatrix:
    """Weighted ``1 - IoU`` plus ``(1 - cos) / 2``; pairs with no overlap and low cosine are gated."""
    if w_iou < 0 or w_app < 0 or abs(w_iou + w_app - 1.0) > 1e-9:
        raise ValueError(f"weights must be non-negative and sum to 1, got {w_iou}, {w_app}")
    iou = iou_matrix(track_boxes, det_boxes, cyclic=cyclic)
    cos = cosine_matrix(np.asarray(track_embs, float), np.asarray(det_embs, float))
    costs = w_iou * (1.0 - iou) + w_app * (1.0 - cos) / 2.0
    mask = (iou <= 0.0) & (cos < app_gate)
    return CostMatrix(costs, mask)


def solve_assignment(c: CostMatrix, max_cost: float = 0.8) -> AssignmentResult:
    """Minimum-cost one-to-one matching over unmasked cells; matches above ``max_cost`` are dropped."""
    n, m = c.costs.shape
    matches = []
    if n and m:
        work = np.where(c.gate_mask, _FORBIDDEN, c.costs)
        rows, cols = linear_sum_assignment(work)
        for r, k in zip(rows, cols):
            if not c.gate_mask[r, k] and c.costs[r, k] <= max_cost:
                matches.append((int(r), int(k)))
    used_r = {r for r, _ in matches}
    used_c = {k for _, k in matches}
    return AssignmentResult(
        matches,
        [r for r in range(n) if r not in used_r],
        [k for k in range(m) if k not in used_c],
    )


def staged_associate(
    track_boxes: np.ndarray,
    track_embs: np.ndarray,
    detections: list[Detection],
    tau_split: float | None = None,
    cfg: AssocConfig = AssocConfig(),
    on_cost_matrix=None,
) -> AssignmentResult:
    """High-confidence detections first with the hybrid cost, then leftovers against low-confidence ones by IoU.

    ``on_cost_matrix`` is called once per constructed :class:`CostMatrix` (diagnostics hook).
    """
    tau = cfg.tau_split if tau_split is None else tau_split
    track_boxes = np.asarray(track_boxes, dtype=float).reshape(-1, 4)
    n = len(track_boxes)
    scores = np.array([d.score for d in detections], dtype=float)
    high = [j for j in range(len(detections)) if scores[j] >= tau]
    low = [j for j in range(len(detections)) if scores[j] < tau]

    matches: list[tuple[int, int]] = []
    remaining = list(range(n))
    if high and n:
        c1 = hybrid_cost(
            track_boxes, track_embs,
            box_array([detections[j].box for j in high]),
            embedding_array([detections[j].embedding for j in high]),
            cfg.w_iou, cfg.w_app, cfg.cyclic, cfg.app_gate,
        )
        if on_cost_matrix:
            on_cost_matrix(c1)
        r1 = solve_assignment(c1, cfg.max_cost)
        matches += [(i, high[k]) for i, k in r1.matches]
        remaining = r1.unmatched_tracks
    if low and remaining:
        iou = iou_matrix(track_boxes[remaining], box_array([detections[j].box for j in low]), cyclic=cfg.cyclic)
        c2 = CostMatrix(1.0 - iou, iou <= 0.0)
        if on_cost_matrix:
            on_cost_matrix(c2)
        r2 = solve_assignment(c2, cfg.max_cost_low)
        matches += [(remaining[i], low[k]) for i, k in r2.matches]

    matches.sort()
    used_t = {i for i, _ in matches}
    used_d = {j for _, j in matches}
    return AssignmentResult(
        matches,
        [i for i in range(n) if i not in used_t],
        [j for j in range(len(detections)) if j not in used_d],
    )
