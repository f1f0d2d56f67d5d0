"""Tracking metrics on the panoramic cylinder: HOTA, CLEAR-MOT (MOTA), IDF1 and OSPA.

Sequences are mappings ``frame -> list of (id, PanoBox)``.  All overlaps use
the cyclic IoU unless ``cyclic=False`` is passed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError
from .geometry import iou_matrix

ALPHAS = np.arange(1, 20) * 0.05
EPS = np.finfo(float).eps


@dataclass
class MetricReport:
    hota: float = float("nan")
    deta: float = float("nan")
    assa: float = float("nan")
    mota: float = float("nan")
    idf1: float = float("nan")
    ospa: float = float("nan")
    counts: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"HOTA": self.hota, "DetA": self.deta, "AssA": self.assa,
                "MOTA": self.mota, "IDF1": self.idf1, "OSPA": self.ospa}


def _frames(seq: Mapping) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    out = {}
    for f, items in seq.items():
        ids = np.array([int(i) for i, _ in items], dtype=np.int64)
        if len(set(ids.tolist())) != len(ids):
            raise InputError(f"duplicate ids in frame {f}")
        boxes = np.array([[b.cu, b.cv, b.w, b.h] for _, b in items], dtype=float).reshape(-1, 4)
        out[int(f)] = (ids, boxes)
    return out


def _aligned(gt: Mapping, pred: Mapping):
    g, p = _frames(gt), _frames(pred)
    empty = (np.zeros(0, dtype=np.int64), np.zeros((0, 4)))
    for f in sorted(set(g) | set(p)):
        yield f, g.get(f, empty), p.get(f, empty)


# --- CLEAR-MOT ---------------------------------------------------------------------


def eval_mota(gt: Mapping, pred: Mapping, iou_thresh: float = 0.5, cyclic: bool = True):
    """Returns ``(mota, counts)``.  Matches persist across frames while their IoU stays above threshold."""
    tp = fp = fn = idsw = n_gt = 0
    last_match: dict[int, int] = {}
    prev_step: dict[int, int] = {}
    for _, (gids, gb), (pids, pb) in _aligned(gt, pred):
        n_gt += len(gids)
        cur: dict[int, int] = {}
        if len(gids) and len(pids):
            sim = iou_matrix(gb, pb, cyclic)
            score = sim.copy()
            pcol = {int(t): k for k, t in enumerate(pids)}
            for i, g in enumerate(gids):
                k = pcol.get(prev_step.get(int(g), -(1 << 62)))
                if k is not None:
                    score[i, k] += 1000.0
            score[sim < iou_thresh - EPS] = 0.0
            rows, cols = linear_sum_assignment(-score)
            for i, k in zip(rows, cols):
                if score[i, k] <= 0:
                    continue
                g, t = int(gids[i]), int(pids[k])
                if g in last_match and last_match[g] != t:
                    idsw += 1
                last_match[g] = t
                cur[g] = t
        tp += len(cur)
        fn += len(gids) - len(cur)
        fp += len(pids) - len(cur)
        prev_step = cur
    counts = {"TP": tp, "FP": fp, "FN": fn, "IDSW": idsw, "GT": n_gt}
    if n_gt == 0:
        mota = float("-inf") if fp else 1.0
    else:
        mota = 1.0 - (fn + fp + idsw) / n_gt
    return mota, counts


# --- IDF1 ----------------------------------------------------------------------------


def eval_idf1(gt: Mapping, pred: Mapping, iou_thresh: float = 0.5, cyclic: bool = True) -> float:
    gid_index: dict[int, int] = {}
    pid_index: dict[int, int] = {}
    pairs: dict[tuple[int, int], int] = {}
    n_gt = n_pred = 0
    for _, (gids, gb), (pids, pb) in _aligned(gt, pred):
        n_gt += len(gids)
        n_pred += len(pids)
        for g in gids:
            gid_index.setdefault(int(g), len(gid_index))
        for t in pids:
            pid_index.setdefault(int(t), len(pid_index))
        if len(gids) and len(pids):
            sim = iou_matrix(gb, pb, cyclic)
            for i, k in zip(*np.nonzero(sim >= iou_thresh - EPS)):
                key = (gid_index[int(gids[i])], pid_index[int(pids[k])])
                pairs[key] = pairs.get(key, 0) + 1
    if n_gt + n_pred == 0:
        return 1.0
    overlap = np.zeros((len(gid_index), len(pid_index)))
    for (i, k), v in pairs.items():
        overlap[i, k] = v
    idtp = 0.0
    if overlap.size:
        rows, cols = linear_sum_assignment(-overlap)
        idtp = overlap[rows, cols].sum()
    return float(2 * idtp / (n_gt + n_pred))


# --- HOTA ----------------------------------------------------------------------------


def eval_hota(gt: Mapping, pred: Mapping, alphas=ALPHAS, cyclic: bool = True, detail: bool = False):
    """Returns ``(hota, deta, assa)`` averaged over the localization thresholds ``alphas``.

    For every threshold each frame is matched optimally among pairs whose IoU
    reaches it, maximizing IoU weighted by the global id-alignment score.
    """
    frames = list(_aligned(gt, pred))
    gid: dict[int, int] = {}
    pid: dict[int, int] = {}
    for _, (g, _b), (p, _c) in frames:
        for x in g:
            gid.setdefault(int(x), len(gid))
        for x in p:
            pid.setdefault(int(x), len(pid))
    nA = len(alphas)
    n_gt_det = sum(len(g) for _, (g, _), _ in frames)
    n_pr_det = sum(len(p) for _, _, (p, _) in frames)
    if n_gt_det == 0 or n_pr_det == 0:
        zero = (0.0, 0.0, 0.0) if n_gt_det + n_pr_det else (1.0, 1.0, 1.0)
        return zero + ({},) if detail else zero

    G, P = len(gid), len(pid)
    potential = np.zeros((G, P))
    gcount = np.zeros(G)
    pcount = np.zeros(P)
    cache = []
    for _, (g, gb), (p, pb) in frames:
        gi = np.array([gid[int(x)] for x in g], dtype=np.int64)
        pi = np.array([pid[int(x)] for x in p], dtype=np.int64)
        gcount[gi] += 1
        pcount[pi] += 1
        if len(gi) and len(pi):
            sim = iou_matrix(gb, pb, cyclic)
            denom = sim.sum(0)[None, :] + sim.sum(1)[:, None] - sim
            sim_iou = np.divide(sim, denom, out=np.zeros_like(sim), where=denom > EPS)
            potential[gi[:, None], pi[None, :]] += sim_iou
            cache.append((gi, pi, sim))
    alignment = potential / (gcount[:, None] + pcount[None, :] - potential)

    alphas = np.asarray(alphas, dtype=float)
    tp = np.zeros(nA)
    # matched pairs per (alpha, gt id, pred id), accumulated as a difference array over alpha
    diff = np.zeros((nA + 1, G, P))
    for gi, pi, sim in cache:
        score = alignment[gi[:, None], pi[None, :]] * sim
        a = 0
        while a < nA:
            ok = sim >= alphas[a] - EPS
            r, c = linear_sum_assignment(-np.where(ok, score, 0.0))
            keep = ok[r, c]
            rows, cols = r[keep], c[keep]
            # an optimal matching stays optimal at stricter thresholds while all its pairs survive
            weakest = sim[rows, cols].min() if len(rows) else np.inf
            b = a + 1
            while b < nA and weakest >= alphas[b] - EPS:
                b += 1
            np.add.at(diff[a], (gi[rows], pi[cols]), 1)
            np.add.at(diff[b], (gi[rows], pi[cols]), -1)
            tp[a:b] += len(rows)
            a = b
    matches = np.cumsum(diff, axis=0)[:nA]

    fn = n_gt_det - tp
    fp = n_pr_det - tp
    deta = tp / np.maximum(1.0, tp + fn + fp)
    ass_iou = matches / np.maximum(1.0, gcount[None, :, None] + pcount[None, None, :] - matches)
    assa = (matches * ass_iou).sum(axis=(1, 2)) / np.maximum(1.0, tp)
    hota = np.sqrt(deta * assa)
    res = (float(hota.mean()), float(deta.mean()), float(assa.mean()))
    if detail:
        return res + ({"alphas": np.asarray(alphas), "hota": hota, "deta": deta, "assa": assa, "tp": tp},)
    return res


# --- OSPA ----------------------------------------------------------------------------


def ospa_frame(gb: np.ndarray, pb: np.ndarray, cutoff: float = 1.0, order: float = 1.0, cyclic: bool = True) -> float:
    m, n = len(gb), len(pb)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(cutoff)
    d = np.clip(1.0 - iou_matrix(gb, pb, cyclic), 0.0, cutoff) ** order
    rows, cols = linear_sum_assignment(d)
    total = d[rows, cols].sum() + cutoff**order * abs(m - n)
    return float((total / max(m, n)) ** (1.0 / order))


def eval_ospa(gt: Mapping, pred: Mapping, cutoff: float = 1.0, order: float = 1.0, cyclic: bool = True) -> float:
    """Mean per-frame OSPA over frames where either set is non-empty (0 when none are)."""
    if cutoff <= 0 or order <= 0:
        raise InputError("cutoff and order must be positive")
    vals = [ospa_frame(gb, pb, cutoff, order, cyclic)
            for _, (g, gb), (p, pb) in _aligned(gt, pred) if len(g) or len(p)]
    return float(np.mean(vals)) if vals else 0.0


# --- reports -------------------------------------------------------------------------

METRIC_NAMES = ("hota", "mota", "idf1", "ospa")


def evaluate(gt: Mapping, pred: Mapping, metrics=METRIC_NAMES, iou_thresh: float = 0.5,
             ospa_cutoff: float = 1.0, ospa_order: float = 1.0, cyclic: bool = True) -> MetricReport:
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown:
        raise KeyError(f"unknown metrics: {unknown}")
    rep = MetricReport()
    rep.counts["GT"] = sum(len(v) for v in gt.values())
    if "hota" in metrics:
        rep.hota, rep.deta, rep.assa = eval_hota(gt, pred, cyclic=cyclic)
    if "mota" in metrics:
        rep.mota, c = eval_mota(gt, pred, iou_thresh, cyclic)
        rep.counts.update(c)
    if "idf1" in metrics:
        rep.idf1 = eval_idf1(gt, pred, iou_thresh, cyclic)
    if "ospa" in metrics:
        rep.ospa = eval_ospa(gt, pred, ospa_cutoff, ospa_order, cyclic)
    return rep


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """GT-count weighted average of per-sequence reports."""
    w = np.array([max(r.counts.get("GT", 0), 0) for r in reports], dtype=float)
    if w.sum() == 0:
        w = np.ones(len(reports))
    out = MetricReport()
    for name in ("hota", "deta", "assa", "mota", "idf1", "ospa"):
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        setattr(out, name, float(np.average(vals, weights=w)) if len(vals) else float("nan"))
    for key in ("TP", "FP", "FN", "IDSW", "GT"):
        if any(key in r.counts for r in reports):
            out.counts[key] = int(sum(r.counts.get(key, 0) for r in reports))
    return out
