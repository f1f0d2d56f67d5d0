"""Ablation suites on the synthetic benchmark: components, FlexiTrack instance grid, threshold surface."""
from __future__ import annotations

import csv
import dataclasses
import os
from typing import Iterable

import numpy as np

from .metrics import MetricReport, aggregate, evaluate
from .synth import ScenarioConfig, generate
from .tracker import Tracker, TrackerConfig

SUITES = ("components", "flexitrack", "thresholds")

# 12 ids packed around the horizon with gait bob and a wide speed spread: targets cross and hide
# each other often, and single-frame appearance is too noisy to re-identify reliably.
OCCLUSION_BENCH = ScenarioConfig(n_targets=12, seq_len=600, motion_regime="gait", p_miss=0.1, cv_spread=0.015,
                                 speed_std=0.003, embed_noise=0.3)
# Shorter scenario for the 121-cell threshold sweep; staggered births make initialization matter.
THRESHOLD_BENCH = ScenarioConfig(n_targets=12, seq_len=200, motion_regime="gait", p_miss=0.1, clutter_rate=2.0,
                                 cv_spread=0.015, birth_spread=0.8, lifespan=60)

COMPONENT_VARIANTS = {
    "baseline": dict(use_memory=False, use_dssm=False),
    "+ETM": dict(use_memory=True, use_dssm=False),
    "+DSSM": dict(use_memory=False, use_dssm=True),
    "+ETM+DSSM": dict(use_memory=True, use_dssm=True),
}

FLEXITRACK_VARIANTS = {
    "none": dict(use_instances=False),
    "feedback": dict(feedback_instances=True, sigma_x=0.0, sigma_y=0.0),
    "perturbed": dict(feedback_instances=False, sigma_x=0.1, sigma_y=0.1),
    "feedback+perturbed": dict(feedback_instances=True, sigma_x=0.1, sigma_y=0.1),
}

THRESHOLD_GRID = np.round(np.linspace(0.0, 1.0, 11), 10)


def scenarios(n_seeds: int, base: ScenarioConfig = OCCLUSION_BENCH, first_seed: int = 0) -> list[ScenarioConfig]:
    return [dataclasses.replace(base, seed=first_seed + k) for k in range(n_seeds)]


def run_sequence(seq, cfg: TrackerConfig, metrics=("hota", "mota", "idf1", "ospa")) -> MetricReport:
    results = Tracker(cfg).run(seq.frames())
    pred = {r.frame: [(o.id, o.box) for o in r.outputs] for r in results}
    return evaluate(seq.gt, pred, metrics)


def run_variants(variants: dict[str, dict], scenario_cfgs: Iterable[ScenarioConfig], base: TrackerConfig,
                 metrics=("hota", "mota", "idf1", "ospa")) -> list[dict]:
    """One row per (variant, sequence) plus one aggregate row per variant (``seed`` = ``"all"``)."""
    rows = []
    per_variant: dict[str, list[MetricReport]] = {k: [] for k in variants}
    for sc in scenario_cfgs:
        seq = generate(sc)
        for name, overrides in variants.items():
            rep = run_sequence(seq, dataclasses.replace(base, **overrides), metrics)
            per_variant[name].append(rep)
            rows.append({"variant": name, "seed": sc.seed, **rep.as_row()})
    for name, reps in per_variant.items():
        rows.append({"variant": name, "seed": "all", **aggregate(reps).as_row()})
    return rows


def components_suite(n_seeds: int = 3, base: TrackerConfig | None = None,
                     scenario: ScenarioConfig = OCCLUSION_BENCH, variants=None,
                     metrics=("hota", "mota", "idf1", "ospa")) -> list[dict]:
    base = base or TrackerConfig(mode="tbd")
    chosen = {k: COMPONENT_VARIANTS[k] for k in (variants or COMPONENT_VARIANTS)}
    rows = run_variants(chosen, scenarios(n_seeds, scenario), base, metrics)
    ref = {r["variant"]: r for r in rows if r["seed"] == "all"}.get("baseline")
    if ref is not None:
        for r in rows:
            if r["seed"] == "all":
                for m in ("HOTA", "IDF1", "MOTA", "OSPA"):
                    r[f"d{m}"] = r[m] - ref[m]
    return rows


def flexitrack_suite(n_seeds: int = 3, base: TrackerConfig | None = None,
                     scenario: ScenarioConfig = OCCLUSION_BENCH) -> list[dict]:
    base = base or TrackerConfig(mode="e2e")
    return run_variants(FLEXITRACK_VARIANTS, scenarios(n_seeds, scenario), base)


def threshold_surface(n_seeds: int = 1, base: TrackerConfig | None = None,
                      scenario: ScenarioConfig = THRESHOLD_BENCH, grid=THRESHOLD_GRID) -> np.ndarray:
    """Mean HOTA over seeds for every ``(tau_init, tau_update)`` cell; rows index ``tau_init``."""
    base = base or TrackerConfig(mode="auto")
    surface = np.zeros((len(grid), len(grid)))
    for sc in scenarios(n_seeds, scenario):
        seq = generate(sc)
        for i, ti in enumerate(grid):
            for j, tu in enumerate(grid):
                cfg = dataclasses.replace(base, tau_init=float(ti), tau_update=float(tu))
                surface[i, j] += run_sequence(seq, cfg, ("hota",)).hota
    return surface / max(n_seeds, 1)


def interior_argmax(surface: np.ndarray) -> tuple[tuple[int, int], bool]:
    """Location of the maximum and whether it beats every boundary cell strictly."""
    i, j = np.unravel_index(int(np.argmax(surface)), surface.shape)
    inner = surface[1:-1, 1:-1]
    border = np.ones_like(surface, dtype=bool)
    border[1:-1, 1:-1] = False
    strict = inner.size > 0 and float(inner.max()) > float(surface[border].max())
    return (int(i), int(j)), bool(strict)


# --- output --------------------------------------------------------------------------


def write_rows(path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def format_table(rows: list[dict], keys=("variant", "seed", "HOTA", "IDF1", "MOTA", "OSPA")) -> str:
    lines = ["  ".join(f"{k:>12}" for k in keys)]
    for r in rows:
        cells = []
        for k in keys:
            v = r.get(k, "")
            cells.append(f"{v:>12.4f}" if isinstance(v, float) else f"{str(v):>12}")
        lines.append("  ".join(cells))
    return "\n".join(lines)


def write_surface_csv(path, surface: np.ndarray, grid=THRESHOLD_GRID) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau_init", "tau_update", "HOTA"])
        for i, ti in enumerate(grid):
            for j, tu in enumerate(grid):
                w.writerow([f"{ti:.1f}", f"{tu:.1f}", f"{surface[i, j]:.6f}"])


def surface_svg(surface: np.ndarray, grid=THRESHOLD_GRID, cell: int = 36) -> str:
    """Heatmap with ``tau_update`` along x and ``tau_init`` along y (top row = 0)."""
    n_r, n_c = surface.shape
    pad = 60
    lo, hi = float(surface.min()), float(surface.max())
    span = hi - lo if hi > lo else 1.0
    width, height = pad + n_c * cell + 10, pad + n_r * cell + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="9">']
    for i in range(n_r):
        for j in range(n_c):
            t = (surface[i, j] - lo) / span
            r, g, b = int(255 * t), int(80 + 100 * (1 - abs(2 * t - 1))), int(255 * (1 - t))
            x, y = pad + j * cell, pad + i * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({r},{g},{b})"/>')
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 3}" text-anchor="middle">{surface[i, j]:.2f}</text>')
    for k, v in enumerate(grid):
        out.append(f'<text x="{pad + k * cell + cell / 2}" y="{pad - 6}" text-anchor="middle">{v:.1f}</text>')
        out.append(f'<text x="{pad - 6}" y="{pad + k * cell + cell / 2 + 3}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<text x="{pad + n_c * cell / 2}" y="14" text-anchor="middle">tau_update</text>')
    out.append(f'<text x="12" y="{pad + n_r * cell / 2}" transform="rotate(-90 12 {pad + n_r * cell / 2})" text-anchor="middle">tau_init</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_suite(suite: str, out_dir, n_seeds: int) -> dict[str, str]:
    """Run a suite and write its CSV (and SVG for thresholds); returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    if suite == "components":
        rows = components_suite(n_seeds)
    elif suite == "flexitrack":
        rows = flexitrack_suite(n_seeds)
    elif suite == "thresholds":
        surface = threshold_surface(n_seeds)
        paths = {"csv": os.path.join(out_dir, "thresholds.csv"), "svg": os.path.join(out_dir, "thresholds.svg")}
        write_surface_csv(paths["csv"], surface)
        with open(paths["svg"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(surface_svg(surface))
        return paths
    else:
        raise KeyError(suite)
    path = os.path.join(out_dir, f"{suite}.csv")
    write_rows(path, rows)
    return {"csv": path, "table": format_table([r for r in rows if r["seed"] == "all"])}
