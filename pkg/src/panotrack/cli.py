"""Command-line entry point: ``panotrack {track,eval,synth,ablate,entropy-check}``.

Exit codes: 0 success, 2 input error (including usage errors), 3 config error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .ablation import SUITES, write_suite
from .errors import ConfigError, InputError
from .feedback import conditional_entropy, entropy, feedback_gain
from .metrics import METRIC_NAMES, evaluate
from .motio import (RunManifest, read_config, read_mot, result_records, sha256_file, to_detections, to_tracks,
                    write_diagnostics, write_mot, write_sequence)
from .params import has_group, load_params
from .synth import REGIMES, ScenarioConfig, generate
from .tracker import MODES, Tracker, TrackerConfig

log = logging.getLogger("panotrack")


def _stem(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root


def cmd_track(args) -> int:
    cfg = read_config(args.config) if args.config else TrackerConfig()
    if args.mode is not None:
        if args.mode not in MODES:
            raise ConfigError(f"--mode must be one of {MODES}, got {args.mode!r}")
        cfg = dataclasses.replace(cfg, mode=args.mode)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg.validate()

    moe = dssm = None
    if args.params:
        arrays = load_params(args.params)
        if has_group(arrays, "moe."):
            from .memory import MoeParams
            moe = MoeParams.from_arrays(arrays)
        if has_group(arrays, "ssm."):
            from .dssm import DssmParams
            dssm = DssmParams.from_arrays(arrays)

    t0 = time.perf_counter()
    grouped = read_mot(args.dets, args.embeds)
    frames = to_detections(grouped, cfg.c_s)
    for _, dets in frames:
        for d in dets:
            if len(d.embedding) != cfg.c_s:
                raise InputError(f"embedding length {len(d.embedding)} does not match c_s={cfg.c_s}")
    tracker = Tracker(cfg, moe=moe, dssm=dssm)
    results = tracker.run(frames)
    elapsed = time.perf_counter() - t0

    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    diag = _stem(args.out) + ".diagnostics.csv"
    manifest_path = _stem(args.out) + ".manifest.json"
    write_mot(args.out, result_records(results))
    write_diagnostics(diag, results)

    inputs = [p for p in (args.dets, args.embeds, args.config, args.params) if p]
    manifest = RunManifest(
        config=dataclasses.asdict(cfg),
        seed=cfg.seed,
        inputs={p: sha256_file(p) for p in inputs},
        outputs={p: sha256_file(p) for p in (args.out, diag)},
        timing={"seconds": round(elapsed, 3), "frames": len(frames)},
        version=__version__,
    )
    manifest.write(manifest_path)
    log.info("tracked %d frames in %.2fs, %d cost matrices", len(frames), elapsed, tracker.cost_matrix_count)
    return 0


def cmd_eval(args) -> int:
    metrics = [m.strip().lower() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown or not metrics:
        raise ConfigError(f"unknown metrics {unknown}; choose from {','.join(METRIC_NAMES)}")
    gt = read_mot(args.gt)
    pred = read_mot(args.pred)
    last = max(gt) if gt else 0
    stray = [f for f in pred if f > last]
    if stray:
        raise InputError(f"prediction frames {stray[0]}..{stray[-1]} lie outside the ground-truth range 1..{last}")
    rep = evaluate(to_tracks(gt), to_tracks(pred), metrics, iou_thresh=args.iou,
                   ospa_cutoff=args.ospa_cutoff, ospa_order=args.ospa_order, cyclic=not args.flat)
    names = {"hota": ["HOTA", "DetA", "AssA"], "mota": ["MOTA"], "idf1": ["IDF1"], "ospa": ["OSPA"]}
    cols = [c for m in metrics for c in names[m]]
    row = rep.as_row()
    counts = [k for k in ("TP", "FP", "FN", "IDSW", "GT") if k in rep.counts]
    header = cols + counts
    values = [f"{row[c]:.6f}" for c in cols] + [str(rep.counts[k]) for k in counts]
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n" + ",".join(values) + "\n")
    width = max(len(h) for h in header)
    for h, v in zip(header, values):
        print(f"{h:<{width}}  {v}")
    return 0


def cmd_synth(args) -> int:
    if args.regime not in REGIMES:
        raise ConfigError(f"--regime must be one of {REGIMES}")
    try:
        sc = ScenarioConfig(n_targets=args.n_targets, seq_len=args.seq_len, motion_regime=args.regime,
                            p_miss=args.p_miss, clutter_rate=args.clutter, jitter_sigma=args.jitter,
                            embed_dim=args.embed_dim, embed_noise=args.embed_noise, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    paths = write_sequence(generate(sc), args.out)
    with open(os.path.join(args.out, "scenario.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(dataclasses.asdict(sc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


def cmd_ablate(args) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"--suite must be one of {SUITES}, got {args.suite!r}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    paths = write_suite(args.suite, args.out, args.seeds)
    if "table" in paths:
        print(paths.pop("table"))
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


def _read_joints(path) -> list[np.ndarray]:
    """Blank-line separated blocks of whitespace- or comma-separated rows."""
    blocks, cur = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                if cur:
                    blocks.append(cur)
                    cur = []
                continue
            try:
                cur.append([float(x) for x in line.replace(",", " ").split()])
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed number") from None
    if cur:
        blocks.append(cur)
    try:
        return [np.array(b, dtype=float) for b in blocks]
    except ValueError:
        raise InputError(f"{path}: ragged table rows") from None


def cmd_entropy_check(args) -> int:
    if args.joints:
        joints = _read_joints(args.joints)
    else:
        rng = np.random.default_rng(args.seed)
        joints = []
        for _ in range(args.random):
            j = rng.random((args.size, args.size))
            joints.append(j / j.sum())
    try:
        rows = [(entropy(j.sum(axis=1)), conditional_entropy(j)) for j in joints]
        total = feedback_gain(joints)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.joints:
        print("frame,H_x,H_x_given_y,gain")
        for t, (hx, hc) in enumerate(rows, 1):
            print(f"{t},{hx:.9f},{hc:.9f},{hx - hc:.9f}")
    worst = min(hx - hc for hx, hc in rows)
    print(f"tables={len(joints)} feedback_gain={total:.9f} min_frame_gain={worst:.3e}")
    ok = worst >= -1e-9
    print("non-negative: " + ("yes" if ok else "NO"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panotrack", description="Panoramic multi-object tracking toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="run the tracker over a detection file")
    t.add_argument("--dets", required=True, help="MOT-format detections (id -1)")
    t.add_argument("--embeds", required=True, help="embedding sidecar, one line per detection")
    t.add_argument("--config", help="key=value tracker config")
    t.add_argument("--mode", help="e2e, tbd, ensemble or auto (overrides config)")
    t.add_argument("--out", required=True, help="MOT-format results; diagnostics and manifest go alongside")
    t.add_argument("--seed", type=int)
    t.add_argument("--params", help="npz with learned moe.* / ssm.* arrays")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--metrics", default=",".join(METRIC_NAMES))
    e.add_argument("--out", help="CSV report path")
    e.add_argument("--iou", type=float, default=0.5, help="match threshold for MOTA and IDF1")
    e.add_argument("--ospa-cutoff", type=float, default=1.0)
    e.add_argument("--ospa-order", type=float, default=1.0)
    e.add_argument("--flat", action="store_true", help="clamped instead of cyclic IoU")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic panoramic sequence")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--n-targets", type=int, default=12)
    s.add_argument("--seq-len", type=int, default=600)
    s.add_argument("--regime", default="gait")
    s.add_argument("--p-miss", type=float, default=0.1)
    s.add_argument("--clutter", type=float, default=0.5)
    s.add_argument("--jitter", type=float, default=0.05)
    s.add_argument("--embed-dim", type=int, default=32)
    s.add_argument("--embed-noise", type=float, default=0.15)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("ablate", help="run an ablation suite on the synthetic benchmark")
    a.add_argument("--suite", required=True, help=f"one of {', '.join(SUITES)}")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_ablate)

    h = sub.add_parser("entropy-check", help="verify the feedback entropy inequality on joint tables")
    src = h.add_mutually_exclusive_group(required=True)
    src.add_argument("--joints", help="file of joint tables (rows of numbers, blank line between tables)")
    src.add_argument("--random", type=int, help="number of random tables to check")
    h.add_argument("--size", type=int, default=4)
    h.add_argument("--seed", type=int, default=0)
    h.set_defaults(func=cmd_entropy_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
