"""File formats: MOT text records, embedding sidecars, config files, run manifests.

MOT lines use the MOTChallenge column order in normalized panoramic
coordinates::

    frame,id,bb_left,bb_top,bb_width,bb_height,conf,-1,-1,-1

``bb_left`` is the azimuth of the left edge in ``[0, 1)`` and may sit to the
right of the center for boxes that cross the seam.  Detections carry id -1.
Writers print reals with six decimals and LF endings; that output is the
canonical form and reads back to the same bytes.

The embedding sidecar holds one line per MOT line, in the same order, with
the embedding as comma-separated reals (``repr`` precision).

Config files are flat ``key=value`` lines; ``#`` starts a comment.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .association import Detection
from .errors import ConfigError, InputError
from .geometry import PanoBox
from .tracker import FrameResult, TrackerConfig


class MotRecord(NamedTuple):
    frame: int
    id: int
    box: PanoBox
    conf: float
    embedding: np.ndarray | None = None


def _parse_line(line: str, lineno: int, path) -> MotRecord:
    parts = line.strip().split(",")
    if len(parts) < 7:
        raise InputError(f"{path}:{lineno}: expected at least 7 comma-separated fields, got {len(parts)}")
    try:
        frame = int(parts[0])
        tid = int(float(parts[1]))
        left, top, w, h, conf = (float(x) for x in parts[2:7])
    except ValueError as exc:
        raise InputError(f"{path}:{lineno}: {exc}") from None
    if frame < 1:
        raise InputError(f"{path}:{lineno}: frame must be a positive integer")
    if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
        raise InputError(f"{path}:{lineno}: width and height must lie in (0, 1]")
    if not 0.0 <= conf <= 1.0:
        raise InputError(f"{path}:{lineno}: confidence must lie in [0, 1]")
    try:
        box = PanoBox(left + w / 2.0, top + h / 2.0, w, h)
    except ValueError as exc:
        raise InputError(f"{path}:{lineno}: {exc}") from None
    return MotRecord(frame, tid, box, conf)


def read_sidecar(path) -> list[np.ndarray]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(np.array([float(x) for x in line.split(",")]))
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed embedding line") from None
    return out


def read_mot(path, embedding_sidecar=None) -> dict[int, list[MotRecord]]:
    """Records grouped by frame in ascending frame order; file order is kept within a frame."""
    if not os.path.exists(path):
        raise InputError(f"no such file: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                records.append(_parse_line(line, lineno, path))
    if embedding_sidecar is not None:
        if not os.path.exists(embedding_sidecar):
            raise InputError(f"no such file: {embedding_sidecar}")
        embs = read_sidecar(embedding_sidecar)
        if len(embs) != len(records):
            raise InputError(f"sidecar has {len(embs)} lines for {len(records)} records")
        if embs and len({len(e) for e in embs}) != 1:
            raise InputError("sidecar embeddings differ in length")
        records = [r._replace(embedding=e) for r, e in zip(records, embs)]
    grouped: dict[int, list[MotRecord]] = {}
    for r in records:
        grouped.setdefault(r.frame, []).append(r)
    return {f: grouped[f] for f in sorted(grouped)}


def format_record(r: MotRecord) -> str:
    b = r.box
    left = round((b.cu - b.w / 2.0) % 1.0, 6) % 1.0
    top = b.cv - b.h / 2.0
    return f"{r.frame},{r.id},{left:.6f},{top:.6f},{b.w:.6f},{b.h:.6f},{r.conf:.6f},-1,-1,-1"


def write_mot(path, records, embedding_sidecar=None) -> None:
    """Write records (a frame-grouped mapping or a flat iterable) in canonical form."""
    if isinstance(records, dict):
        flat = [r for f in sorted(records) for r in records[f]]
    else:
        flat = list(records)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in flat:
            fh.write(format_record(r) + "\n")
    if embedding_sidecar is not None:
        with open(embedding_sidecar, "w", encoding="utf-8", newline="\n") as fh:
            for r in flat:
                if r.embedding is None:
                    raise InputError("record without embedding cannot go to a sidecar")
                fh.write(",".join(repr(float(x)) for x in r.embedding) + "\n")


# --- conversions ---------------------------------------------------------------------


def to_detections(grouped: dict[int, list[MotRecord]], dim: int | None = None) -> list[tuple[int, list[Detection]]]:
    """Dense ``(frame, detections)`` list from frame 1 to the last frame; gaps become empty frames."""
    if not grouped:
        return []
    out = []
    for f in range(1, max(grouped) + 1):
        dets = []
        for r in grouped.get(f, []):
            emb = r.embedding if r.embedding is not None else np.zeros(dim or 1)
            dets.append(Detection(r.box, r.conf, emb))
        out.append((f, dets))
    return out


def to_tracks(grouped: dict[int, list[MotRecord]]) -> dict[int, list[tuple[int, PanoBox]]]:
    return {f: [(r.id, r.box) for r in rs] for f, rs in grouped.items()}


def detection_records(frames) -> list[MotRecord]:
    """``(frame, detections)`` pairs to id -1 records carrying their embeddings."""
    return [MotRecord(f, -1, d.box, float(d.score), np.asarray(d.embedding, float)) for f, ds in frames for d in ds]


def gt_records(gt: dict[int, list[tuple[int, PanoBox]]]) -> list[MotRecord]:
    return [MotRecord(f, i, b, 1.0) for f in sorted(gt) for i, b in gt[f]]


def result_records(results: list[FrameResult]) -> list[MotRecord]:
    return [MotRecord(r.frame, o.id, o.box, float(o.score)) for r in results for o in r.outputs]


def write_sequence(seq, directory) -> dict[str, str]:
    """Write a synthetic sequence as ``gt.txt``, ``det.txt`` and ``det.emb``; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, n) for k, n in (("gt", "gt.txt"), ("dets", "det.txt"), ("embeds", "det.emb"))}
    write_mot(paths["gt"], gt_records(seq.gt))
    write_mot(paths["dets"], detection_records(seq.frames()), paths["embeds"])
    return paths


def write_diagnostics(path, results: list[FrameResult]) -> None:
    keys: list[str] = []
    for r in results:
        for k in r.diagnostics:
            if k not in keys:
                keys.append(k)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame"] + keys)
        for r in results:
            w.writerow([r.frame] + [r.diagnostics.get(k, "") for k in keys])


# --- config --------------------------------------------------------------------------

_ALIASES = {"lambda": "lam"}
_FIELDS = {f.name: f for f in dataclasses.fields(TrackerConfig)}


def _coerce(name: str, raw: str):
    default = getattr(TrackerConfig(), name)
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base: TrackerConfig | None = None) -> TrackerConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = _ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[name] = _coerce(name, raw)
    return dataclasses.replace(base or TrackerConfig(), **values).validate()


def read_config(path, base: TrackerConfig | None = None) -> TrackerConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)


def format_config(cfg: TrackerConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        key = "lambda" if name == "lam" else name
        lines.append(f"{key}={str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


# --- manifest ------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path -> sha256
    timing: dict = field(default_factory=dict)
    version: str = ""

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))
