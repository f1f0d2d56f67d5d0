"""Parameter files for the feature block and the expert memory.

A parameter file is a NumPy ``.npz`` archive: a flat collection of named
float64 arrays, each stored with its shape.  Names are dotted paths such as
``ssm.delta_proj`` or ``moe.w1``; scalars are stored as length-1 arrays.  One
file may hold both the ``est_d.* / est_s.* / ssm.* / fuse.*`` group and the
``moe.*`` group.  Missing groups fall back to the seeded initializers.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError


def save_params(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def load_params(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            return {k: np.asarray(data[k], dtype=np.float64) for k in data.files}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read parameter file {path}: {exc}") from exc


def has_group(arrays: dict[str, np.ndarray], prefix: str) -> bool:
    return any(k.startswith(prefix + ".") for k in arrays)
