"""Deterministic CSV and JSON emission.

Floats are written with ``repr`` so values round-trip exactly; non-finite
floats become the strings "inf", "-inf" and "nan" in JSON.  Nothing
time-dependent is ever written, so equal inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
from importlib import metadata
from typing import Iterable, Sequence

import numpy as np
import scipy

from .core import InputError

__all__ = [
    "jsonable",
    "canonical_json",
    "config_hash",
    "build_id",
    "provenance",
    "write_json",
    "write_csv",
    "segment_table",
    "path_table",
    "atoms_table",
]


def jsonable(obj):
    """Recursively convert numpy values, tuples and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def build_id() -> str:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return f"mane_lab {version}; python {platform.python_version()}; numpy {np.__version__}; scipy {scipy.__version__}"


def provenance(config: dict) -> dict:
    return {"config_sha256": config_hash(config), "seed": int(config.get("seed", 0)), "build": build_id()}


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(d, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {d}: {exc}") from exc


def write_json(path: str, obj) -> None:
    _ensure_dir(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(jsonable(obj), fh, sort_keys=True, indent=2, ensure_ascii=False)
            fh.write("\n")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    _ensure_dir(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                if len(row) != len(header):
                    raise InputError(f"{path}: row of length {len(row)} under a header of {len(header)}")
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- tables

def segment_table(sys, seg):
    names = list(sys.coord_names)
    header = ["t"] + names + ["p_" + c for c in names] + ["H"] + list(seg.integral_logs)
    cols = [seg.times[:, None], seg.bases, seg.momenta, seg.energy_log[:, None]]
    cols += [np.asarray(v)[:, None] for v in seg.integral_logs.values()]
    return header, np.hstack(cols).tolist()


def path_table(sys, path):
    header = ["t"] + list(sys.coord_names)
    return header, np.hstack([path.times[:, None], path.nodes]).tolist()


def atoms_table(sys, sample):
    names = list(sys.coord_names)
    header = names + ["v_" + c for c in names] + ["weight"]
    return header, np.hstack([sample.bases, sample.velocities, sample.weights[:, None]]).tolist()
