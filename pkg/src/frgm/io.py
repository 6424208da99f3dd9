"""Readers and writers for point sets and dense matrices (CSV or JSON)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ParameterError, PointSet

FLOAT_FMT = "%.17g"


def _read_csv(path) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2, encoding="utf-8")
    except ValueError as exc:
        raise ParameterError(f"{path}: malformed CSV ({exc})") from exc
    return A


def _read_json(path, key) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return np.asarray(data[key], dtype=float)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"{path}: expected a JSON object with key {key!r}") from exc


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"{path}: no such file")
    A = _read_json(path, "matrix") if path.suffix.lower() == ".json" else _read_csv(path)
    if A.ndim != 2 or not np.all(np.isfinite(A)):
        raise ParameterError(f"{path}: expected a finite 2D matrix")
    return A


def read_points(path) -> PointSet:
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"{path}: no such file")
    X = _read_json(path, "points") if path.suffix.lower() == ".json" else _read_csv(path)
    return PointSet(X)


def write_matrix(path, A) -> None:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(dumps({"matrix": A.tolist()}) + "\n", encoding="utf-8")
    else:
        np.savetxt(path, A, delimiter=",", fmt=FLOAT_FMT, encoding="utf-8")


def write_points(path, V) -> None:
    X = np.asarray(getattr(V, "points", V), dtype=float)
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(dumps({"points": X.tolist()}) + "\n", encoding="utf-8")
    else:
        write_matrix(path, X)


def _round17(obj):
    if isinstance(obj, float):
        return float(FLOAT_FMT % obj)
    if isinstance(obj, (np.floating,)):
        return float(FLOAT_FMT % float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round17(obj.tolist())
    if isinstance(obj, dict):
        return {k: _round17(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round17(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """JSON with floats at 17 significant digits (Python's repr already
    round-trips doubles; numpy scalars and arrays are converted)."""
    return json.dumps(_round17(obj), sort_keys=True)
