"""JSON and CSV formats for matrices, systems, gains, and trajectories.

Matrices are stored as ``{"rows": r, "cols": c, "data": [row-major numbers]}``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .optimizers import IterateRecord
from .system import MultiplicativeNoiseSystem, NoiseTerm

TRAJECTORY_COLUMNS = ("iter", "J", "reg", "C", "grad_norm", "eta")


class FormatError(ValueError):
    """Malformed serialized data; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _num(x) -> float | str:
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


def matrix_to_json(X) -> dict:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return {"rows": int(X.shape[0]), "cols": int(X.shape[1]), "data": [_num(v) for v in X.ravel()]}


def matrix_from_json(obj, path: str = "") -> np.ndarray:
    """Parse a matrix from the ``rows/cols/data`` form, a nested list, or a scalar."""
    if isinstance(obj, dict):
        try:
            rows, cols, data = obj["rows"], obj["cols"], obj["data"]
        except KeyError as exc:
            raise FormatError(path, f"matrix object is missing {exc.args[0]!r}") from None
        if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 0 or cols < 0:
            raise FormatError(path, "rows and cols must be nonnegative integers")
        if len(data) != rows * cols:
            raise FormatError(path, f"expected {rows * cols} entries, got {len(data)}")
        try:
            return np.array([float(v) for v in data], dtype=float).reshape(rows, cols)
        except (TypeError, ValueError):
            raise FormatError(path, "data must contain numbers") from None
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return np.array([[float(obj)]])
    if isinstance(obj, list):
        try:
            X = np.array(obj, dtype=float)
        except (TypeError, ValueError):
            raise FormatError(path, "nested list must be a rectangular array of numbers") from None
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2:
            raise FormatError(path, f"expected a 2-d matrix, got {X.ndim} dimensions")
        return X
    raise FormatError(path, f"cannot interpret {type(obj).__name__} as a matrix")


def system_to_json(sys: MultiplicativeNoiseSystem) -> dict:
    return {
        "A": matrix_to_json(sys.A),
        "B": matrix_to_json(sys.B),
        "state_noise": [{"variance": t.variance, "matrix": matrix_to_json(t.matrix)} for t in sys.state_noise],
        "input_noise": [{"variance": t.variance, "matrix": matrix_to_json(t.matrix)} for t in sys.input_noise],
    }


def system_from_json(obj, path: str = "system") -> MultiplicativeNoiseSystem:
    if not isinstance(obj, dict):
        raise FormatError(path, "system must be an object")
    for key in ("A", "B"):
        if key not in obj:
            raise FormatError(f"{path}.{key}", "required")
    A = matrix_from_json(obj["A"], f"{path}.A")
    B = matrix_from_json(obj["B"], f"{path}.B")
    noises = {}
    for key in ("state_noise", "input_noise"):
        terms = []
        for i, t in enumerate(obj.get(key, [])):
            p = f"{path}.{key}[{i}]"
            if not isinstance(t, dict) or "variance" not in t or "matrix" not in t:
                raise FormatError(p, "noise term needs 'variance' and 'matrix'")
            terms.append(NoiseTerm(float(t["variance"]), matrix_from_json(t["matrix"], f"{p}.matrix")))
        noises[key] = terms
    try:
        return MultiplicativeNoiseSystem(A, B, noises["state_noise"], noises["input_noise"])
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def write_json(path: Path | str, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path: Path | str):
    return json.loads(Path(path).read_text())


def save_system(path: Path | str, sys: MultiplicativeNoiseSystem) -> None:
    write_json(path, system_to_json(sys))


def load_system(path: Path | str) -> MultiplicativeNoiseSystem:
    return system_from_json(read_json(path))


def gain_to_json(K, **meta) -> dict:
    return {"K": matrix_to_json(K), **meta}


def write_trajectory_csv(path: Path | str, records: Iterable[IterateRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for r in records:
            w.writerow([r.iteration, repr(r.J), repr(r.reg), repr(r.C), repr(r.grad_norm), repr(r.eta)])


def read_trajectory_csv(path: Path | str) -> list[IterateRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        IterateRecord(int(r["iter"]), float(r["J"]), float(r["reg"]), float(r["C"]), float(r["grad_norm"]), float(r["eta"]))
        for r in rows
    ]
