"""Input validation helpers shared by the estimator wrappers."""
from __future__ import annotations

import numbers
from typing import Sequence

import numpy as np

from .spinops import Hamiltonian


def check_hamiltonians(X, *, allow_empty: bool = False) -> list[Hamiltonian]:
    """Coerce ``X`` to a list of Hamiltonians.

    Accepts a single Hamiltonian, dataset records (anything with a
    ``hamiltonian`` attribute) or a sequence mixing both.
    """
    if isinstance(X, Hamiltonian) or hasattr(X, "hamiltonian"):
        X = [X]
    out = []
    for i, item in enumerate(X):
        H = getattr(item, "hamiltonian", item)
        if not isinstance(H, Hamiltonian):
            raise TypeError(f"item {i} is {type(item).__name__}, expected a Hamiltonian or record")
        out.append(H)
    if not out and not allow_empty:
        raise ValueError("expected at least one Hamiltonian")
    return out


def check_records(X, *, require_labels: bool = True) -> list:
    if hasattr(X, "hamiltonian"):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("expected at least one record")
    for i, r in enumerate(X):
        if not hasattr(r, "hamiltonian"):
            raise TypeError(f"item {i} is {type(r).__name__}, expected a dataset record")
        if require_labels and not np.isfinite([r.energy, r.xi]).all():
            raise ValueError(f"record {i} has non-finite labels")
    return X


def check_scalar(x, name: str, *, lo=None, hi=None, lo_inclusive=True, hi_inclusive=True) -> float:
    if not isinstance(x, numbers.Real) or not np.isfinite(x):
        raise ValueError(f"{name} must be a finite real number, got {x!r}")
    if lo is not None and (x < lo or (x == lo and not lo_inclusive)):
        raise ValueError(f"{name}={x} is below its allowed range")
    if hi is not None and (x > hi or (x == hi and not hi_inclusive)):
        raise ValueError(f"{name}={x} is above its allowed range")
    return float(x)


def check_score_vector(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError(f"expected a nonempty 1-d score vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def check_simplex(p, atol: float = 1e-9) -> np.ndarray:
    p = check_score_vector(p)
    if np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return p


def check_weights(w: Sequence[float]) -> tuple[float, float, float]:
    w = np.asarray(w, dtype=float)
    if w.shape != (3,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be three non-negative numbers with positive sum")
    w = w / w.sum()
    return float(w[0]), float(w[1]), float(w[2])
