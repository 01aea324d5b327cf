"""Brute-force reference implementations.

Deliberately slow and loop based. Nothing here imports from the modules it
checks, so a shared bug cannot hide on both sides of a comparison.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

SEARCH_GUARD = 10**6


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass
class ExhaustiveAllocation:
    best_ranks: dict
    best_objective: float
    instances_searched: int


def exhaustive_allocate(candidates, budget: int) -> ExhaustiveAllocation:
    """Best rank vector by enumeration; ties go to the lexicographically smallest.

    ``candidates`` need ``layer_id``, ``d_out``, ``d_in``, ``spectrum_sq``,
    ``k_min`` and ``k_max`` attributes.
    """
    ranges = [range(c.k_min, c.k_max + 1) for c in candidates]
    size = 1
    for r in ranges:
        size *= len(r)
    if size > SEARCH_GUARD:
        raise SearchSpaceTooLarge(f"{size} rank vectors exceed the guard of {SEARCH_GUARD}")
    best = None
    best_value = float("-inf")
    searched = 0
    for combo in itertools.product(*ranges):
        searched += 1
        params = 0
        for c, k in zip(candidates, combo):
            params += k * (c.d_out + c.d_in)
        if params > budget:
            continue
        value = 0.0
        for c, k in zip(candidates, combo):
            for i in range(k):
                value += float(c.spectrum_sq[i])
        if value > best_value:
            best_value = value
            best = combo
    if best is None:
        raise ValueError("no feasible rank vector within the budget")
    return ExhaustiveAllocation(
        {c.layer_id: k for c, k in zip(candidates, best)}, best_value, searched
    )


def naive_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    if len(a[0]) != inner:
        raise ValueError("dimension mismatch")
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            total = 0.0
            for k in range(inner):
                total += float(a[i][k]) * float(b[k][j])
            out[i][j] = total
    return out


def naive_covariance(batch):
    """``X^T X / n`` by explicit loops over rows and index pairs."""
    rows = [list(map(float, r)) for r in batch]
    n = len(rows)
    if n == 0:
        raise ValueError("empty batch")
    d = len(rows[0])
    out = [[0.0] * d for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            total = 0.0
            for r in rows:
                total += r[i] * r[j]
            out[i][j] = out[j][i] = total / n
    return out


def reconstruction_error(w, approx) -> float:
    """Squared Frobenius distance by direct summation."""
    if len(w) != len(approx) or any(len(a) != len(b) for a, b in zip(w, approx)):
        raise ValueError("dimension mismatch")
    total = 0.0
    for row_w, row_a in zip(w, approx):
        for x, y in zip(row_w, row_a):
            diff = float(x) - float(y)
            total += diff * diff
    return total


def central_difference_grad(f, x, h: float = 1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        plus = f()
        x[idx] = orig - h
        minus = f()
        x[idx] = orig
        grad[idx] = (plus - minus) / (2 * h)
    return grad
