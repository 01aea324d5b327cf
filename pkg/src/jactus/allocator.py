"""Global rank allocation under a parameter budget.

Each extra rank in layer ``p`` costs ``d_out + d_in`` parameters and buys a
reduction of ``sigma_{p,k+1}^2`` in squared reconstruction error. Increments
are committed greedily in decreasing gain-per-parameter order.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_K_MIN = 32


class InfeasibleBudgetError(ValueError):
    pass


@dataclass
class LayerCandidate:
    layer_id: str
    d_out: int
    d_in: int
    spectrum_sq: np.ndarray
    k_min: int = None
    k_max: int = None
    role: str = "hidden"

    def __post_init__(self):
        self.spectrum_sq = np.asarray(self.spectrum_sq, dtype=np.float64)
        if self.k_max is None:
            self.k_max = len(self.spectrum_sq)
        if self.k_min is None:
            self.k_min = min(DEFAULT_K_MIN, self.k_max)
        if self.cost <= 0:
            raise ValueError(f"{self.layer_id}: per-rank cost must be positive")
        if not 0 <= self.k_min <= self.k_max <= len(self.spectrum_sq):
            raise ValueError(
                f"{self.layer_id}: need 0 <= k_min ({self.k_min}) <= k_max ({self.k_max}) "
                f"<= spectrum length ({len(self.spectrum_sq)})"
            )
        if np.any(self.spectrum_sq < 0) or np.any(np.diff(self.spectrum_sq) > 0):
            raise ValueError(f"{self.layer_id}: spectrum must be nonnegative and nonincreasing")

    @property
    def cost(self) -> int:
        return self.d_out + self.d_in

    @property
    def dense_params(self) -> int:
        return self.d_out * self.d_in


@dataclass(frozen=True)
class BudgetSpec:
    retained_fraction: float
    total_compressible_params: int
    budget: int


@dataclass
class AllocationResult:
    ranks: dict
    used_params: int
    budget: int
    trace: list = field(default_factory=list)  # (layer_id, new_rank, density)
    heap_ops: int = 0


def floor_params(candidates) -> int:
    return sum(c.k_min * c.cost for c in candidates)


def derive_budget(candidates, c: float) -> BudgetSpec:
    """``B = floor(c * sum(d_out * d_in))`` over the given compressible layers."""
    if not 0 < c <= 1:
        raise ValueError(f"retained fraction must lie in (0, 1], got {c}")
    total = sum(cand.dense_params for cand in candidates)
    budget = math.floor(c * total)
    floor = floor_params(candidates)
    if budget < floor:
        raise InfeasibleBudgetError(
            f"budget {budget} (c={c}) is below the k_min floor of {floor} parameters"
        )
    return BudgetSpec(c, total, budget)


def _budget_value(budget) -> int:
    return budget.budget if isinstance(budget, BudgetSpec) else int(budget)


def allocate(candidates, budget) -> AllocationResult:
    """Greedy max-density allocation.

    A popped increment that no longer fits is discarded rather than
    re-queued, so that layer receives no further rank. Equal densities pop
    in ``(layer_id, rank)`` order.
    """
    B = _budget_value(budget)
    floor = floor_params(candidates)
    if floor > B:
        raise InfeasibleBudgetError(f"budget {B} is below the k_min floor of {floor} parameters")
    by_id = {c.layer_id: c for c in candidates}
    if len(by_id) != len(candidates):
        raise ValueError("layer ids must be unique")
    ranks = {c.layer_id: c.k_min for c in candidates}
    used = floor
    heap = []
    ops = 0

    def push(cand, rank):
        nonlocal ops
        density = cand.spectrum_sq[rank - 1] / cand.cost
        heapq.heappush(heap, (-density, cand.layer_id, rank))
        ops += 1

    for cand in candidates:
        if cand.k_min < cand.k_max:
            push(cand, cand.k_min + 1)
    trace = []
    while heap:
        neg_density, layer_id, rank = heapq.heappop(heap)
        ops += 1
        cand = by_id[layer_id]
        if used + cand.cost > B:
            continue
        ranks[layer_id] = rank
        used += cand.cost
        trace.append((layer_id, rank, -neg_density))
        if rank < cand.k_max:
            push(cand, rank + 1)
    return AllocationResult(ranks, used, B, trace, ops)


def uniform_allocate(candidates, c: float) -> AllocationResult:
    """Per-layer rank whose factored size is a fraction ``c`` of the dense size."""
    if not 0 < c <= 1:
        raise ValueError(f"retained fraction must lie in (0, 1], got {c}")
    ranks = {}
    used = 0
    for cand in candidates:
        k = math.floor(c * cand.dense_params / cand.cost)
        k = min(max(k, cand.k_min), cand.k_max)
        ranks[cand.layer_id] = k
        used += k * cand.cost
    budget = math.floor(c * sum(cand.dense_params for cand in candidates))
    return AllocationResult(ranks, used, budget, [])


def objective(candidates, ranks: dict) -> float:
    """Total retained squared spectrum for a rank assignment."""
    return float(sum(c.spectrum_sq[: ranks[c.layer_id]].sum() for c in candidates))


def find_monotonicity_violation(candidates, budgets):
    """First ``(B1, B2, layer_id, k1, k2)`` where a larger budget lowers a rank, else None."""
    budgets = list(budgets)
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be strictly increasing")
    previous = None
    for B in budgets:
        result = allocate(candidates, B)
        if previous is not None:
            B_prev, ranks_prev = previous
            for cand in candidates:
                k1, k2 = ranks_prev[cand.layer_id], result.ranks[cand.layer_id]
                if k2 < k1:
                    return (B_prev, B, cand.layer_id, k1, k2)
        previous = (B, result.ranks)
    return None


def verify_monotone(candidates, budgets) -> bool:
    return find_monotonicity_violation(candidates, budgets) is None


def allocation_csv(candidates, result: AllocationResult) -> str:
    """Rank table with columns layer_id, d_out, d_in, k_p, params_used, cumulative_density.

    ``cumulative_density`` is the retained squared spectrum divided by the
    per-rank cost.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer_id", "d_out", "d_in", "k_p", "params_used", "cumulative_density"])
    for cand in candidates:
        k = result.ranks[cand.layer_id]
        writer.writerow(
            [cand.layer_id, cand.d_out, cand.d_in, k, k * cand.cost,
             repr(float(cand.spectrum_sq[:k].sum() / cand.cost))]
        )
    return buf.getvalue()
