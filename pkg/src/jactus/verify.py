"""Self-check suite: main code paths against the brute-force oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .allocator import LayerCandidate, allocate, objective
from .nn import FactoredLayer, ModelGraph, loss_and_backward
from .statistics import CovarianceAccumulator
from .subspace import UnionBasis, assemble_layer, check_basis_invariance, project_core
from .numerics import qr_orthonormal_basis


@dataclass
class CheckResult:
    name: str
    passed: bool
    discrepancy: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{status}] {self.name}: {self.discrepancy:.3e}{extra}"


def random_candidates(rng, n_layers: int, max_len: int = 6, equal_cost: bool = False) -> list[LayerCandidate]:
    out = []
    shared = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    for p in range(n_layers):
        length = int(rng.integers(1, max_len + 1))
        spectrum = np.sort(rng.exponential(1.0, size=length))[::-1]
        d_out, d_in = shared if equal_cost else (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        k_min = int(rng.integers(0, length + 1))
        out.append(LayerCandidate(f"L{p}", d_out, d_in, spectrum, k_min=k_min, k_max=length))
    return out


def random_budget(rng, candidates) -> int:
    floor = sum(c.k_min * c.cost for c in candidates)
    top = sum(c.k_max * c.cost for c in candidates)
    return int(rng.integers(floor, top + 1))


def check_allocation(instances: int = 300, seed: int = 0) -> CheckResult:
    """Greedy within one increment of the exhaustive optimum; exact for equal costs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    for t in range(instances):
        equal = t % 2 == 1
        cands = random_candidates(rng, int(rng.integers(1, 4)), equal_cost=equal)
        budget = random_budget(rng, cands)
        greedy = objective(cands, allocate(cands, budget).ranks)
        best = oracle.exhaustive_allocate(cands, budget).best_objective
        slack = 0.0 if equal else max(float(c.spectrum_sq.max()) for c in cands)
        gap = best - greedy
        worst = max(worst, gap - slack)
        if gap > slack + 1e-12 * max(1.0, best):
            failures += 1
    return CheckResult("allocation vs exhaustive", failures == 0, max(worst, 0.0), f"{failures} failing instances")


def check_covariance(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    batch = rng.standard_normal((300, 6))
    acc = CovarianceAccumulator(6)
    for start in range(0, 300, 37):
        acc.accumulate(batch[start : start + 37])
    diff = float(np.abs(acc.finalize() - np.array(oracle.naive_covariance(batch))).max())
    return CheckResult("streaming covariance vs naive", diff < 1e-12, diff)


def check_eckart_young(layers: int = 10, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(layers):
        w = rng.standard_normal((12, 10))
        q_l = qr_orthonormal_basis(rng.standard_normal((12, 7)))
        q_r = qr_orthonormal_basis(rng.standard_normal((10, 6)))
        basis = UnionBasis(q_l, q_r, 0, 0, 0)
        core = project_core(w, basis)
        target = q_l @ core.w_proj @ q_r.T
        errors = [oracle.reconstruction_error(target, np.zeros_like(target))]
        for k in range(1, len(core.sigma) + 1):
            errors.append(oracle.reconstruction_error(target, assemble_layer(basis, core, k).weight()))
        for k in range(len(core.sigma)):
            gain = core.sigma[k] ** 2
            worst = max(worst, abs((errors[k] - errors[k + 1]) - gain) / max(gain, errors[0] * 1e-12, 1e-300))
    return CheckResult("marginal gain = next squared singular value", worst < 1e-8, worst)


def check_invariance(instances: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        u = qr_orthonormal_basis(rng.standard_normal((12, 4)))
        v = qr_orthonormal_basis(rng.standard_normal((10, 4)))
        layer = FactoredLayer("l", u, rng.standard_normal((4, 4)), v)
        r_l = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        r_r = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        worst = max(worst, check_basis_invariance(layer, r_l, r_r, trials=10, seed=int(rng.integers(1 << 31))))
    return CheckResult("basis invariance of the core parameterization", worst < 1e-10, worst)


def factored_test_network(rng, widths=(2, 8, 4, 2), rank: int = 2) -> ModelGraph:
    layers = []
    for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
        k = min(rank, d_in, d_out)
        u = qr_orthonormal_basis(rng.standard_normal((d_out, k)))
        v = qr_orthonormal_basis(rng.standard_normal((d_in, k)))
        layers.append(FactoredLayer(f"fc{i + 1}", u, rng.standard_normal((k, k)), v))
    return ModelGraph(layers, widths[0])


def core_gradient_error(model: ModelGraph, x, y, h: float = 1e-5) -> float:
    """Max relative error of analytic dL/dS against central differences."""
    analytic = loss_and_backward(model, x, y).core()
    worst = 0.0
    for layer in model.layers:
        numeric = oracle.central_difference_grad(lambda: loss_and_backward(model, x, y).loss, layer.s, h)
        denom = np.maximum(np.abs(numeric) + np.abs(analytic[layer.layer_id]), 1e-8)
        worst = max(worst, float((np.abs(numeric - analytic[layer.layer_id]) / denom).max()))
    return worst


def check_gradients(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    model = factored_test_network(rng)
    x = rng.standard_normal((16, 2))
    y = rng.integers(0, 2, size=16)
    err = core_gradient_error(model, x, y)
    return CheckResult("core gradients vs finite differences", err < 1e-5, err)


def run_suite(seed: int = 0, allocation_instances: int = 300) -> list[CheckResult]:
    return [
        check_allocation(allocation_instances, seed),
        check_covariance(seed),
        check_eckart_young(seed=seed),
        check_invariance(seed=seed),
        check_gradients(seed),
    ]
