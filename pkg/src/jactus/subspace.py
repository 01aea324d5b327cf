"""Task-aware union subspaces and projected low-rank approximation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import FactoredLayer
from .numerics import DEFAULT_DROP_TOL, ShapeError, as_matrix, qr_orthonormal_basis, sym_eig, thin_svd
from .statistics import LayerStatistics, RidgeConfig, ridge_regularize

SUBSPACE_MODES = ("joint", "weight_only", "task_only")


class DegenerateSpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyThresholds:
    alpha: float = 0.95  # weight spectrum
    beta: float = 0.99  # gradient covariance
    gamma: float = 0.99  # input covariance

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")


@dataclass
class UnionBasis:
    q_l: np.ndarray
    q_r: np.ndarray
    k_w: int
    k_i: int
    k_o: int

    @property
    def k_l(self) -> int:
        return self.q_l.shape[1]

    @property
    def k_r(self) -> int:
        return self.q_r.shape[1]


@dataclass
class ProjectedCore:
    w_proj: np.ndarray
    u_bar: np.ndarray
    sigma: np.ndarray
    v_bar: np.ndarray

    @property
    def gains(self) -> np.ndarray:
        """Marginal reconstruction gain of each successive rank."""
        return self.sigma**2


def truncate_rank_by_energy(values, threshold: float) -> int:
    """Smallest k whose leading ``values`` hold at least ``threshold`` of the total."""
    values = np.asarray(values, dtype=np.float64)
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if values.ndim != 1 or values.size == 0 or np.any(values < 0):
        raise ValueError("values must be a non-empty nonnegative vector")
    if np.any(np.diff(values) > 0):
        raise ValueError("values must be nonincreasing")
    total = values.sum()
    if total <= 0:
        raise DegenerateSpectrumError("degenerate spectrum: all values are zero")
    if threshold == 1.0:
        return int(np.count_nonzero(values))
    fractions = np.cumsum(values) / total
    return int(np.searchsorted(fractions, threshold, side="left")) + 1


def weight_subspace(w, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Leading left/right singular vectors of ``w`` holding ``alpha`` of its energy."""
    svd = thin_svd(w)
    sigma = svd.singular_values
    # round-off singular values count as zero (numerical rank)
    cutoff = sigma[0] * max(w.shape) * np.finfo(np.float64).eps
    k = truncate_rank_by_energy(np.where(sigma > cutoff, sigma, 0.0) ** 2, alpha)
    return svd.u[:, :k], svd.vt[:k].T


def task_subspaces(
    stats: LayerStatistics, ridge: RidgeConfig, beta: float, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenvectors of the ridged ``C_g`` (output side) and ``C_x`` (input side)."""
    eig_g = sym_eig(ridge_regularize(stats.c_g, ridge))
    eig_x = sym_eig(ridge_regularize(stats.c_x, ridge))
    # clip round-off negatives so the energy fractions stay well defined
    k_o = truncate_rank_by_energy(_clip_spectrum(eig_g.eigenvalues), beta)
    k_i = truncate_rank_by_energy(_clip_spectrum(eig_x.eigenvalues), gamma)
    return eig_g.eigenvectors[:, :k_o], eig_x.eigenvectors[:, :k_i]


def _clip_spectrum(values: np.ndarray) -> np.ndarray:
    return np.minimum.accumulate(np.maximum(values, 0.0))


def build_union(u_w, u_g, v_w, v_x, drop_tol: float = DEFAULT_DROP_TOL) -> UnionBasis:
    """Orthonormal union bases, weight directions first.

    Pass ``None`` for the task blocks (weight-only) or the weight blocks
    (task-only) to build a single-source basis.
    """
    left = [b for b in (u_w, u_g) if b is not None]
    right = [b for b in (v_w, v_x) if b is not None]
    if not left or not right:
        raise ValueError("each side needs at least one source block")
    if len({b.shape[0] for b in left}) > 1 or len({b.shape[0] for b in right}) > 1:
        raise ShapeError("source blocks on the same side must share their row dimension")
    k_w = u_w.shape[1] if u_w is not None else 0
    k_o = u_g.shape[1] if u_g is not None else 0
    k_i = v_x.shape[1] if v_x is not None else 0
    q_l = qr_orthonormal_basis(np.hstack(left), drop_tol)
    q_r = qr_orthonormal_basis(np.hstack(right), drop_tol)
    return UnionBasis(q_l, q_r, k_w=k_w, k_i=k_i, k_o=k_o)


def layer_basis(
    w,
    stats: LayerStatistics | None,
    mode: str = "joint",
    thresholds: EnergyThresholds = EnergyThresholds(),
    ridge: RidgeConfig = RidgeConfig(),
    drop_tol: float = DEFAULT_DROP_TOL,
) -> UnionBasis:
    if mode not in SUBSPACE_MODES:
        raise ValueError(f"unknown subspace mode {mode!r}")
    u_w = v_w = u_g = v_x = None
    if mode != "task_only":
        u_w, v_w = weight_subspace(w, thresholds.alpha)
    if mode != "weight_only":
        if stats is None:
            raise ValueError(f"subspace mode {mode!r} needs task statistics")
        u_g, v_x = task_subspaces(stats, ridge, thresholds.beta, thresholds.gamma)
    return build_union(u_w, u_g, v_w, v_x, drop_tol)


def project_core(w, basis: UnionBasis) -> ProjectedCore:
    w = as_matrix(w, "w")
    if w.shape != (basis.q_l.shape[0], basis.q_r.shape[0]):
        raise ShapeError(f"weight {w.shape} does not match basis ({basis.q_l.shape[0]}, {basis.q_r.shape[0]})")
    w_proj = basis.q_l.T @ w @ basis.q_r
    svd = thin_svd(w_proj)
    return ProjectedCore(w_proj, svd.u, svd.singular_values, svd.vt.T)


def assemble_layer(
    basis: UnionBasis, core: ProjectedCore, k_p: int, layer_id: str = "layer", role: str = "hidden"
) -> FactoredLayer:
    """Rank-``k_p`` factored layer whose initial core is the leading diagonal of the projected SVD."""
    k_max = min(basis.k_l, basis.k_r)
    if not 1 <= k_p <= k_max:
        raise ValueError(f"k_p={k_p} outside [1, {k_max}]")
    u = basis.q_l @ core.u_bar[:, :k_p]
    v = basis.q_r @ core.v_bar[:, :k_p]
    return FactoredLayer(layer_id, u, np.diag(core.sigma[:k_p]), v, role)


def check_basis_invariance(layer: FactoredLayer, r_l, r_r, trials: int = 100, seed: int = 0) -> float:
    """Largest relative gap between ``(U R_L) S' (V R_R)^T`` and ``U (R_L S' R_R^T) V^T``.

    Both sides must agree for every core ``S'``: re-basing the factors only
    reparameterizes the core.
    """
    r_l = as_matrix(r_l, "r_l")
    r_r = as_matrix(r_r, "r_r")
    k = layer.rank
    for name, r in (("r_l", r_l), ("r_r", r_r)):
        if r.shape != (k, k):
            raise ShapeError(f"{name} must be {k}x{k}, got {r.shape}")
        if not np.isfinite(np.linalg.cond(r)) or np.linalg.cond(r) > 1e12:
            raise np.linalg.LinAlgError(f"{name} is singular")
    rng = np.random.default_rng(seed)
    u_primed = layer.u @ r_l
    v_primed = layer.v @ r_r
    worst = 0.0
    for _ in range(trials):
        s_primed = rng.standard_normal((k, k))
        lhs = u_primed @ s_primed @ v_primed.T
        rhs = layer.u @ (r_l @ s_primed @ r_r.T) @ layer.v.T
        worst = max(worst, np.linalg.norm(lhs - rhs) / (1.0 + np.linalg.norm(lhs)))
    return float(worst)


def core_for_basis(s, r_l, r_r) -> np.ndarray:
    """Core ``S'`` with ``(U R_L) S' (V R_R)^T == U S V^T``."""
    return np.linalg.solve(r_l, np.linalg.solve(r_r, np.asarray(s).T).T)
