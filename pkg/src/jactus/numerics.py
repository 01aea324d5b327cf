"""Dense float64 linear-algebra kernels.

Every other module goes through these helpers, so the floating-point policy
(dtype, sign convention, rank-revealing tolerance) lives in one place.
Matrices are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DROP_TOL = 1e-10


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} attempts)")
        self.iterations = iterations


class EmptyBasisError(ValueError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite 2-D float64 array and return it."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.vt


@dataclass(frozen=True)
class EigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _sign_flips(vectors: np.ndarray) -> np.ndarray:
    """Per-column signs making the first nonzero entry of each column nonnegative."""
    scale = np.abs(vectors).max(axis=0, initial=0.0)
    significant = np.abs(vectors) > 1e-12 * np.maximum(scale, np.finfo(float).tiny)
    first = np.argmax(significant, axis=0)
    lead = vectors[first, np.arange(vectors.shape[1])]
    return np.where(lead < 0, -1.0, 1.0)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def thin_svd(a) -> SvdResult:
    a = as_matrix(a)
    attempts = 0
    for driver in ("gesdd", "gesvd"):
        attempts += 1
        try:
            if driver == "gesdd":
                u, s, vt = np.linalg.svd(a, full_matrices=False)
            else:
                import scipy.linalg

                u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
            break
        except (np.linalg.LinAlgError, ValueError):
            continue
    else:
        raise ConvergenceError("SVD did not converge", attempts)
    signs = _sign_flips(u)
    u = u * signs
    vt = vt * signs[:, None]
    return SvdResult(u=u, singular_values=np.maximum(s, 0.0), vt=vt)


def sym_eig(a) -> EigResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got {a.shape}")
    sym = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(sym)
    w = w[::-1].copy()
    v = v[:, ::-1]
    v = v * _sign_flips(v)
    return EigResult(eigenvalues=w, eigenvectors=np.ascontiguousarray(v))


def qr_orthonormal_basis(a, tol: float = DEFAULT_DROP_TOL) -> np.ndarray:
    """Orthonormal basis for the column space of ``a``.

    Modified Gram-Schmidt with one re-orthogonalization pass. A column is
    dropped when its residual norm, after projecting out the columns already
    accepted, is at most ``tol * max|a|``. Column order therefore decides
    which of two near-duplicate directions survives.
    """
    a = as_matrix(a)
    if tol <= 0:
        raise ValueError("tol must be positive")
    scale = np.abs(a).max()
    if scale == 0:
        raise EmptyBasisError("empty basis: input is zero")
    # the span is scale free; normalizing avoids underflow in the norms
    a = a / scale
    accepted: list[np.ndarray] = []
    for j in range(a.shape[1]):
        v = a[:, j].copy()
        for _ in range(2):
            for q in accepted:
                v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm <= tol:
            continue
        accepted.append(v / norm)
    if not accepted:
        raise EmptyBasisError("empty basis: every column was dropped")
    return np.column_stack(accepted)


def orthonormality_error(q: np.ndarray) -> float:
    return float(np.abs(q.T @ q - np.eye(q.shape[1])).max())
