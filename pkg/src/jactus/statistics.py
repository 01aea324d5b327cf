"""Streaming second moments over a calibration set, plus ridge regularization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, as_matrix

logger = logging.getLogger(__name__)

DEFAULT_CALIBRATION_SIZE = 1024


@dataclass
class CovarianceAccumulator:
    """Running sum of outer products ``sum_i x_i x_i^T`` and a sample count.

    Raw (uncentered) second moments. Accumulators over disjoint shards can be
    combined with :meth:`merge`.
    """

    dim: int
    sum_outer: np.ndarray = field(default=None, repr=False)
    sample_count: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.sum_outer is None:
            self.sum_outer = np.zeros((self.dim, self.dim))

    def accumulate(self, batch) -> "CovarianceAccumulator":
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[0] == 0:
            raise ValueError(f"batch must be a non-empty 2-D array, got shape {batch.shape}")
        batch = as_matrix(batch, "batch")
        if batch.shape[1] != self.dim:
            raise ShapeError(f"batch has {batch.shape[1]} columns, accumulator dim is {self.dim}")
        outer = batch.T @ batch
        # keep exact symmetry; BLAS may round the two triangles differently
        self.sum_outer += 0.5 * (outer + outer.T)
        self.sample_count += batch.shape[0]
        return self

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        if other.dim != self.dim:
            raise ShapeError(f"cannot merge dim {other.dim} into dim {self.dim}")
        return CovarianceAccumulator(
            self.dim, self.sum_outer + other.sum_outer, self.sample_count + other.sample_count
        )

    def finalize(self) -> np.ndarray:
        if self.sample_count == 0:
            raise ValueError("cannot finalize an accumulator with zero samples")
        return self.sum_outer / self.sample_count


@dataclass(frozen=True)
class RidgeConfig:
    epsilon: float = 1e-5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("ridge epsilon must be positive")


def ridge_regularize(c, cfg: RidgeConfig = RidgeConfig()) -> np.ndarray:
    """Return ``c + tau I`` with ``tau = epsilon * trace(c) / dim``.

    Scaling by the mean eigenvalue keeps the shift scale invariant.
    """
    c = as_matrix(c, "covariance")
    if c.shape[0] != c.shape[1]:
        raise ShapeError(f"covariance must be square, got {c.shape}")
    trace = float(np.trace(c))
    if trace < 0:
        raise ValueError(f"covariance has negative trace {trace}")
    if trace == 0:
        logger.warning("ridge_regularize: zero covariance, no shift applied")
    tau = cfg.epsilon * trace / c.shape[0]
    return c + tau * np.eye(c.shape[0])


@dataclass
class LayerStatistics:
    c_x: np.ndarray
    c_g: np.ndarray
    samples: int


# layer_id -> LayerStatistics
TaskStatistics = dict


def cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample gradient of softmax cross-entropy with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    return p


def sample_calibration(n_total: int, n_calib: int, seed: int) -> np.ndarray:
    """Uniform draw of ``n_calib`` row indices without replacement."""
    if n_calib < 1:
        raise ValueError("n_calib must be positive")
    if n_calib > n_total:
        raise ValueError(f"n_calib={n_calib} exceeds dataset size {n_total}")
    if n_calib == n_total:
        return np.arange(n_total)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_total, size=n_calib, replace=False))


def collect_statistics(
    model,
    data,
    n_calib: int | None = DEFAULT_CALIBRATION_SIZE,
    seed: int = 0,
    batch_size: int = 8,
    loss_grad=cross_entropy_grad,
) -> TaskStatistics:
    """Estimate ``C_x`` and ``C_g`` for every linear layer of a frozen model.

    ``n_calib`` is clamped to the dataset size (``None`` means use all rows).
    ``loss_grad(logits, labels)`` returns per-sample loss gradients; the
    pre-activation gradients are backpropagated from it without touching
    model parameters. Returns ``{layer_id: LayerStatistics}``.
    """
    n_total = data.features.shape[0]
    n = n_total if n_calib is None else min(n_calib, n_total)
    idx = sample_calibration(n_total, n, seed)
    layers = model.linear_layers()
    acc_x = {layer.layer_id: CovarianceAccumulator(layer.d_in) for layer in layers}
    acc_g = {layer.layer_id: CovarianceAccumulator(layer.d_out) for layer in layers}
    for start in range(0, n, batch_size):
        rows = idx[start : start + batch_size]
        x = data.features[rows]
        y = data.labels[rows]
        logits, tape = model.forward(x)
        deltas = model.preactivation_grads(tape, loss_grad(logits, y))
        for layer in layers:
            acc_x[layer.layer_id].accumulate(tape.inputs[layer.layer_id])
            acc_g[layer.layer_id].accumulate(deltas[layer.layer_id])
    stats = {}
    for layer in layers:
        ax, ag = acc_x[layer.layer_id], acc_g[layer.layer_id]
        if not np.any(ax.sum_outer) or not np.any(ag.sum_outer):
            raise ValueError(f"layer {layer.layer_id} was never activated by the calibration data")
        stats[layer.layer_id] = LayerStatistics(ax.finalize(), ag.finalize(), ax.sample_count)
    return stats
