"""A small bias-free ReLU network with exact reverse-mode gradients.

Linear layers are either dense (``a = W x``) or factored (``a = U S V^T x``).
Inputs are row-major batches, so a layer computes ``A = X W^T``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, as_matrix
from .statistics import cross_entropy_grad


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class DenseLayer:
    layer_id: str
    w: np.ndarray
    role: str = "hidden"

    @property
    def d_out(self) -> int:
        return self.w.shape[0]

    @property
    def d_in(self) -> int:
        return self.w.shape[1]

    def weight(self) -> np.ndarray:
        return self.w

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.T

    def input_grad(self, delta: np.ndarray) -> np.ndarray:
        return delta @ self.w

    def param_grads(self, x: np.ndarray, delta: np.ndarray) -> dict[str, np.ndarray]:
        return {"w": delta.T @ x}


@dataclass
class FactoredLayer:
    """``W = U S V^T`` with orthonormal ``U`` (d_out x k) and ``V`` (d_in x k)."""

    layer_id: str
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    role: str = "hidden"

    def __post_init__(self):
        k = self.s.shape[0]
        if self.s.shape != (k, k) or self.u.shape[1] != k or self.v.shape[1] != k:
            raise ShapeError(
                f"inconsistent factor shapes u{self.u.shape} s{self.s.shape} v{self.v.shape}"
            )

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    @property
    def d_out(self) -> int:
        return self.u.shape[0]

    @property
    def d_in(self) -> int:
        return self.v.shape[0]

    def weight(self) -> np.ndarray:
        return self.u @ self.s @ self.v.T

    def apply(self, x: np.ndarray) -> np.ndarray:
        return ((x @ self.v) @ self.s.T) @ self.u.T

    def input_grad(self, delta: np.ndarray) -> np.ndarray:
        return ((delta @ self.u) @ self.s) @ self.v.T

    def param_grads(self, x: np.ndarray, delta: np.ndarray) -> dict[str, np.ndarray]:
        # dL/dW = delta^T x, so dL/dS = U^T (delta^T x) V without forming dL/dW
        du = delta @ self.u
        xv = x @ self.v
        return {
            "s": du.T @ xv,
            "u": delta.T @ (xv @ self.s.T),
            "v": x.T @ (du @ self.s),
        }


@dataclass
class Tape:
    """Per-layer inputs and pre-activations recorded by :meth:`ModelGraph.forward`."""

    inputs: dict[str, np.ndarray] = field(default_factory=dict)
    preacts: dict[str, np.ndarray] = field(default_factory=dict)


class ModelGraph:
    """Linear layers with a ReLU between consecutive layers, none after the last.

    With ``augment_constant`` a constant 1 is appended to every input row, so
    the first layer sees ``input_dim + 1`` features. That column plays the part
    of a first-layer bias while the layers themselves stay bias-free.
    """

    def __init__(self, layers, input_dim: int, augment_constant: bool = False):
        if not layers:
            raise ValueError("a model needs at least one linear layer")
        self.layers = list(layers)
        self.input_dim = input_dim
        self.augment_constant = augment_constant
        expected = input_dim + (1 if augment_constant else 0)
        for layer in self.layers:
            if layer.d_in != expected:
                raise ShapeError(
                    f"layer {layer.layer_id} expects {layer.d_in} inputs, previous width is {expected}"
                )
            expected = layer.d_out

    @property
    def output_dim(self) -> int:
        return self.layers[-1].d_out

    def linear_layers(self):
        return self.layers

    def layer(self, layer_id: str):
        for layer in self.layers:
            if layer.layer_id == layer_id:
                return layer
        raise KeyError(layer_id)

    def copy(self) -> "ModelGraph":
        new_layers = []
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                new_layers.append(DenseLayer(layer.layer_id, layer.w.copy(), layer.role))
            else:
                new_layers.append(
                    FactoredLayer(layer.layer_id, layer.u.copy(), layer.s.copy(), layer.v.copy(), layer.role)
                )
        return ModelGraph(new_layers, self.input_dim, self.augment_constant)

    def _prepare(self, x) -> np.ndarray:
        x = as_matrix(x, "x_batch")
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"x_batch has {x.shape[1]} columns, model input_dim is {self.input_dim}")
        if self.augment_constant:
            x = np.hstack([x, np.ones((x.shape[0], 1))])
        return x

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        h = self._prepare(x)
        tape = Tape()
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            tape.inputs[layer.layer_id] = h
            a = layer.apply(h)
            tape.preacts[layer.layer_id] = a
            h = a if i == last else np.maximum(a, 0.0)
        return h, tape

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def preactivation_grads(self, tape: Tape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate ``dL/dlogits`` to every layer's pre-activation."""
        deltas = {}
        delta = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            deltas[layer.layer_id] = delta
            if i > 0:
                prev = self.layers[i - 1]
                delta = layer.input_grad(delta) * (tape.preacts[prev.layer_id] > 0)
        return deltas

    def effective_weights(self) -> dict[str, np.ndarray]:
        return {layer.layer_id: layer.weight() for layer in self.layers}


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsum - z[np.arange(len(labels)), labels]))


@dataclass
class Gradients:
    loss: float
    params: dict[tuple[str, str], np.ndarray]
    preacts: dict[str, np.ndarray]

    def core(self) -> dict[str, np.ndarray]:
        """``dL/dS`` for each factored layer."""
        return {lid: g for (lid, name), g in self.params.items() if name == "s"}

    def dense(self) -> dict[str, np.ndarray]:
        return {lid: g for (lid, name), g in self.params.items() if name == "w"}


def loss_and_backward(model: ModelGraph, x, labels) -> Gradients:
    """Mean softmax cross-entropy and its exact gradients."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= model.output_dim:
        raise ValueError(f"labels must lie in [0, {model.output_dim})")
    logits, tape = model.forward(x)
    loss = cross_entropy(logits, labels)
    dlogits = cross_entropy_grad(logits, labels) / len(labels)
    deltas = model.preactivation_grads(tape, dlogits)
    params = {}
    for layer in model.layers:
        for name, g in layer.param_grads(tape.inputs[layer.layer_id], deltas[layer.layer_id]).items():
            params[(layer.layer_id, name)] = g
    return Gradients(loss, params, deltas)


def trainable_params(model: ModelGraph, trainable: str) -> list[tuple[str, str]]:
    """Keys of the parameters updated in ``trainable`` mode ('all' or 'core')."""
    keys = []
    for layer in model.layers:
        if trainable == "core":
            if isinstance(layer, FactoredLayer):
                keys.append((layer.layer_id, "s"))
        elif trainable == "all":
            names = ["w"] if isinstance(layer, DenseLayer) else ["u", "s", "v"]
            keys.extend((layer.layer_id, n) for n in names)
        else:
            raise ValueError(f"unknown trainable mode {trainable!r}")
    if not keys:
        raise ValueError(f"model has no parameters trainable in mode {trainable!r}")
    return keys


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adamw"  # or "sgd" (plain gradient descent)

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1 or self.weight_decay < 0:
            raise ValueError(f"invalid training config {self}")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LogRow:
    epoch: int
    step: int
    loss: float
    accuracy: float


class AdamW:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for key, p in params.items():
            g = grads[key]
            m = self.m.get(key)
            if m is None:
                m = self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            v = self.v[key]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if cfg.weight_decay:
                p -= cfg.learning_rate * cfg.weight_decay * p
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def _param_refs(model: ModelGraph, keys) -> dict:
    return {key: getattr(model.layer(key[0]), key[1]) for key in keys}


def train(model: ModelGraph, data, cfg: TrainConfig, trainable: str = "all") -> list[LogRow]:
    """Mini-batch training in place; returns one log row per epoch.

    In ``core`` mode only the ``S`` matrices of factored layers change, every
    other array is left untouched. Shuffling uses ``cfg.seed`` only.
    """
    keys = trainable_params(model, trainable)
    params = _param_refs(model, keys)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(cfg) if cfg.optimizer == "adamw" else None
    n = data.features.shape[0]
    log = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            grads = loss_and_backward(model, data.features[rows], data.labels[rows])
            if not math.isfinite(grads.loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
            losses.append(grads.loss * len(rows))
            if opt is not None:
                opt.step(params, grads.params)
            else:
                for key, p in params.items():
                    p -= cfg.learning_rate * grads.params[key]
            # ReLU can mask infinite weights, so the loss alone is not enough
            for key, p in params.items():
                if not np.all(np.isfinite(p)):
                    raise TrainingDivergedError(f"non-finite {key[0]}.{key[1]} after step {step}")
            step += 1
        log.append(LogRow(epoch, step, float(sum(losses) / n), evaluate(model, data)))
    return log


def evaluate(model: ModelGraph, data) -> float:
    """Top-1 accuracy; ``argmax`` resolves ties to the smaller class id."""
    logits = model.predict(data.features)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def log_to_csv(log: list[LogRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "step", "loss", "accuracy"])
    for row in log:
        writer.writerow([row.epoch, row.step, repr(row.loss), repr(row.accuracy)])
    return buf.getvalue()


def init_dense_mlp(
    input_dim: int,
    hidden: tuple[int, ...],
    classes: int,
    seed: int = 0,
    augment_constant: bool = True,
) -> ModelGraph:
    """He-initialized bias-free MLP with layers named ``fc1``, ``fc2``, ..."""
    rng = np.random.default_rng(seed)
    widths = [input_dim + (1 if augment_constant else 0), *hidden, classes]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
        role = "input" if i == 0 else ("output" if i == len(widths) - 2 else "hidden")
        w = rng.standard_normal((d_out, d_in)) * math.sqrt(2.0 / d_in)
        layers.append(DenseLayer(f"fc{i + 1}", w, role))
    return ModelGraph(layers, input_dim, augment_constant)
