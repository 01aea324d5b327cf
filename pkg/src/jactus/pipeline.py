"""End-to-end flow: pretrain, calibrate, compress, fine-tune the cores, report.

Each stage writes its own artifact into a run directory so that ablations
can re-run only the downstream stages.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import allocator, checkpoint, subspace
from .allocator import LayerCandidate
from .data import Dataset
from .nn import DenseLayer, FactoredLayer, ModelGraph, TrainConfig, evaluate, init_dense_mlp, train
from .numerics import DEFAULT_DROP_TOL
from .statistics import DEFAULT_CALIBRATION_SIZE, LayerStatistics, RidgeConfig, collect_statistics
from .subspace import EnergyThresholds

logger = logging.getLogger(__name__)

ALLOC_MODES = ("global", "uniform")
DEFAULT_SWEEP = (0.4, 0.6, 0.8)
REPORT_COLUMNS = ["layer_id", "role", "c", "k_p", "cost"]


@dataclass(frozen=True)
class PipelineConfig:
    thresholds: EnergyThresholds = EnergyThresholds()
    ridge: RidgeConfig = RidgeConfig()
    retained_fraction: float = 0.6
    calibration_size: int = DEFAULT_CALIBRATION_SIZE
    calibration_batch_size: int = 8
    subspace_mode: str = "joint"
    alloc_mode: str = "global"
    k_min: int = allocator.DEFAULT_K_MIN
    drop_tol: float = DEFAULT_DROP_TOL
    seed: int = 0
    pretrain: TrainConfig = TrainConfig(learning_rate=1e-2, epochs=60, batch_size=32)
    finetune: TrainConfig = TrainConfig(learning_rate=5e-3, epochs=30, batch_size=32)

    def __post_init__(self):
        if not 0 < self.retained_fraction <= 1:
            raise ValueError("retained_fraction must lie in (0, 1]")
        if self.subspace_mode not in subspace.SUBSPACE_MODES:
            raise ValueError(f"subspace_mode must be one of {subspace.SUBSPACE_MODES}")
        if self.alloc_mode not in ALLOC_MODES:
            raise ValueError(f"alloc_mode must be one of {ALLOC_MODES}")
        if self.k_min < 0 or self.calibration_size < 1:
            raise ValueError("k_min must be >= 0 and calibration_size >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw)
        nested = {
            "thresholds": EnergyThresholds,
            "ridge": RidgeConfig,
            "pretrain": TrainConfig,
            "finetune": TrainConfig,
        }
        for key, typ in nested.items():
            if isinstance(raw.get(key), dict):
                raw[key] = typ(**raw[key])
        return cls(**raw)


@dataclass
class LayerOutcome:
    layer_id: str
    role: str
    d_out: int
    d_in: int
    k_w: int
    k_i: int
    k_o: int
    k_l: int
    k_r: int
    k_p: int = 0
    projected_error: float = 0.0

    @property
    def params(self) -> int:
        return self.k_p * (self.d_out + self.d_in)


@dataclass
class Compression:
    model: ModelGraph
    stats: dict
    bases: dict
    cores: dict
    candidates: list
    allocation: allocator.AllocationResult
    budget: allocator.BudgetSpec
    layers: list
    timings: dict = field(default_factory=dict)

    @property
    def core_params(self) -> int:
        return sum(layer.k_p**2 for layer in self.layers)

    @property
    def total_projected_error(self) -> float:
        return float(sum(layer.projected_error for layer in self.layers))


def pretrain_dense(
    train_data: Dataset, cfg: TrainConfig, hidden=(64, 64), seed: int = 0
) -> tuple[ModelGraph, list]:
    model = init_dense_mlp(train_data.input_dim, tuple(hidden), train_data.classes, seed=seed)
    log = train(model, train_data, cfg, trainable="all")
    return model, log


def _candidates(model, cores, k_min: int) -> list[LayerCandidate]:
    out = []
    for layer in model.layers:
        gains = cores[layer.layer_id].gains
        out.append(
            LayerCandidate(
                layer.layer_id, layer.d_out, layer.d_in, gains,
                k_min=min(k_min, len(gains)), k_max=len(gains), role=layer.role,
            )
        )
    return out


def compress(model: ModelGraph, train_data: Dataset, config: PipelineConfig, stats=None) -> Compression:
    """Replace every dense layer with a factored one under the configured budget.

    ``stats`` may be passed in to reuse statistics from an earlier run.
    """
    for layer in model.layers:
        if not isinstance(layer, DenseLayer):
            raise ValueError(f"layer {layer.layer_id} is already factored; compress expects a dense model")
    timings = {}
    t0 = time.perf_counter()
    if stats is None and config.subspace_mode != "weight_only":
        stats = collect_statistics(
            model, train_data, config.calibration_size, seed=config.seed,
            batch_size=config.calibration_batch_size,
        )
    timings["statistics"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    bases, cores, outcomes = {}, {}, []
    for layer in model.layers:
        layer_stats = stats.get(layer.layer_id) if stats else None
        try:
            basis = subspace.layer_basis(
                layer.w, layer_stats, config.subspace_mode, config.thresholds, config.ridge, config.drop_tol
            )
        except (ValueError, ArithmeticError) as exc:
            raise ValueError(f"layer {layer.layer_id}: {exc}") from exc
        bases[layer.layer_id] = basis
        cores[layer.layer_id] = subspace.project_core(layer.w, basis)
        outcomes.append(
            LayerOutcome(layer.layer_id, layer.role, layer.d_out, layer.d_in,
                         basis.k_w, basis.k_i, basis.k_o, basis.k_l, basis.k_r)
        )
    timings["subspaces"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    candidates = _candidates(model, cores, config.k_min)
    budget = allocator.derive_budget(candidates, config.retained_fraction)
    if config.alloc_mode == "global":
        allocation = allocator.allocate(candidates, budget)
    else:
        allocation = allocator.uniform_allocate(candidates, config.retained_fraction)
    timings["allocation"] = time.perf_counter() - t0

    layers = []
    for layer, outcome in zip(model.layers, outcomes):
        k_p = allocation.ranks[layer.layer_id]
        if k_p < 1:
            raise ValueError(f"layer {layer.layer_id} was allocated rank 0")
        new = subspace.assemble_layer(bases[layer.layer_id], cores[layer.layer_id], k_p, layer.layer_id, layer.role)
        outcome.k_p = k_p
        outcome.projected_error = float(np.sum((layer.w - new.weight()) ** 2))
        layers.append(new)
    compressed = ModelGraph(layers, model.input_dim, model.augment_constant)
    return Compression(compressed, stats or {}, bases, cores, candidates, allocation, budget, outcomes, timings)


def finetune_core(model: ModelGraph, train_data: Dataset, cfg: TrainConfig) -> list:
    for layer in model.layers:
        if not isinstance(layer, FactoredLayer):
            raise ValueError(f"layer {layer.layer_id} is dense; core fine-tuning needs a compressed model")
    return train(model, train_data, cfg, trainable="core")


def compression_report(result: Compression, config: PipelineConfig, accuracies: dict) -> dict:
    return {
        "config": config.to_dict(),
        "layers": [dict(dataclasses.asdict(o), params=o.params) for o in result.layers],
        "budget": {
            "retained_fraction": result.budget.retained_fraction,
            "total_dense_params": result.budget.total_compressible_params,
            "B": result.budget.budget,
            "used": result.allocation.used_params,
            "core_params": result.core_params,
        },
        "accuracy": accuracies,
        "timings": result.timings,
    }


def save_stats(path, stats: dict) -> None:
    tensors = {}
    samples = {}
    for lid, st in stats.items():
        tensors[f"{lid}.c_x"] = st.c_x
        tensors[f"{lid}.c_g"] = st.c_g
        samples[lid] = st.samples
    checkpoint.save_container(path, tensors, {"kind": "stats", "samples": samples})


def load_stats(path) -> dict:
    tensors, meta = checkpoint.load_container(path)
    return {
        lid: LayerStatistics(tensors[f"{lid}.c_x"], tensors[f"{lid}.c_g"], n)
        for lid, n in meta["samples"].items()
    }


def save_bases(path, result: Compression) -> None:
    tensors = {}
    layers = []
    for outcome in result.layers:
        lid = outcome.layer_id
        basis, core = result.bases[lid], result.cores[lid]
        tensors.update({
            f"{lid}.q_l": basis.q_l, f"{lid}.q_r": basis.q_r, f"{lid}.w_proj": core.w_proj,
            f"{lid}.u_bar": core.u_bar, f"{lid}.sigma": core.sigma, f"{lid}.v_bar": core.v_bar,
        })
        layers.append({"id": lid, "role": outcome.role, "shape": [outcome.d_out, outcome.d_in],
                       "k_w": basis.k_w, "k_i": basis.k_i, "k_o": basis.k_o})
    checkpoint.save_container(path, tensors, {"kind": "bases", "layers": layers})


def write_compression(out_dir, result: Compression, config: PipelineConfig, report: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if result.stats:
        save_stats(out / "stats", result.stats)
    save_bases(out / "bases", result)
    (out / "allocation.csv").write_text(allocator.allocation_csv(result.candidates, result.allocation))
    ranks = {o.layer_id: o.k_p for o in result.layers}
    checkpoint.save_model(out / "model", result.model, {"config": config.to_dict(), "ranks": ranks})
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return out


def rank_profile(run_dir, fractions=DEFAULT_SWEEP, k_min: int | None = None) -> tuple[str, str]:
    """Rank table across a budget sweep, from the spectra stored in ``run_dir/bases``.

    Returns ``(csv_text, summary_text)``.
    """
    run_dir = Path(run_dir)
    if not (run_dir / "bases" / checkpoint.MANIFEST).is_file():
        raise FileNotFoundError(f"{run_dir} holds no compression run (missing bases/)")
    tensors, meta = checkpoint.load_container(run_dir / "bases")
    if k_min is None:
        report_path = run_dir / "report.json"
        k_min = allocator.DEFAULT_K_MIN
        if report_path.is_file():
            k_min = json.loads(report_path.read_text())["config"]["k_min"]
    candidates = []
    for entry in meta["layers"]:
        gains = tensors[f"{entry['id']}.sigma"] ** 2
        candidates.append(LayerCandidate(entry["id"], entry["shape"][0], entry["shape"][1], gains,
                                         k_min=min(k_min, len(gains)), k_max=len(gains), role=entry["role"]))
    fractions = sorted(fractions)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    budgets = []
    lines = []
    for c in fractions:
        spec = allocator.derive_budget(candidates, c)
        result = allocator.allocate(candidates, spec)
        budgets.append(spec.budget)
        for cand in candidates:
            writer.writerow([cand.layer_id, cand.role, c, result.ranks[cand.layer_id], cand.cost])
        ranks = ", ".join(f"{k}={v}" for k, v in result.ranks.items())
        lines.append(f"c={c}: B={spec.budget} used={result.used_params} ranks: {ranks}")
    distinct = sorted(set(budgets))
    monotone = allocator.verify_monotone(candidates, distinct) if len(distinct) > 1 else True
    lines.append(f"monotone across sweep: {'yes' if monotone else 'NO'}")
    return buf.getvalue(), "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    dense_accuracy: float
    pretune_accuracy: float
    posttune_accuracy: float
    compression: Compression


def run_experiment(
    dense: ModelGraph, train_data: Dataset, test_data: Dataset, config: PipelineConfig, stats=None
) -> ExperimentResult:
    """Compress a copy of ``dense``, fine-tune its cores, and score on ``test_data``."""
    result = compress(dense, train_data, config, stats=stats)
    pre = evaluate(result.model, test_data)
    finetune_core(result.model, train_data, dataclasses.replace(config.finetune, seed=config.seed))
    post = evaluate(result.model, test_data)
    return ExperimentResult(evaluate(dense, test_data), pre, post, result)


