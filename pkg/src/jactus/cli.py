"""Command-line interface.

Exit codes: 0 success, 1 verification or integrity failure, 2 usage error.
Any flag may also be set in a JSON ``--config`` file (keys are the flag names
with underscores); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import checkpoint, data, pipeline, verify
from .checkpoint import IntegrityError
from .nn import TrainConfig, evaluate, log_to_csv
from .statistics import RidgeConfig
from .subspace import EnergyThresholds

logger = logging.getLogger("jactus")

# flag defaults live here rather than in argparse so that --config can fill gaps
DEFAULTS = {
    "seed": 0,
    "out_dir": ".",
    "kind": "moons",
    "n": 2000,
    "classes": 2,
    "noise": 0.15,
    "rotation": 0.0,
    "output": None,
    "data": None,
    "checkpoint": None,
    "test_fraction": 0.2,
    "split_seed": 0,
    "split": "test",
    "hidden": "64,64",
    "lr": None,
    "epochs": None,
    "batch_size": 32,
    "weight_decay": 0.0,
    "retained_fraction": 0.6,
    "alpha": 0.95,
    "beta": 0.99,
    "gamma": 0.99,
    "ridge_eps": 1e-5,
    "calibration_size": 1024,
    "calibration_batch_size": 8,
    "subspace_mode": "joint",
    "alloc_mode": "global",
    "k_min": 32,
    "drop_tol": 1e-10,
    "instances": 300,
    "run_dir": None,
    "fractions": "0.4,0.6,0.8",
}


class UsageError(Exception):
    pass


def _add_split_flags(p):
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--split-seed", type=int)


def _add_train_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--weight-decay", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="JSON file with flag values")
    common.add_argument("--out-dir", help="directory for outputs")

    parser = argparse.ArgumentParser(prog="jactus", description=__doc__.splitlines()[0], parents=[common],
                                     argument_default=argparse.SUPPRESS)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common], argument_default=argparse.SUPPRESS)

    p = add("gen-data", "write a seeded synthetic dataset as CSV")
    p.add_argument("--kind", choices=data.DATA_KINDS)
    p.add_argument("--n", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--rotation", type=float, help="rotate the point cloud (degrees)")
    p.add_argument("--output", help="CSV path (default <out-dir>/data.csv)")

    p = add("train-dense", "pretrain a dense bias-free MLP")
    _add_split_flags(p)
    _add_train_flags(p)
    p.add_argument("--hidden", help="comma-separated hidden widths")

    p = add("compress", "calibrate, build union subspaces, allocate ranks, factorize")
    p.add_argument("--checkpoint", help="dense model checkpoint directory")
    _add_split_flags(p)
    p.add_argument("--retained-fraction", "-c", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--ridge-eps", type=float)
    p.add_argument("--calibration-size", type=int)
    p.add_argument("--calibration-batch-size", type=int)
    p.add_argument("--subspace-mode", choices=("joint", "weight_only", "task_only"))
    p.add_argument("--alloc-mode", choices=pipeline.ALLOC_MODES)
    p.add_argument("--k-min", type=int)
    p.add_argument("--drop-tol", type=float)

    p = add("finetune", "train only the core matrices of a compressed model")
    p.add_argument("--checkpoint", help="compressed model checkpoint directory")
    _add_split_flags(p)
    _add_train_flags(p)

    p = add("eval", "top-1 accuracy of a checkpoint")
    p.add_argument("--checkpoint")
    _add_split_flags(p)
    p.add_argument("--split", choices=("train", "test", "all"))

    p = add("verify", "run the oracle suite (and optionally check a checkpoint)")
    p.add_argument("--checkpoint", help="checkpoint directory whose blob hashes to check")
    p.add_argument("--instances", type=int, help="random allocation instances")

    p = add("report", "rank-profile CSV across a budget sweep")
    p.add_argument("--run-dir", help="directory written by `compress`")
    p.add_argument("--fractions", help="comma-separated retained fractions")
    p.add_argument("--k-min", type=int)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            file_opts = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(file_opts) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update(file_opts)
        explicit = set(file_opts)
    else:
        explicit = set()
    cli_opts = {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}
    opts.update(cli_opts)
    opts["command"] = args.command
    opts["_explicit"] = explicit | set(cli_opts)
    return opts


def _require(opts, *keys):
    for key in keys:
        if not opts.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required for {opts['command']}")


def _split(opts) -> tuple[data.Dataset, data.Dataset]:
    _require(opts, "data")
    ds = data.load_csv(opts["data"])
    return data.train_test_split(ds, opts["test_fraction"], opts["split_seed"])


def _train_config(opts, lr: float, epochs: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=lr if opts["lr"] is None else opts["lr"],
        epochs=epochs if opts["epochs"] is None else opts["epochs"],
        batch_size=opts["batch_size"],
        weight_decay=opts["weight_decay"],
        seed=opts["seed"],
    )


def pipeline_config(opts) -> pipeline.PipelineConfig:
    base = pipeline.PipelineConfig()
    return pipeline.PipelineConfig(
        thresholds=EnergyThresholds(opts["alpha"], opts["beta"], opts["gamma"]),
        ridge=RidgeConfig(opts["ridge_eps"]),
        retained_fraction=opts["retained_fraction"],
        calibration_size=opts["calibration_size"],
        calibration_batch_size=opts["calibration_batch_size"],
        subspace_mode=opts["subspace_mode"],
        alloc_mode=opts["alloc_mode"],
        k_min=opts["k_min"],
        drop_tol=opts["drop_tol"],
        seed=opts["seed"],
        finetune=dataclasses.replace(base.finetune, seed=opts["seed"]),
        pretrain=dataclasses.replace(base.pretrain, seed=opts["seed"]),
    )


def cmd_gen_data(opts) -> int:
    ds = data.generate(opts["kind"], opts["n"], opts["classes"], opts["noise"], opts["seed"], opts["rotation"])
    out = Path(opts["output"] or Path(opts["out_dir"]) / "data.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_csv(ds, out)
    print(f"wrote {len(ds)} rows to {out}")
    return 0


def cmd_train_dense(opts) -> int:
    train_data, test_data = _split(opts)
    base = pipeline.PipelineConfig().pretrain
    cfg = _train_config(opts, base.learning_rate, base.epochs)
    hidden = tuple(int(h) for h in str(opts["hidden"]).split(",") if h)
    model, log = pipeline.pretrain_dense(train_data, cfg, hidden, seed=opts["seed"])
    out = Path(opts["out_dir"])
    checkpoint.save_model(out / "model", model, {"train_config": dataclasses.asdict(cfg)})
    (out / "train_log.csv").write_text(log_to_csv(log))
    print(f"dense model: train acc {evaluate(model, train_data):.4f}, test acc {evaluate(model, test_data):.4f}")
    print(f"checkpoint written to {out / 'model'}")
    return 0


def cmd_compress(opts) -> int:
    _require(opts, "checkpoint")
    train_data, test_data = _split(opts)
    dense, _ = checkpoint.load_model(opts["checkpoint"])
    config = pipeline_config(opts)
    result = pipeline.compress(dense, train_data, config)
    accuracies = {"dense": evaluate(dense, test_data), "pre_tune": evaluate(result.model, test_data)}
    report = pipeline.compression_report(result, config, accuracies)
    out = pipeline.write_compression(opts["out_dir"], result, config, report)
    b = report["budget"]
    print(f"budget B={b['B']} used={b['used']} (core params {b['core_params']}, reported separately)")
    for layer in report["layers"]:
        print(
            f"  {layer['layer_id']}: k_w={layer['k_w']} k_i={layer['k_i']} k_o={layer['k_o']} "
            f"k_L={layer['k_l']} k_R={layer['k_r']} k_p={layer['k_p']} params={layer['params']}"
        )
    print(f"test accuracy: dense {accuracies['dense']:.4f}, compressed {accuracies['pre_tune']:.4f}")
    print(f"run written to {out}")
    return 0


def cmd_finetune(opts) -> int:
    _require(opts, "checkpoint")
    train_data, test_data = _split(opts)
    model, meta = checkpoint.load_model(opts["checkpoint"])
    base = pipeline.PipelineConfig().finetune
    cfg = _train_config(opts, base.learning_rate, base.epochs)
    pre = evaluate(model, test_data)
    log = pipeline.finetune_core(model, train_data, cfg)
    post = evaluate(model, test_data)
    out = Path(opts["out_dir"])
    extra = {k: v for k, v in meta.items() if k in ("config", "ranks")}
    extra["finetune_config"] = dataclasses.asdict(cfg)
    checkpoint.save_model(out / "model", model, extra)
    (out / "finetune_log.csv").write_text(log_to_csv(log))
    report = {"accuracy": {"pre_tune": pre, "post_tune": post}, "finetune_config": dataclasses.asdict(cfg)}
    (out / "finetune_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"test accuracy: before {pre:.4f}, after {post:.4f}")
    return 0


def cmd_eval(opts) -> int:
    _require(opts, "checkpoint", "data")
    model, _ = checkpoint.load_model(opts["checkpoint"])
    if opts["split"] == "all":
        subset = data.load_csv(opts["data"])
    else:
        train_data, test_data = _split(opts)
        subset = train_data if opts["split"] == "train" else test_data
    acc = evaluate(model, subset)
    print("checkpoint,data,split,n,accuracy")
    print(f"{opts['checkpoint']},{opts['data']},{opts['split']},{len(subset)},{acc!r}")
    return 0


def cmd_verify(opts) -> int:
    ok = True
    if opts.get("checkpoint"):
        try:
            checkpoint.load_container(opts["checkpoint"])
            print(f"[PASS] checkpoint integrity: {opts['checkpoint']}")
        except IntegrityError as exc:
            print(f"[FAIL] checkpoint integrity: {exc}")
            ok = False
    for result in verify.run_suite(opts["seed"], opts["instances"]):
        print(result.line())
        ok &= result.passed
    return 0 if ok else 1


def cmd_report(opts) -> int:
    _require(opts, "run_dir")
    fractions = [float(c) for c in str(opts["fractions"]).split(",") if c]
    # without an explicit --k-min, reuse the one recorded by `compress`
    k_min = opts["k_min"] if "k_min" in opts["_explicit"] else None
    table, summary = pipeline.rank_profile(opts["run_dir"], fractions, k_min)
    out = Path(opts["run_dir"]) / "rank_profile.csv"
    out.write_text(table)
    print(summary, end="")
    print(f"rank profile written to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-dense": cmd_train_dense,
    "compress": cmd_compress,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except IntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
