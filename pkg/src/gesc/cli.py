"""Command-line front end: train, eval, verify, gen-synth, depth-sweep.

Every command resolves its settings as command defaults < config file
< command-line flags, writes a resolved-config snapshot next to its other
artifacts, and is deterministic given config + seed (reruns produce
byte-identical metric files).  ``GESC_THREADS`` caps the numeric thread
pools and must therefore be applied before numpy is first imported, which
is why the cap lives at the top of this module and the package ``__init__``
imports lazily.

Exit codes: 0 success (for ``verify``: all hard property reports passed),
1 training failure or failed verification property, 2 config/IO errors.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

_threads = os.environ.get("GESC_THREADS", "").strip()
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import numpy as np

from .graphs import (
    DataError,
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_bundle,
    load_content_cites,
    make_rng,
    save_bundle,
)
from .model import (
    CheckpointError,
    ModelConfig,
    TrainConfig,
    TrainingError,
    accuracy_from_logits,
    init_model_params,
    load_checkpoint,
    predict_logits,
    save_checkpoint,
    train,
)
from . import verify as verification

__all__ = ["main", "resolve_config", "load_dataset", "ConfigError"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


CONFIG_DEFAULTS = {
    "dataset": None,
    "d": 64,
    "M": 4,
    "L": 2,
    "eta_sic": 0.5,
    "epsilon": 1e-4,
    "lambda_mix": 0.5,
    "attention_mode": "hybrid",
    "kappa": 0.5,
    "delta": 1.0,
    "lambda_js": 0.5,
    "T": 1.0,
    "p_edge_drop": 0.2,
    "dropout": 0.5,
    "lr": 1e-3,
    "weight_decay": 5e-4,
    "patience": 100,
    "max_epochs": 1000,
    "seed": 0,
    "param_mode": "full",
    # ablation plumbing, accepted beyond the core schema
    "mode": "full",
    "sic_position": "pre",
    "sic_rank": 1,
    "norm_epsilon": 1e-6,
}

# verify and depth-sweep default to a small instance so the property suite
# runs in seconds without a config file; an explicit file still wins
VERIFY_DEFAULTS = {"d": 16, "M": 2, "L": 2, "max_epochs": 50, "patience": 25,
                   "dropout": 0.0, "lambda_js": 0.0}

DEFAULT_SYNTH = {"num_nodes": 50, "num_classes": 2, "feature_dim": 8,
                 "target_homophily": 0.7, "mean_degree": 4.0,
                 "feature_signal_strength": 0.8}

SYNTH_KEYS = {"num_nodes", "num_classes", "feature_dim", "target_homophily",
              "mean_degree", "feature_signal_strength", "rng_seed"}

OVERRIDE_DESTS = ("seed", "d", "M", "L", "eta_sic", "lambda_js", "attention_mode")


def _load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return raw


def resolve_config(config_path, overrides: dict, command_defaults: dict | None = None) -> dict:
    """Merge defaults, optional config file, and flag overrides (in that order)."""
    resolved = dict(CONFIG_DEFAULTS)
    if command_defaults:
        resolved.update(command_defaults)
    if config_path is not None:
        resolved.update(_load_config_file(config_path))
    for key, value in overrides.items():
        if value is not None:
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"unknown override key: {key}")
            resolved[key] = value
    return resolved


def load_dataset(resolved: dict) -> Dataset:
    """Materialize the configured dataset source.

    ``dataset`` must name exactly one of: ``bundle`` (directory path),
    ``content`` + ``cites`` (two-file citation format), or ``synthetic``
    (generator spec inline; ``rng_seed`` defaults to the run seed).
    """
    src = resolved.get("dataset")
    if src is None:
        raise ConfigError("config must specify a dataset source")
    if not isinstance(src, dict):
        raise ConfigError("dataset must be an object naming its source")
    has_bundle = "bundle" in src
    has_pair = "content" in src or "cites" in src
    has_synth = "synthetic" in src
    if sum([has_bundle, has_pair, has_synth]) != 1:
        raise ConfigError(
            "dataset must name exactly one source: bundle | content+cites | synthetic")
    seed = int(resolved["seed"])
    if has_bundle:
        return load_bundle(src["bundle"], split_seed=seed)
    if has_pair:
        if "content" not in src or "cites" not in src:
            raise ConfigError("content/cites source needs both file paths")
        return load_content_cites(src["content"], src["cites"], split_seed=seed)
    spec_dict = src["synthetic"]
    if not isinstance(spec_dict, dict):
        raise ConfigError("synthetic dataset spec must be an object")
    unknown = sorted(set(spec_dict) - SYNTH_KEYS)
    if unknown:
        raise ConfigError(f"unknown synthetic spec key(s): {', '.join(unknown)}")
    spec_dict = dict(spec_dict)
    spec_dict.setdefault("rng_seed", seed)
    return generate_synthetic(SyntheticSpec(**spec_dict))


def model_config_from(resolved: dict, data: Dataset) -> ModelConfig:
    return ModelConfig(
        in_dim=data.feature_dim,
        num_classes=data.num_classes,
        dim=int(resolved["d"]),
        heads=int(resolved["M"]),
        num_layers=int(resolved["L"]),
        lambda_js=float(resolved["lambda_js"]),
        temperature=float(resolved["T"]),
        p_edge_drop=float(resolved["p_edge_drop"]),
        dropout=float(resolved["dropout"]),
        eta_sic=float(resolved["eta_sic"]),
        epsilon=float(resolved["epsilon"]),
        norm_epsilon=float(resolved["norm_epsilon"]),
        lambda_mix=float(resolved["lambda_mix"]),
        attention_mode=str(resolved["attention_mode"]),
        kappa=float(resolved["kappa"]),
        delta=float(resolved["delta"]),
        param_mode=str(resolved["param_mode"]),
        mode=str(resolved["mode"]),
        sic_position=str(resolved["sic_position"]),
        sic_rank=int(resolved["sic_rank"]),
    )


def train_config_from(resolved: dict) -> TrainConfig:
    return TrainConfig(
        lr=float(resolved["lr"]),
        weight_decay=float(resolved["weight_decay"]),
        patience=int(resolved["patience"]),
        max_epochs=int(resolved["max_epochs"]),
        seed=int(resolved["seed"]),
    )


def _ensure_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(out: Path, resolved: dict) -> None:
    (out / "config.resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _overrides(args) -> dict:
    return {key: getattr(args, key, None) for key in OVERRIDE_DESTS}


def _parse_float_list(text: str, flag: str) -> tuple:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated numbers: {exc}") from exc
    if not values:
        raise ConfigError(f"{flag} must list at least one value")
    return values


def _parse_int_list(text: str, flag: str) -> tuple:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated integers: {exc}") from exc
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"{flag} must list positive integers")
    return values


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    data = load_dataset(resolved)
    cfg = model_config_from(resolved, data)
    tcfg = train_config_from(resolved)
    params, history = train(data, cfg, tcfg)
    out = _ensure_out(args.out)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    save_checkpoint(out / "checkpoint.gesc", params, resolved)
    _write_snapshot(out, resolved)
    best = max(history, key=lambda r: (r["val_acc"], -r["epoch"]))
    print(f"trained {len(history)} epoch(s); "
          f"best val_acc {best['val_acc']:.4f} at epoch {best['epoch']}, "
          f"test_acc {best['test_acc']:.4f}")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    params, stored = load_checkpoint(args.checkpoint)
    if not isinstance(stored, dict):
        raise ConfigError("checkpoint carries no usable config object")
    resolved = resolve_config(args.config, _overrides(args),
                              command_defaults={
                                  k: v for k, v in stored.items()
                                  if k in CONFIG_DEFAULTS})
    data = load_dataset(resolved)
    lift_in = int(np.asarray(params["lift.w"]).shape[0])
    if lift_in != data.feature_dim:
        raise ConfigError(
            f"checkpoint expects {lift_in} input features, dataset has {data.feature_dim}")
    num_classes = int(np.asarray(params["readout.w"]).shape[1])
    if num_classes != data.num_classes:
        raise ConfigError(
            f"checkpoint predicts {num_classes} classes, dataset has {data.num_classes}")
    cfg = model_config_from(resolved, data)
    mask = {"train": data.train_mask, "val": data.val_mask,
            "test": data.test_mask}[args.mask]
    if not mask.any():
        raise ConfigError(f"{args.mask} mask selects no nodes")
    logits = predict_logits(params, data, cfg)
    acc = accuracy_from_logits(logits, data.labels, mask)
    out = _ensure_out(args.out)
    payload = {"mask": args.mask, "accuracy": acc,
               "num_nodes": int(mask.sum())}
    (out / "accuracy.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"accuracy[{args.mask}] = {acc:.6f} over {int(mask.sum())} node(s)")
    return 0


SELECTORS = ("gauge", "bounds", "lipschitz", "notch", "depth", "sic-grid", "all")


def _report_path(out: Path, name: str) -> Path:
    return out / (re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") + ".json")


def _ablation_trend_report(reports) -> "verification.VerificationReport":
    """Condense the no-transport-shift runs into one hard check.

    The ablation is healthy evidence only if its mean hidden-state
    deviation strictly grows with the perturbation scale; deviation is 0.0
    when the trend holds and 1.0 when it does not.
    """
    devs = [r.metrics["mean_hidden_deviation"] for r in reports]
    grows = all(b > a for a, b in zip(devs, devs[1:])) and len(devs) > 1
    return verification.VerificationReport(
        name="gauge_ablation_deviation_grows",
        trials=sum(r.trials for r in reports),
        max_deviation=0.0 if grows else 1.0,
        threshold=0.5,
        metrics={f"mean_dev_alpha_{r.metrics['alpha_scale']}": d
                 for r, d in zip(reports, devs)},
    )


def cmd_verify(args) -> int:
    resolved = resolve_config(args.config, _overrides(args),
                              command_defaults=VERIFY_DEFAULTS)
    if resolved["dataset"] is None:
        resolved["dataset"] = {"synthetic": dict(DEFAULT_SYNTH)}
    seed = int(resolved["seed"])
    out = _ensure_out(args.out)
    _write_snapshot(out, resolved)
    data = load_dataset(resolved)
    cfg = model_config_from(resolved, data)
    tcfg = train_config_from(resolved)
    selected = SELECTORS[:-1] if args.selector == "all" else (args.selector,)
    alpha_scales = (_parse_float_list(args.alpha_scales, "--alpha-scales")
                    if args.alpha_scales else (0.25, 0.5, 0.75, 1.0))
    depths = (_parse_int_list(args.depths, "--depths")
              if args.depths else (2, 4, 8, 12))

    reports = []
    if "gauge" in selected:
        params = init_model_params(cfg, data.graph.num_edges, make_rng(seed, 0))
        reports += verification.gauge_fuzz(params, data, cfg, alpha_scales,
                                           trials=100, seed=seed)
        if len(alpha_scales) >= 2:  # a single scale cannot show a trend
            ablation = verification.gauge_fuzz(params, data, cfg, alpha_scales,
                                               trials=20, seed=seed,
                                               shift_transports=False)
            reports.append(_ablation_trend_report(ablation))
    if "bounds" in selected:
        reports.append(verification.check_perhead_bound(trials=1000, seed=seed))
        reports.append(verification.check_self_component(trials=1000, seed=seed))
    if "lipschitz" in selected:
        reports.append(verification.check_lipschitz(trials=300, seed=seed))
    if "notch" in selected:
        verification.spectral_notch_probe(data, cfg, depth=6, seed=seed,
                                          csv_path=out / "spectral_notch.csv")
        print(f"wrote {out / 'spectral_notch.csv'}")
    if "depth" in selected:
        verification.depth_sweep(data, cfg, tcfg, depths=depths,
                                 csv_path=out / "depth_sweep.csv")
        print(f"wrote {out / 'depth_sweep.csv'}")
    if "sic-grid" in selected:
        verification.sic_ablation_grid(data, cfg, tcfg,
                                       csv_path=out / "sic_grid.csv")
        print(f"wrote {out / 'sic_grid.csv'}")

    all_pass = True
    for rep in reports:
        rep.save(_report_path(out, rep.name))
        status = "PASS" if rep.passed else "FAIL"
        print(f"[{status}] {rep.name}: max_deviation={rep.max_deviation:.3e} "
              f"threshold={rep.threshold:.3e} trials={rep.trials}")
        all_pass = all_pass and rep.passed
    return 0 if all_pass else 1


def cmd_gen_synth(args) -> int:
    resolved = resolve_config(args.config, _overrides(args))
    if resolved["dataset"] is None:
        resolved["dataset"] = {"synthetic": dict(DEFAULT_SYNTH)}
    src = resolved["dataset"]
    if "synthetic" not in src:
        raise ConfigError("gen-synth requires a synthetic dataset spec")
    data = load_dataset(resolved)
    out = _ensure_out(args.out)
    bundle_dir = out / "bundle"
    save_bundle(data, bundle_dir)
    _write_snapshot(out, resolved)
    print(f"wrote bundle with {data.num_nodes} nodes, "
          f"{data.graph.num_edges} edges to {bundle_dir}")
    return 0


def cmd_depth_sweep(args) -> int:
    resolved = resolve_config(args.config, _overrides(args),
                              command_defaults=VERIFY_DEFAULTS)
    if resolved["dataset"] is None:
        resolved["dataset"] = {"synthetic": dict(DEFAULT_SYNTH)}
    depths = (_parse_int_list(args.depths, "--depths")
              if args.depths else (2, 4, 8, 12))
    data = load_dataset(resolved)
    cfg = model_config_from(resolved, data)
    tcfg = train_config_from(resolved)
    out = _ensure_out(args.out)
    rows = verification.depth_sweep(data, cfg, tcfg, depths=depths,
                                    csv_path=out / "depth_sweep.csv")
    _write_snapshot(out, resolved)
    for row in rows:
        print(f"depth={row['depth']:>2} mode={row['mode']:<8} "
              f"val_acc={row['val_acc']:.4f} test_acc={row['test_acc']:.4f}")
    print(f"wrote {out / 'depth_sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")
    parser.add_argument("--out", metavar="DIR", default="runs",
                        help="output directory (default: runs)")
    parser.add_argument("--eta-sic", dest="eta_sic", type=float,
                        help="cancellation strength in [0, 1]")
    parser.add_argument("--lambda-js", dest="lambda_js", type=float,
                        help="consistency loss weight")
    parser.add_argument("--layers", dest="L", type=int, help="layer count")
    parser.add_argument("--heads", dest="M", type=int, help="attention heads")
    parser.add_argument("--dim", dest="d", type=int, help="complex width")
    parser.add_argument("--attention-mode", dest="attention_mode",
                        choices=("hybrid", "phase_aided", "phase_norm"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gesc",
        description="Train, evaluate, and verify the gauge-equivariant "
                    "graph network with self-interference cancellation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write artifacts")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--mask", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run property checks and write reports")
    _add_common(p)
    p.add_argument("selector", choices=SELECTORS)
    p.add_argument("--alpha-scales", dest="alpha_scales", metavar="S1,S2,...",
                   help="gauge perturbation scales (default 0.25,0.5,0.75,1.0)")
    p.add_argument("--depths", metavar="D1,D2,...",
                   help="depth sweep depths (default 2,4,8,12)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-synth", help="generate a synthetic graph bundle")
    _add_common(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("depth-sweep", help="train across depths, full vs additive")
    _add_common(p)
    p.add_argument("--depths", metavar="D1,D2,...",
                   help="depths to train (default 2,4,8,12)")
    p.set_defaults(func=cmd_depth_sweep)

    return parser


def main(argv=None) -> int:
    raw_threads = os.environ.get("GESC_THREADS")
    if raw_threads is not None and not (raw_threads.strip().isdigit()
                                        and int(raw_threads.strip()) > 0):
        print(f"error: GESC_THREADS must be a positive integer, "
              f"got {raw_threads!r}", file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DataError, CheckpointError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
