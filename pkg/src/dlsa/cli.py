"""Command-line entry point: ``dlsa {gen-data,train,eval,ablate}``.

Exit codes: 0 success, 1 input error, 2 usage error, 3 numeric failure.
Option precedence is flags > ``--config`` file > ``--preset`` > built-in
defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import LabeledDataset, ShiftSpec, generate_shifted_pair, load_feature_csv, save_feature_csv
from .errors import ConfigError, DLSAError, EvaluationError, NumericError, ShapeError
from .network import load_checkpoint, save_checkpoint
from .trainer import VARIANTS, TrainConfig, compute_diagnostics, evaluate, run_training

log = logging.getLogger("dlsa")

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

REPORT_COLUMNS = [
    "step",
    "L_S",
    "L_M",
    "L_C",
    "total",
    "theta_M_rad",
    "B_M",
    "mean_theta_C_rad",
    "mean_B_C",
    "target_accuracy",
]
DIAGNOSTICS_COLUMNS = ["label_source", "class", "theta_deg", "B"]
ABLATION_COLUMNS = ["variant", "seed", "target_accuracy", "source_accuracy", "theta_M_rad", "B_M"]

# Desk-scale benchmark settings (C=3 rotated blobs, 8 input dims).
PRESETS = {
    "paper": {},
    "desk": {
        "learning_rate": 0.01,
        "hidden": (64, 64),
        "warmup_iterations": 100,
        "min_class_samples": 5,
    },
}

# option name -> parser for values coming from a config file
TRAIN_KEYS = {
    "alpha": float,
    "gamma": float,
    "learning_rate": float,
    "batch_size": int,
    "iterations": int,
    "warmup_iterations": int,
    "seed": int,
    "variant": str,
    "independent_dim": int,
    "latent_layer": int,
    "min_class_samples": int,
    "hidden": lambda s: tuple(int(x) for x in str(s).split(",") if x.strip()),
    "use_batchnorm": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
    "activation": str,
    "slope_term": str,
    "shared_batch_stats": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
}
SPEC_KEYS = {
    "classes": int,
    "per_class": int,
    "dim": int,
    "rotation": float,
    "translate": lambda s: [float(x) for x in str(s).split(",")],
    "std": float,
    "data_seed": int,
}
RUN_KEYS = {
    "source": str,
    "target": str,
    "synthetic": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
    "target_unlabeled": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
    "out": str,
    "checkpoint_every": int,
    "seeds": lambda s: [int(x) for x in str(s).split(",") if x.strip()],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- config plumbing ------------------------------------------------------


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    values = {}
    known = {**TRAIN_KEYS, **SPEC_KEYS, **RUN_KEYS}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = known[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults, preset, config file and explicit flags (flags win)."""
    merged: dict = {}
    preset = getattr(args, "preset", None) or "paper"
    merged.update(PRESETS[preset])
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "preset", "func", "verbose"):
            merged[key] = value
    return merged


def build_train_config(options: dict) -> TrainConfig:
    kwargs = {k: options[k] for k in TRAIN_KEYS if k in options}
    try:
        return TrainConfig(**kwargs)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def build_shift_spec(options: dict, seed: int) -> ShiftSpec:
    spec = ShiftSpec(
        num_classes=options.get("classes", 3),
        samples_per_class=options.get("per_class", 200),
        input_dim=options.get("dim", 8),
        rotation_degrees=options.get("rotation", 45.0),
        translation=tuple(options.get("translate", [3.0])),
        class_std=options.get("std", 0.5),
        seed=options.get("data_seed", seed),
    )
    try:
        spec.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return spec


def spec_to_dict(spec: ShiftSpec) -> dict:
    return {
        "num_classes": spec.num_classes,
        "samples_per_class": spec.samples_per_class,
        "input_dim": spec.input_dim,
        "rotation_degrees": spec.rotation_degrees,
        "translation": list(spec.translation),
        "class_std": spec.class_std,
        "seed": spec.seed,
    }


def load_domains(options: dict, seed: int) -> tuple[LabeledDataset, LabeledDataset, Optional[ShiftSpec]]:
    has_files = options.get("source") is not None or options.get("target") is not None
    synthetic = bool(options.get("synthetic"))
    if has_files == synthetic:
        raise UsageError("give either --source/--target files or --synthetic, not both or neither")
    if synthetic:
        spec = build_shift_spec(options, seed)
        source, target = generate_shifted_pair(spec)
        return source, target, spec
    if options.get("source") is None or options.get("target") is None:
        raise UsageError("--source and --target must be given together")
    source = load_feature_csv(options["source"], has_labels=True, domain_tag="source")
    target = load_feature_csv(
        options["target"],
        has_labels=not options.get("target_unlabeled"),
        num_classes=source.num_classes,
        domain_tag="target",
    )
    return source, target, None


# -- writers --------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            d = r.diagnostics
            writer.writerow(
                [
                    _fmt(r.step),
                    _fmt(r.l_s),
                    _fmt(r.l_m),
                    _fmt(r.l_c),
                    _fmt(r.total),
                    _fmt(d.theta_M),
                    _fmt(d.B_M),
                    _fmt(d.mean_theta_C),
                    _fmt(d.mean_B_C),
                    _fmt(r.target_accuracy),
                ]
            )


def write_diagnostics_csv(path, diagnostics, num_classes: int) -> None:
    """Per-class table (degrees), one block per label source, each closed by a mean row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIAGNOSTICS_COLUMNS)
        for diag in diagnostics:
            writer.writerow([diag.label_source, "marginal", _fmt(math.degrees(diag.theta_M)), _fmt(diag.B_M)])
            for c in range(num_classes):
                if c in diag.theta_C:
                    writer.writerow([diag.label_source, c, _fmt(math.degrees(diag.theta_C[c])), _fmt(diag.B_C[c])])
                else:
                    writer.writerow([diag.label_source, c, "", ""])
            if diag.theta_C:
                writer.writerow([diag.label_source, "mean", _fmt(math.degrees(diag.mean_theta_C)), _fmt(diag.mean_B_C)])
            else:
                writer.writerow([diag.label_source, "mean", "", ""])


def write_manifest(path, payload: dict) -> None:
    payload = {"artifact": "dlsa", "version": __version__, **payload}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    options = resolve_options(args)
    seed = options.get("seed", 0)
    spec = build_shift_spec(options, seed)
    out = Path(options.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    source, target = generate_shifted_pair(spec)
    save_feature_csv(source, out / "source.csv")
    save_feature_csv(target, out / "target.csv")
    write_manifest(out / "manifest.json", {"command": "gen-data", "seed": spec.seed, "spec": spec_to_dict(spec)})
    print(f"wrote {len(source)} source and {len(target)} target rows to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    options = resolve_options(args)
    config = build_train_config(options)
    source, target, spec = load_domains(options, config.seed)
    out = Path(options.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    every = options.get("checkpoint_every") or 0

    def on_report(report, params):
        if every and report.step % every == 0:
            save_checkpoint(out / f"model_step{report.step}.dlsa", params, config.to_dict())

    result = run_training(source, target, config, on_report=on_report)
    write_report_csv(out / "report.csv", result.reports)
    save_checkpoint(out / "model.dlsa", result.params, config.to_dict())
    diags = [compute_diagnostics(result.params, source, target, "pseudo", config, step=len(result.reports))]
    if target.labels is not None:
        diags.append(compute_diagnostics(result.params, source, target, "true", config, step=len(result.reports)))
    write_diagnostics_csv(out / "diagnostics.csv", diags, source.num_classes)
    write_manifest(
        out / "manifest.json",
        {
            "command": "train",
            "seed": config.seed,
            "config": config.to_dict(),
            "spec": spec_to_dict(spec) if spec else None,
            "source": options.get("source"),
            "target": options.get("target"),
        },
    )
    line = f"steps={len(result.reports)} source_accuracy={evaluate(result.params, source):.4f}"
    if target.labels is not None:
        line += f" target_accuracy={evaluate(result.params, target):.4f}"
    print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.model)
    dataset = load_feature_csv(args.data, has_labels=True, num_classes=params.num_classes)
    if dataset.input_dim != params.input_dim:
        raise ShapeError(f"dataset has {dataset.input_dim} features, model expects {params.input_dim}")
    print(f"accuracy={evaluate(params, dataset):.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    options = resolve_options(args)
    seeds = options.get("seeds") or [options.get("seed", 0)]
    out = Path(options.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    per_variant: dict[str, list[list[float]]] = {v: [] for v in VARIANTS}
    for variant in VARIANTS:
        for seed in seeds:
            config = build_train_config({**options, "variant": variant, "seed": seed})
            source, target, _ = load_domains(options, seed)
            if target.labels is None:
                raise EvaluationError("ablation needs target labels to score variants")
            result = run_training(source, target, config)
            diag = compute_diagnostics(result.params, source, target, "pseudo", config)
            values = [evaluate(result.params, target), evaluate(result.params, source), diag.theta_M, diag.B_M]
            per_variant[variant].append(values)
            rows.append([variant, seed, *values])
            log.info("%s seed=%s target_accuracy=%.4f", variant, seed, values[0])
    for variant in VARIANTS:
        means = np.mean(np.array(per_variant[variant]), axis=0)
        rows.append([variant, "mean", *(float(m) for m in means)])
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    for variant in VARIANTS:
        mean_row = next(r for r in rows if r[0] == variant and r[1] == "mean")
        print(f"{variant:15s} target_accuracy={mean_row[2]:.4f}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def _add_spec_flags(p):
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--rotation", type=float, help="degrees, applied to the first two feature dims")
    p.add_argument("--translate", type=lambda s: [float(x) for x in s.split(",")], help="scalar or comma list")
    p.add_argument("--std", type=float, help="per-class standard deviation")
    p.add_argument("--data-seed", dest="data_seed", type=int, help="defaults to --seed")


def _add_train_flags(p):
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--target-unlabeled", dest="target_unlabeled", action="store_true", default=None, help="target CSV has no label column")
    p.add_argument("--synthetic", action="store_true", default=None)
    _add_spec_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--warmup", dest="warmup_iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--hidden", type=TRAIN_KEYS["hidden"], help="comma-separated hidden sizes, e.g. 512,512")
    p.add_argument("--latent-layer", dest="latent_layer", type=int)
    p.add_argument("--independent-dim", dest="independent_dim", type=int)
    p.add_argument("--min-class-samples", dest="min_class_samples", type=int)
    p.add_argument("--no-batchnorm", dest="use_batchnorm", action="store_false", default=None)
    p.add_argument("--activation", choices=("relu", "identity"))
    p.add_argument("--slope-term", dest="slope_term", choices=("angle", "squared"))
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlsa", description="Deep least squares alignment for unsupervised domain adaptation.")
    parser.add_argument("--version", action="version", version=f"dlsa {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic rotated/translated source-target pair")
    _add_spec_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on two domains, write report.csv, model.dlsa, diagnostics.csv")
    _add_train_flags(p)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print accuracy of a checkpoint on a labeled feature CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run all four variants over several seeds, write ablation.csv")
    _add_train_flags(p)
    p.add_argument("--seeds", type=RUN_KEYS["seeds"], help="comma-separated, e.g. 0,1,2,3,4")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("dlsa: a command is required (gen-data, train, eval, ablate)")
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", 0) else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DLSAError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
