"""Command-line surface: fit-base, train, reconstruct, sample, metrics,
selfcheck."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from typing import List, Optional

import numpy as np

from .basedist import AtomCountTable
from .engine import (
    RunConfig,
    generate_dng_many,
    reconstruct_csp_many,
    train,
)
from .errors import FlowcrystError
from .flowmatch import LossWeights
from .io import (
    config_hash,
    fit_prior_from_split,
    load_crystals,
    load_dataset,
    load_prior,
    save_generated,
    save_prior,
)
from .metrics import MatchTolerances, compute_report
from .net import NetConfig, load_checkpoint, save_checkpoint
from .state import Mode

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64

_BOOL_FIELDS = {"anneal_a", "anneal_f", "anneal_l"}
_INT_FIELDS = {"epochs", "batch_size", "steps", "seed"}
_WEIGHT_KEYS = {"lambda_a", "lambda_f", "lambda_l", "lambda_sce"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit((EXIT_USAGE, message))


def read_config_file(path) -> dict:
    """Flat key=value lines mirroring RunConfig field names."""
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FlowcrystError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def build_run_config(args, file_values: dict) -> RunConfig:
    """Merge config-file values and CLI overrides into a RunConfig."""
    valid = {f.name for f in dataclasses.fields(RunConfig)} | _WEIGHT_KEYS
    unknown = set(file_values) - valid
    if unknown:
        raise FlowcrystError(f"unknown config keys {sorted(unknown)}")
    merged: dict = {}
    weights: dict = {}
    for key, val in file_values.items():
        if key in _WEIGHT_KEYS:
            weights[key] = float(val)
        elif key == "mode":
            merged[key] = Mode(val)
        elif key in _BOOL_FIELDS:
            merged[key] = val.lower() in ("1", "true", "yes")
        elif key in _INT_FIELDS:
            merged[key] = int(val)
        else:
            merged[key] = float(val)
    cli_overrides = {
        "mode": Mode(args.mode) if getattr(args, "mode", None) else None,
        "learning_rate": getattr(args, "lr", None),
        "weight_decay": getattr(args, "weight_decay", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "steps": getattr(args, "steps", None),
        "anneal_slope": getattr(args, "slope", None),
        "seed": getattr(args, "seed", None),
    }
    merged.update({k: v for k, v in cli_overrides.items() if v is not None})
    anneal = getattr(args, "anneal", None)
    if anneal is not None:
        groups = [g for g in anneal.split(",") if g]
        bad = set(groups) - {"a", "f", "l"}
        if bad:
            raise FlowcrystError(f"unknown anneal groups {sorted(bad)}")
        for g in ("a", "f", "l"):
            merged[f"anneal_{g}"] = g in groups
    mode = merged.get("mode", Mode.CSP)
    if weights:
        defaults = (
            LossWeights.csp_default() if mode == Mode.CSP else LossWeights.dng_default()
        )
        merged["weights"] = dataclasses.replace(defaults, **weights)
    elif "weights" not in merged:
        merged["weights"] = (
            LossWeights.csp_default() if mode == Mode.CSP else LossWeights.dng_default()
        )
    env_seed = os.environ.get("FLOWCRYST_SEED")
    if env_seed is not None:
        merged["seed"] = int(env_seed)
    return RunConfig(**merged)


def run_config_dict(config: RunConfig) -> dict:
    d = dataclasses.asdict(config)
    d["mode"] = config.mode.value
    d["weights"] = dataclasses.asdict(config.weights)
    return d


def _hash_and_seed(config: RunConfig) -> dict:
    d = run_config_dict(config)
    flat = {k: v for k, v in d.items() if k != "weights"}
    flat.update({f"weights.{k}": v for k, v in d["weights"].items()})
    return {"config": d, "config_hash": config_hash(flat), "seed": config.seed}


def cmd_fit_base(args) -> int:
    splits, table, manifest = load_dataset(args.data)
    prior = fit_prior_from_split(splits["train"])
    seed = int(os.environ.get("FLOWCRYST_SEED", args.seed))
    meta = {
        "seed": seed,
        "config_hash": config_hash({"data": os.path.basename(args.data), "seed": seed}),
        "records": manifest.record_count,
        "splits": manifest.split_counts,
    }
    save_prior(args.out, prior, table, meta)
    print(f"fit-base: {manifest.record_count} records -> {args.out}")
    if manifest.rejected:
        print(f"fit-base: rejected {len(manifest.rejected)} records", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    splits, _, _ = load_dataset(args.data)
    prior, _, _ = load_prior(args.prior)
    config = build_run_config(args, read_config_file(args.config) if args.config else {})
    net_config = NetConfig.desk(
        config.mode, hidden_dim=args.hidden, layers=args.layers
    )
    model, log = train(config, splits["train"], prior, net_config=net_config)
    save_checkpoint(args.out, model, extra=_hash_and_seed(config))
    if args.log:
        with open(args.log, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(log[0]))
            writer.writeheader()
            writer.writerows(log)
    print(f"train: {len(log)} epochs, final loss {log[-1]['loss']:.6g} -> {args.out}")
    return EXIT_OK


def _generation_header(config: RunConfig, results) -> dict:
    reasons: dict = {}
    for r in results:
        if not r.valid:
            reasons[r.reason] = reasons.get(r.reason, 0) + 1
    header = _hash_and_seed(config)
    header.update(
        {
            "requested": len(results),
            "n_valid": sum(r.valid for r in results),
            "invalid_reasons": reasons,
        }
    )
    return header


def cmd_reconstruct(args) -> int:
    model = load_checkpoint(args.ckpt)
    prior, _, _ = load_prior(args.prior)
    config = build_run_config(args, read_config_file(args.config) if args.config else {})
    splits, _, _ = load_dataset(args.data)
    refs = splits[args.split]
    rng = np.random.default_rng(config.seed)
    by_n: dict = {}
    for i, c in enumerate(refs):
        by_n.setdefault(c.n_atoms, []).append(i)
    results: List[Optional[object]] = [None] * len(refs)
    for n, indices in by_n.items():
        outs = reconstruct_csp_many(
            model, [refs[i].atoms.kinds for i in indices], prior, config, rng
        )
        for j, i in enumerate(indices):
            results[i] = outs[j]
    crystals = [r.crystal for r in results if r.valid]
    save_generated(args.out, crystals, _generation_header(config, results))
    print(f"reconstruct: {len(crystals)}/{len(refs)} valid -> {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    model = load_checkpoint(args.ckpt)
    prior, table, _ = load_prior(args.prior)
    config = build_run_config(args, read_config_file(args.config) if args.config else {})
    rng = np.random.default_rng(config.seed)
    results = generate_dng_many(model, table, prior, config, rng, args.count)
    crystals = [r.crystal for r in results if r.valid]
    save_generated(args.out, crystals, _generation_header(config, results))
    print(f"sample: {len(crystals)}/{args.count} valid -> {args.out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    generated, _ = load_crystals(args.generated)
    references, _ = load_crystals(args.references)
    tol = MatchTolerances(stol=args.stol, angle_tol=args.angle_tol, ltol=args.ltol)
    report = compute_report(generated, references, tol)
    with open(args.out, "w") as fh:
        fh.write(report.to_json() + "\n")
    if args.hist_csv:
        report.histogram_csv(args.hist_csv)
    print(f"metrics: -> {args.out}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck()
    failures = 0
    for name, ok, detail in results:
        if ok:
            print(f"ok   {name}")
        else:
            failures += 1
            print(f"FAIL {name}: {detail}")
    print(f"selfcheck: {len(results) - failures}/{len(results)} properties passed")
    return EXIT_OK if failures == 0 else EXIT_VALIDATION


def _add_run_options(p: argparse.ArgumentParser, training: bool):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--mode", choices=["csp", "dng"])
    p.add_argument("--steps", type=int, help="integration steps")
    p.add_argument("--anneal", help="comma list of groups to anti-anneal (a,f,l)")
    p.add_argument("--slope", type=float, help="anti-anneal slope s'")
    p.add_argument("--seed", type=int)
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float, dest="weight_decay")
        p.add_argument("--hidden", type=int, default=64)
        p.add_argument("--layers", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowcryst", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-base", help="fit the base distribution from data")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_fit_base)

    p = sub.add_parser("train", help="train the vector field")
    p.add_argument("--data", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log CSV path")
    _add_run_options(p, training=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("reconstruct", help="CSP: structures for compositions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--data", required=True, help="reference corpus for compositions")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    _add_run_options(p, training=False)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("sample", help="DNG: generate crystals de novo")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_run_options(p, training=False)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("metrics", help="score a generated corpus")
    p.add_argument("--generated", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hist-csv", dest="hist_csv")
    p.add_argument("--stol", type=float, default=0.5)
    p.add_argument("--angle-tol", type=float, default=10.0, dest="angle_tol")
    p.add_argument("--ltol", type=float, default=0.3)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("selfcheck", help="run the cross-module invariant suite")
    p.set_defaults(fn=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, tuple):
            code, message = exc.code
            print(f"error: {message}", file=sys.stderr)
            return code
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.fn(args)
    except (FlowcrystError, FileNotFoundError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
