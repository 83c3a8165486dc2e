"""Command line interface: ``somiv {simulate,estimate,validate,study,check}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import StudyConfig, load_config, read_params, write_params
from .errors import ConfigError, SomivError
from .estim import PredictorKind, estimate, model_fit
from .harness import (CHANNELS, design_for, emit_reports, experiment_heading, experiment_seed,
                      make_validation, run_study)
from .sim import check_excitation, read_dataset_csv, run_experiment, write_dataset_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv_list(text, cast=str):
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    try:
        return [cast(t) for t in items]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid(text):
    out = []
    for part in _csv_list(text):
        if ":" in part:
            a, b, step = (int(x) for x in part.split(":"))
            out.extend(range(a, b + 1, step))
        else:
            out.append(int(part))
    return out


def build_parser():
    p = _Parser(prog="somiv", description="Simulate a surface vessel and estimate its "
                "second-order modulus model with instrumental variables.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output path")

    sp = sub.add_parser("simulate", help="generate estimation experiments as CSV files")
    common(sp)
    sp.add_argument("--wind", type=float, help="mean wind speed (m/s)")
    sp.add_argument("--samples", type=int, default=1250, help="samples per experiment")
    sp.add_argument("--experiments", type=int, help="number of experiments")
    sp.add_argument("--rep", type=int, default=0, help="repetition index for seeding")
    sp.add_argument("--validation", action="store_true",
                    help="write the undisturbed zigzag validation set instead")
    sp.add_argument("--truth", action="store_true", help="include the hidden-truth columns")

    sp = sub.add_parser("estimate", help="estimate parameters from experiment CSV files")
    common(sp)
    sp.add_argument("datasets", nargs="+", help="experiment CSV files")
    sp.add_argument("--estimators", type=_csv_list, default=["iv3"],
                    help="comma list of iv1, iv2, iv3, ls")
    sp.add_argument("--compare", action="store_true",
                    help="show errors against the configured true parameters")

    sp = sub.add_parser("validate", help="model fit on a validation set")
    common(sp)
    sp.add_argument("--params", default="true",
                    help="parameter TOML file or preset name (true, nominal)")
    sp.add_argument("dataset", nargs="?", help="validation CSV (default: generated zigzag)")

    sp = sub.add_parser("study", help="Monte Carlo fit-versus-N study")
    common(sp)
    sp.add_argument("--estimators", type=_csv_list, help="comma list of iv1, iv2, iv3, ls")
    sp.add_argument("--wind", type=lambda t: _csv_list(t, float), help="comma list of wind speeds")
    sp.add_argument("--reps", type=int, help="Monte Carlo repetitions")
    sp.add_argument("--grid", type=_grid, help="comma list of N (or start:stop:step)")
    sp.add_argument("--experiments", type=int, help="experiments per repetition")
    sp.add_argument("--jobs", type=int, help="worker processes")
    sp.add_argument("--quiet", action="store_true", help="no progress output")

    sp = sub.add_parser("check", help="excitation diagnostics for experiment CSV files")
    common(sp)
    sp.add_argument("datasets", nargs="+", help="experiment CSV files")
    sp.add_argument("--margin", type=float, default=3.0, help="amplitude margin in noise stds")
    sp.add_argument("--max-violation", type=float, default=0.01,
                    help="tolerated fraction of violating samples")
    return p


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _load_datasets(paths):
    out = []
    for path in paths:
        if not os.path.isfile(path):
            raise ConfigError(f"dataset not found: {path}")
        out.append(read_dataset_csv(path))
    return out


def cmd_simulate(args):
    cfg = _config(args)
    out = args.out or "."
    if args.samples < 4:
        raise ConfigError("--samples must be at least 4")
    os.makedirs(out, exist_ok=True)
    if args.validation:
        ds = make_validation(cfg.with_overrides(validation_length=args.samples))
        path = os.path.join(out, "validation.csv")
        write_dataset_csv(ds, path, truth=args.truth)
        print(path)
        return 0
    wind = args.wind if args.wind is not None else cfg.winds[0]
    n_exp = args.experiments or cfg.n_experiments
    noise = cfg.noise.with_wind(wind)
    for i in range(n_exp):
        ds = run_experiment(cfg.true_params, design_for(cfg, i), noise, args.samples,
                            seed=experiment_seed(cfg.seed, args.rep, i),
                            psi0=experiment_heading(i, n_exp), dt=cfg.dt)
        path = os.path.join(out, f"experiment_{i + 1}.csv")
        write_dataset_csv(ds, path, truth=args.truth)
        print(path)
    return 0


def cmd_estimate(args):
    cfg = _config(args)
    datasets = _load_datasets(args.datasets)
    kinds = [PredictorKind.parse(k) for k in args.estimators]
    truth = cfg.true_params.as_array() if args.compare else None
    chunks = []
    for kind in kinds:
        res = estimate(datasets, kind, cfg.nominal, cfg.options)
        chunks.append(res.report(truth))
        if args.out:
            path = args.out if len(kinds) == 1 else f"{os.path.splitext(args.out)[0]}_{kind.value}.toml"
            write_params(path, res.theta, header=f"estimated with {kind.value}")
    print("\n".join(chunks), end="")
    return 0


def cmd_validate(args):
    cfg = _config(args)
    params = read_params(args.params)
    if args.dataset:
        val = _load_datasets([args.dataset])[0]
    else:
        val = make_validation(cfg)
    fits = model_fit(val, params)
    lines = [f"{ch:<9} {f:10.4f}" for ch, f in zip(CHANNELS, fits)]
    text = "channel   fit\n" + "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_study(args):
    cfg = _config(args)
    over = dict(estimators=tuple(args.estimators) if args.estimators else None,
                winds=tuple(args.wind) if args.wind else None, reps=args.reps,
                grid=tuple(args.grid) if args.grid else None, n_experiments=args.experiments,
                jobs=args.jobs, out=args.out)
    try:
        cfg = cfg.with_overrides(**over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    def progress(done, total):
        if not args.quiet:
            print(f"repetition {done}/{total}", file=sys.stderr)

    res = run_study(cfg, progress)
    for path in emit_reports(res, cfg.out):
        print(path)
    return 0


def cmd_check(args):
    datasets = _load_datasets(args.datasets)
    flagged = False
    for path, ds in zip(args.datasets, datasets):
        rep = check_excitation(ds, args.margin, args.max_violation)
        print(f"== {path}")
        print(rep.format())
        flagged |= bool(rep.flagged())
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "validate": cmd_validate,
            "study": cmd_study, "check": cmd_check}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"somiv: {exc}", file=sys.stderr)
        return 1
    except (SomivError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"somiv: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
