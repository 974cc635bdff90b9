"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .adaptive import BINOMIAL, EXPECTATION, CampaignResult, MembershipOracleSpec, adaptive_campaign
from .config import load_config
from .errors import ConfigError, DistInfError, ExperimentFailed
from .runner import emit_outputs, run_architecture_grid, run_epoch_sweep, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("distinf")


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.model_copy(update={"master_seed": args.seed})
    return cfg


def _write_failure(out: Path, exc: ExperimentFailed) -> None:
    if exc.partial is not None:
        emit_outputs(exc.partial, out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"error": str(exc), "context": exc.context}
    (out / "failure.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_experiment(cfg, jobs=args.jobs)
    emit_outputs(report, args.out)
    for g in report.grid_means:
        print(f"{g['attack']:>12}  mean accuracy {g['accuracy']:.3f}  mean n_leaked {g['nleaked']:.2f}")
    return EXIT_OK


def cmd_epoch_sweep(args) -> int:
    cfg = _load(args)
    series, report = run_epoch_sweep(cfg, jobs=args.jobs)
    emit_outputs(report, args.out)
    for epoch, attack, acc in series:
        print(f"epoch {epoch:>4}  {attack:>12}  {acc:.3f}")
    return EXIT_OK


def cmd_arch_grid(args) -> int:
    cfg = _load(args)
    if cfg.architecture_grid is None:
        raise ConfigError("config has no architecture_grid section")
    g = cfg.architecture_grid
    result = run_architecture_grid(cfg, g.victim_models, g.adversary_models, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for attack, matrix in result["matrix"].items():
        for i, row in enumerate(matrix):
            for j, acc in enumerate(row):
                rows.append([attack, i, j, repr(acc)])
                print(f"{attack:>12}  victim {i} adversary {j}  {acc:.3f}")
    with (out / "grid.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attack", "victim_spec", "adversary_spec", "mean_accuracy"])
        w.writerows(rows)
    for (i, j), rep in result["reports"]:
        emit_outputs(rep, out / f"cell_{i}_{j}")
    return EXIT_OK


def cmd_adaptive(args) -> int:
    try:
        oracle = MembershipOracleSpec(beta=args.beta, fpr=args.fpr, seed=args.seed, mode=args.mode)
        result = adaptive_campaign(args.alpha, args.m, oracle, args.trials, tau=args.tau)
    except DistInfError as exc:
        raise ConfigError(str(exc)) from None
    print(f"mse {result.mse:.6g}  nleaked_reg {result.nleaked_reg:.4g}  binary accuracy {result.binary_accuracy:.3f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CampaignResult.CSV_COLUMNS)
            w.writerows(result.csv_rows())
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: ok ({cfg.name}, {len(cfg.alpha1_grid)} alpha1 values, {len(cfg.attacks)} attacks)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distinf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override master_seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for model training")
        sp.set_defaults(fn=fn)

    experiment("run", cmd_run, "run one experiment over the alpha1 grid")
    experiment("epoch-sweep", cmd_epoch_sweep, "attack accuracy per victim training epoch")
    experiment("arch-grid", cmd_arch_grid, "victim x adversary architecture grid")

    ad = sub.add_parser("adaptive", help="membership-inference adversary against under-sampling")
    ad.add_argument("--alpha", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9])
    ad.add_argument("--m", type=int, default=100, help="known members per attribute")
    ad.add_argument("--beta", type=float, default=1.0)
    ad.add_argument("--fpr", type=float, default=0.0)
    ad.add_argument("--mode", choices=[EXPECTATION, BINOMIAL], default=BINOMIAL)
    ad.add_argument("--trials", type=int, default=1000)
    ad.add_argument("--tau", type=float, default=0.03)
    ad.add_argument("--seed", type=int, default=0)
    ad.add_argument("--out", default=None, help="campaign CSV path")
    ad.set_defaults(fn=cmd_adaptive)

    va = sub.add_parser("validate", help="lint a config file")
    va.add_argument("config")
    va.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            try:
                _write_failure(Path(out), exc)
            except OSError as io_exc:
                print(f"could not persist partial results: {io_exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (DistInfError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
