"""Command-line entry points.

Subcommands:
  gen-data   write a synthetic dataset to CSV
  run        one configuration, all seeds, aggregated to a single row
  sweep      cross product of alphas and local epoch counts
  defense    same configuration with and without the privacy defense

Exit codes: 0 on success, 2 for configuration or input-format problems
(including bad flags), 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
import time

from . import __version__
from .config import config_from_dict, config_to_dict, load_config
from .data import gen_synthetic, write_csv_dataset
from .dp import DpParams
from .errors import ConfigError, FormatError
from .experiment import run_experiment, run_sweep
from .report import aggregate_over_seeds, emit_results, write_sidecar


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got '{text}'")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got '{text}'")


def _load_with_overrides(args) -> "RunConfig":
    config = load_config(args.config)
    changes = {}
    if getattr(args, "framework", None):
        changes["framework"] = args.framework
    if getattr(args, "alpha", None) is not None:
        changes["alpha"] = args.alpha
    if getattr(args, "epochs", None) is not None:
        changes["local_epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
    if changes:
        config = config_from_dict({**config_to_dict(config), **_apply(changes)})
    return config


def _apply(changes: dict) -> dict:
    out = dict(changes)
    if "seeds" in out:
        out["seeds"] = list(out["seeds"])
    return out


def _cmd_gen_data(args) -> int:
    dataset = gen_synthetic(args.records, args.dim, args.classes, args.seed)
    write_csv_dataset(dataset, args.out, args.label_column)
    print(f"wrote {dataset.n} records x {dataset.dim} features to {args.out}")
    return 0


def _cmd_run(args) -> int:
    config = _load_with_overrides(args)
    started = time.monotonic()
    results = run_experiment(config)
    aggregate = aggregate_over_seeds(results)
    emit_results([aggregate], args.format, args.out)
    write_sidecar(args.out, config_to_dict(config), time.monotonic() - started, __version__)
    print(
        f"{config.framework} alpha={config.alpha}: "
        f"peak attack success {aggregate.asr_mean:.4f} "
        f"(round {aggregate.max_round}) over {aggregate.seed_count} seeds -> {args.out}"
    )
    return 0


def _cmd_sweep(args) -> int:
    config = _load_with_overrides(args)
    started = time.monotonic()
    aggregates = run_sweep(config, args.alphas, args.epochs_grid)
    emit_results(aggregates, args.format, args.out)
    write_sidecar(args.out, config_to_dict(config), time.monotonic() - started, __version__)
    print(f"{len(aggregates)} sweep cells -> {args.out}")
    return 0


def _cmd_defense(args) -> int:
    config = _load_with_overrides(args)
    try:
        params = DpParams(args.clip, args.noise, args.delta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    started = time.monotonic()
    baseline = aggregate_over_seeds(run_experiment(config.replace(dp=None)))
    defended = aggregate_over_seeds(run_experiment(config.replace(dp=params)))
    emit_results([baseline, defended], args.format, args.out)
    write_sidecar(args.out, config_to_dict(config.replace(dp=params)),
                  time.monotonic() - started, __version__)
    drop = baseline.test_acc_mean - defended.test_acc_mean
    print(
        f"attack success {baseline.asr_mean:.4f} -> {defended.asr_mean:.4f}, "
        f"test accuracy drop {drop:.4f}, epsilon/round {defended.dp_epsilon:.2f} "
        f"-> {args.out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsia",
        description="Federated learning under source inference attacks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset to CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--records", type=int, default=100000)
    p.add_argument("--dim", type=int, default=60)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-column", default="label")
    p.set_defaults(func=_cmd_gen_data)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("run", help="run one configuration over its seeds")
    common(p)
    p.add_argument("--framework", choices=("fedsgd", "fedavg", "fedmd"), default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="sweep alpha and local epoch grids")
    common(p)
    p.add_argument("--framework", choices=("fedsgd", "fedavg", "fedmd"), default=None)
    p.add_argument("--alphas", type=_float_list, default=[100.0, 1.0, 0.1])
    p.add_argument(
        "--epochs", dest="epochs_grid", type=_int_list, default=[1, 5, 10]
    )
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("defense", help="compare a run with and without the defense")
    common(p)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-5)
    p.set_defaults(func=_cmd_defense)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed the usage message; 2 doubles as the
        # configuration-error code, 0 covers --help/--version.
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
