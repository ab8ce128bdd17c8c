"""Run results, cross-seed aggregation, and deterministic emission.

One ExperimentResult captures a single seeded run: the per-round attack
success series, its peak, final-round accuracies, the overfitting measure,
and the privacy budget when the defense is on. Aggregation folds the runs of
one configuration (identical up to the seed) into means and sample standard
deviations. Emission writes CSV or JSON bytes that depend only on the rows:
wall-clock metadata goes to a sidecar file, never into the data.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset

CSV_COLUMNS = [
    "framework",
    "dataset",
    "alpha",
    "local_epochs",
    "clients",
    "rounds",
    "seed_count",
    "asr_mean",
    "asr_std",
    "max_round",
    "gen_err_mean",
    "train_acc_mean",
    "test_acc_mean",
    "dp_enabled",
    "dp_epsilon",
]


@dataclass
class ExperimentResult:
    """Everything measured in one seeded run."""

    framework: str
    dataset: str
    alpha: float
    local_epochs: int
    clients: int
    rounds: int
    seed: int
    round_asr: list[float]
    client_train_acc: list[float]
    client_test_acc: list[float]
    gen_error: float
    train_acc: float
    test_acc: float
    dp_enabled: bool = False
    dp_epsilon: float | None = None
    max_asr: float = field(init=False)
    best_round: int = field(init=False)

    def __post_init__(self):
        if len(self.round_asr) != self.rounds:
            raise ValueError(
                f"{len(self.round_asr)} round entries for {self.rounds} rounds"
            )
        if any(not 0.0 <= a <= 1.0 for a in self.round_asr):
            raise ValueError("attack success rates must lie in [0, 1]")
        best = int(np.argmax(self.round_asr))
        self.max_asr = float(self.round_asr[best])
        self.best_round = best + 1

    def config_key(self):
        return (
            self.framework,
            self.dataset,
            self.alpha,
            self.local_epochs,
            self.clients,
            self.rounds,
            self.dp_enabled,
        )


@dataclass
class SeedAggregate:
    framework: str
    dataset: str
    alpha: float
    local_epochs: int
    clients: int
    rounds: int
    seeds: list[int]
    asr_mean: float
    asr_std: float
    max_round: int
    gen_err_mean: float
    gen_err_std: float
    train_acc_mean: float
    test_acc_mean: float
    dp_enabled: bool
    dp_epsilon: float | None

    @property
    def seed_count(self) -> int:
        return len(self.seeds)


def compute_generalization_error(
    model: nn.MlpModel, train_data: Dataset, test_data: Dataset
) -> float:
    """Absolute gap between training-set and test-set accuracy."""
    train_acc = nn.eval_accuracy(model, train_data.features, train_data.labels)
    test_acc = nn.eval_accuracy(model, test_data.features, test_data.labels)
    return abs(train_acc - test_acc)


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return mean, std


def aggregate_over_seeds(results: list[ExperimentResult]) -> SeedAggregate:
    """Fold the seeded runs of one configuration into means and sample
    standard deviations (a single run reports zero spread)."""
    if not results:
        raise ValueError("nothing to aggregate")
    key = results[0].config_key()
    for r in results[1:]:
        if r.config_key() != key:
            raise ValueError(
                f"mixed configurations in one aggregate: {r.config_key()} vs {key}"
            )
    asr_mean, asr_std = _mean_std([r.max_asr for r in results])
    gen_mean, gen_std = _mean_std([r.gen_error for r in results])
    train_mean, _ = _mean_std([r.train_acc for r in results])
    test_mean, _ = _mean_std([r.test_acc for r in results])
    # Peak round of the seed-averaged series, 1-based.
    series = np.mean([r.round_asr for r in results], axis=0)
    eps_values = [r.dp_epsilon for r in results if r.dp_epsilon is not None]
    return SeedAggregate(
        framework=results[0].framework,
        dataset=results[0].dataset,
        alpha=results[0].alpha,
        local_epochs=results[0].local_epochs,
        clients=results[0].clients,
        rounds=results[0].rounds,
        seeds=[r.seed for r in results],
        asr_mean=asr_mean,
        asr_std=asr_std,
        max_round=int(np.argmax(series)) + 1,
        gen_err_mean=gen_mean,
        gen_err_std=gen_std,
        train_acc_mean=train_mean,
        test_acc_mean=test_mean,
        dp_enabled=results[0].dp_enabled,
        dp_epsilon=float(np.mean(eps_values)) if eps_values else None,
    )


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _sorted_rows(aggregates: list[SeedAggregate]) -> list[SeedAggregate]:
    # Contractual order: framework, then alpha descending, then local epochs.
    # The remaining keys only break exact ties, keeping emission total-ordered.
    return sorted(
        aggregates,
        key=lambda a: (a.framework, -a.alpha, a.local_epochs, a.dataset, a.dp_enabled),
    )


def render_results(aggregates: list[SeedAggregate], fmt: str = "csv") -> str:
    """Render aggregates as CSV or JSON text, a pure function of the rows."""
    rows = []
    for agg in _sorted_rows(aggregates):
        rows.append(
            {
                "framework": agg.framework,
                "dataset": agg.dataset,
                "alpha": agg.alpha,
                "local_epochs": agg.local_epochs,
                "clients": agg.clients,
                "rounds": agg.rounds,
                "seed_count": agg.seed_count,
                "asr_mean": agg.asr_mean,
                "asr_std": agg.asr_std,
                "max_round": agg.max_round,
                "gen_err_mean": agg.gen_err_mean,
                "train_acc_mean": agg.train_acc_mean,
                "test_acc_mean": agg.test_acc_mean,
                "dp_enabled": agg.dp_enabled,
                "dp_epsilon": agg.dp_epsilon,
            }
        )
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    raise ValueError(f"unknown output format '{fmt}', expected 'csv' or 'json'")


def emit_results(aggregates: list[SeedAggregate], fmt: str, path: str):
    text = render_results(aggregates, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def parse_results_csv(path: str) -> list[dict]:
    """Read an emitted CSV back into typed row dicts (test helper and sanity
    check that emission round-trips)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row: dict = dict(raw)
            for key in (
                "alpha",
                "asr_mean",
                "asr_std",
                "gen_err_mean",
                "train_acc_mean",
                "test_acc_mean",
            ):
                row[key] = float(raw[key])
            for key in ("local_epochs", "clients", "rounds", "seed_count", "max_round"):
                row[key] = int(raw[key])
            row["dp_enabled"] = raw["dp_enabled"] == "true"
            row["dp_epsilon"] = float(raw["dp_epsilon"]) if raw["dp_epsilon"] else None
            rows.append(row)
    return rows


def write_sidecar(path: str, config_dict: dict, wall_seconds: float, version: str):
    """Run metadata next to the data file: everything time- or host-dependent
    stays here so the data bytes depend only on the configuration."""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    meta = {
        "tool_version": version,
        "wall_time_seconds": round(wall_seconds, 3),
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "written_at_unix": int(time.time()),
        "config": config_dict,
    }
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
