"""Run configuration: schema, defaults, validation, JSON round-trip.

A configuration is one nested JSON document. Command-line flags may override
single fields after the file is parsed. Validation happens eagerly, before
any data generation or training, and raises ConfigError.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .dp import DpParams
from .errors import ConfigError
from .protocols import FRAMEWORKS

DEFAULT_SEEDS = [0, 1, 2, 3, 4]


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"
    records: int = 10000
    dim: int = 60
    classes: int = 10
    path: str | None = None
    label_column: str = "label"

    @property
    def name(self) -> str:
        if self.kind == "synthetic":
            return "synthetic"
        return Path(self.path).stem


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    framework: str = "fedavg"
    clients: int = 10
    rounds: int = 20
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.01
    digest_epochs: int = 1
    pretrain_epochs: int = 5
    student_epochs: int = 40
    hidden_width: int = 200
    fedmd_client_widths: tuple[int, ...] = (128, 200, 256)
    student_hidden: tuple[int, ...] = (200,)
    public_records: int = 1000
    alpha: float = 1.0
    split_ratio: float = 0.8
    targets_per_client: int = 100
    prior: float | None = None
    temperature: float = 1.0
    dp: DpParams | None = None
    seeds: tuple[int, ...] = tuple(DEFAULT_SEEDS)
    threads: int = 1

    def effective_prior(self) -> float:
        return self.prior if self.prior is not None else 1.0 / self.clients

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_DATASET_KEYS = {"kind", "records", "dim", "classes", "path", "label_column"}
_DP_KEYS = {"clip_norm", "noise_multiplier", "delta"}
_TOP_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def _parse_dataset(raw: dict) -> DatasetSpec:
    unknown = set(raw) - _DATASET_KEYS
    if unknown:
        raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
    spec = DatasetSpec(**raw)
    if spec.kind not in ("synthetic", "csv"):
        raise ConfigError(f"dataset.kind must be 'synthetic' or 'csv', got '{spec.kind}'")
    if spec.kind == "csv" and not spec.path:
        raise ConfigError("dataset.kind 'csv' requires dataset.path")
    if spec.kind == "synthetic":
        if spec.records < 1 or spec.dim < 1 or spec.classes < 2:
            raise ConfigError(
                "synthetic dataset needs records >= 1, dim >= 1, classes >= 2"
            )
    return spec


def _parse_dp(raw: dict | None) -> DpParams | None:
    if raw is None:
        return None
    unknown = set(raw) - _DP_KEYS
    if unknown:
        raise ConfigError(f"unknown dp keys: {sorted(unknown)}")
    try:
        return DpParams(
            clip_norm=float(raw.get("clip_norm", math.inf)),
            noise_multiplier=float(raw.get("noise_multiplier", 0.0)),
            delta=float(raw.get("delta", 1e-5)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad dp parameters: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values = dict(raw)
    if "dataset" in values:
        values["dataset"] = _parse_dataset(values["dataset"])
    if "dp" in values:
        values["dp"] = _parse_dp(values["dp"])
    for key in ("fedmd_client_widths", "student_hidden", "seeds"):
        if key in values:
            values[key] = tuple(values[key])
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    validate_config(config)
    return config


def validate_config(config: RunConfig):
    if config.framework not in FRAMEWORKS:
        raise ConfigError(
            f"unknown framework '{config.framework}', expected one of {FRAMEWORKS}"
        )
    if config.clients < 1:
        raise ConfigError(f"clients must be >= 1, got {config.clients}")
    if config.rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {config.rounds}")
    if config.local_epochs < 0:
        raise ConfigError(f"local_epochs must be >= 0, got {config.local_epochs}")
    if config.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {config.batch_size}")
    if not config.learning_rate > 0:
        raise ConfigError(f"learning_rate must be > 0, got {config.learning_rate}")
    if config.digest_epochs < 0 or config.pretrain_epochs < 0 or config.student_epochs < 0:
        raise ConfigError("epoch counts must be >= 0")
    if config.hidden_width < 1:
        raise ConfigError(f"hidden_width must be >= 1, got {config.hidden_width}")
    if not config.fedmd_client_widths or any(w < 1 for w in config.fedmd_client_widths):
        raise ConfigError("fedmd_client_widths must be positive")
    if any(w < 1 for w in config.student_hidden):
        raise ConfigError("student_hidden widths must be positive")
    if config.public_records < 1:
        raise ConfigError(f"public_records must be >= 1, got {config.public_records}")
    if not config.alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {config.alpha}")
    if not 0.0 < config.split_ratio < 1.0:
        raise ConfigError(f"split_ratio must lie in (0, 1), got {config.split_ratio}")
    if config.targets_per_client < 1:
        raise ConfigError(
            f"targets_per_client must be >= 1, got {config.targets_per_client}"
        )
    if config.prior is not None and not 0.0 < config.prior < 1.0:
        raise ConfigError(f"prior must lie in (0, 1), got {config.prior}")
    if not config.temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {config.temperature}")
    if not config.seeds:
        raise ConfigError("seeds must not be empty")
    if len(set(config.seeds)) != len(config.seeds):
        raise ConfigError("seeds must be distinct")
    if config.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {config.threads}")


def config_to_dict(config: RunConfig) -> dict:
    out: dict = {
        "dataset": {
            k: v
            for k, v in dataclasses.asdict(config.dataset).items()
            if v is not None
        },
        "framework": config.framework,
        "clients": config.clients,
        "rounds": config.rounds,
        "local_epochs": config.local_epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "digest_epochs": config.digest_epochs,
        "pretrain_epochs": config.pretrain_epochs,
        "student_epochs": config.student_epochs,
        "hidden_width": config.hidden_width,
        "fedmd_client_widths": list(config.fedmd_client_widths),
        "student_hidden": list(config.student_hidden),
        "public_records": config.public_records,
        "alpha": config.alpha,
        "split_ratio": config.split_ratio,
        "targets_per_client": config.targets_per_client,
        "prior": config.prior,
        "temperature": config.temperature,
        "dp": None
        if config.dp is None
        else {
            "clip_norm": config.dp.clip_norm,
            "noise_multiplier": config.dp.noise_multiplier,
            "delta": config.dp.delta,
        },
        "seeds": list(config.seeds),
        "threads": config.threads,
    }
    return out


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(raw)
