"""Configuration schema, validation, JSON round-trip."""

import json
import math

import pytest

from fedsia import config as cfg
from fedsia.dp import DpParams
from fedsia.errors import ConfigError


def test_defaults_are_valid_and_prior_falls_back_to_uniform():
    c = cfg.RunConfig()
    cfg.validate_config(c)
    assert c.framework == "fedavg" and c.clients == 10
    assert c.effective_prior() == 0.1
    assert c.replace(prior=0.25).effective_prior() == 0.25
    assert c.seeds == (0, 1, 2, 3, 4)


def test_from_dict_applies_nested_sections():
    c = cfg.config_from_dict(
        {
            "framework": "fedmd",
            "alpha": 0.5,
            "dataset": {"kind": "synthetic", "records": 500, "dim": 8, "classes": 4},
            "dp": {"clip_norm": 2.0, "noise_multiplier": 1.5, "delta": 1e-6},
            "seeds": [3, 4],
        }
    )
    assert c.framework == "fedmd"
    assert c.dataset.records == 500 and c.dataset.name == "synthetic"
    assert c.dp == DpParams(2.0, 1.5, 1e-6)
    assert c.seeds == (3, 4)


def test_unknown_keys_are_rejected_at_every_level():
    with pytest.raises(ConfigError, match="unknown config keys.*epochs"):
        cfg.config_from_dict({"epochs": 3})
    with pytest.raises(ConfigError, match="unknown dataset keys"):
        cfg.config_from_dict({"dataset": {"kind": "synthetic", "rows": 5}})
    with pytest.raises(ConfigError, match="unknown dp keys"):
        cfg.config_from_dict({"dp": {"sigma": 1.0}})


def test_validation_rejects_out_of_range_fields():
    bad = [
        {"framework": "fedprox"},
        {"clients": 0},
        {"rounds": 0},
        {"local_epochs": -1},
        {"batch_size": 0},
        {"learning_rate": 0.0},
        {"alpha": 0.0},
        {"split_ratio": 1.0},
        {"targets_per_client": 0},
        {"prior": 1.0},
        {"temperature": 0.0},
        {"seeds": []},
        {"seeds": [1, 1]},
        {"threads": 0},
        {"public_records": 0},
        {"fedmd_client_widths": []},
        {"student_hidden": [0]},
    ]
    for overrides in bad:
        with pytest.raises(ConfigError):
            cfg.config_from_dict(overrides)


def test_dataset_kind_rules():
    with pytest.raises(ConfigError, match="kind"):
        cfg.config_from_dict({"dataset": {"kind": "images"}})
    with pytest.raises(ConfigError, match="path"):
        cfg.config_from_dict({"dataset": {"kind": "csv"}})
    c = cfg.config_from_dict({"dataset": {"kind": "csv", "path": "/tmp/foo.csv"}})
    assert c.dataset.name == "foo"


def test_bad_dp_parameters_surface_as_config_errors():
    with pytest.raises(ConfigError, match="bad dp parameters"):
        cfg.config_from_dict({"dp": {"clip_norm": -1.0}})


def test_round_trip_through_dict_is_lossless():
    original = cfg.config_from_dict(
        {
            "framework": "fedsgd",
            "alpha": 100.0,
            "local_epochs": 5,
            "dp": {"clip_norm": 1.0, "noise_multiplier": 0.5, "delta": 1e-5},
            "prior": 0.2,
            "seeds": [7, 8, 9],
            "threads": 4,
        }
    )
    assert cfg.config_from_dict(cfg.config_to_dict(original)) == original
    plain = cfg.RunConfig()
    assert cfg.config_from_dict(cfg.config_to_dict(plain)) == plain


def test_load_config_reads_json_and_reports_failures(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"framework": "fedavg", "rounds": 3}))
    c = cfg.load_config(str(path))
    assert c.rounds == 3

    path.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        cfg.load_config(str(path))

    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="top level"):
        cfg.load_config(str(path))

    with pytest.raises(ConfigError, match="cannot read"):
        cfg.load_config(str(tmp_path / "absent.json"))


def test_dp_defaults_fill_missing_fields():
    c = cfg.config_from_dict({"dp": {"noise_multiplier": 2.0}})
    assert c.dp is not None
    assert math.isinf(c.dp.clip_norm)
    assert c.dp.delta == 1e-5
