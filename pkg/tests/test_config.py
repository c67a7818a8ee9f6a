from __future__ import annotations

from pathlib import Path

import pytest

from tlsbath import experiments as ex
from tlsbath.config import ConfigError, apply_to_recipe, dump_config, parse_config


def test_minimal_config_resolves_defaults():
    cfg = parse_config("recipe: pair_drive_map\n")
    assert cfg.command == "sweep" and cfg.recipe == "pair_drive_map"
    d = cfg.resolved()
    assert d["solver"]["rtol"] == ex.DEFAULT_RTOL
    assert d["signal"]["window"] is None
    assert d["seed"] == 0 and d["workers"] == 1


def test_malformed_numeric_names_the_field():
    with pytest.raises(ConfigError, match="solver.rtol"):
        parse_config({"recipe": "pair_drive_map", "solver": {"rtol": "tight"}})
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"recipe": "pair_drive_map", "seed": "abc"})


def test_unknown_keys_and_recipes_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config({"recipe": "pair_drive_map", "bogus": 1})
    with pytest.raises(ConfigError, match="window"):
        parse_config({"recipe": "pair_drive_map", "signal": {"window": "blackman"}})
    with pytest.raises(ConfigError, match="unknown recipe"):
        parse_config({"recipe": "no_such_recipe"})
    with pytest.raises(ConfigError, match="simulate needs"):
        parse_config({"command": "simulate"})


def test_round_trip_through_yaml(tmp_path: Path):
    cfg = parse_config({"recipe": "pair_phase_sweep", "seed": 3, "signal": {"window": "hann"}})
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    again = parse_config(p)
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_hash_ignores_execution_settings():
    a = parse_config({"recipe": "pair_drive_map", "workers": 1, "out": "a"})
    b = parse_config({"recipe": "pair_drive_map", "workers": 8, "out": "b"})
    c = parse_config({"recipe": "pair_drive_map", "seed": 1})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_overrides_win_and_none_is_ignored():
    cfg = parse_config("recipe: pair_drive_map\nseed: 5\n", seed=None, workers=4)
    assert cfg.seed == 5 and cfg.workers == 4


def test_signal_overrides_reach_the_recipe():
    cfg = parse_config({"recipe": "pair_duration_sweep", "seed": 2, "signal": {"zero_pad_factor": 1},
                        "solver": {"rtol": 1e-7}})
    rec = apply_to_recipe(cfg, ex.get_recipe("pair_duration_sweep"))
    assert rec.seed == 2 and rec.rtol == 1e-7
    assert rec.analysis.zero_pad_factor == 1
    assert rec.analysis.min_separation == ex.get_recipe("pair_duration_sweep").analysis.min_separation


def test_unreadable_file(tmp_path: Path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        parse_config("- a\n- b\n")
