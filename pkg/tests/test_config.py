"""Run configuration resolution and validation."""

from dataclasses import replace

import pytest

from config import RunConfig, load_run_config, parse_overrides, validate_config
from errors import ConfigurationError


def test_defaults_validate():
    assert validate_config(RunConfig()) == []


def test_file_then_overrides_then_env(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# tiny run\ngap_len = 30\nseed = 1\nsymmetric_band = yes  # bands on the median\n", encoding="utf-8")
    config = load_run_config(path, {"seed": "2", "alpha": "0.1"}, env={})
    assert (config.gap_len, config.seed, config.alpha) == (30, 2, 0.1)
    assert config.symmetric_band is True
    assert load_run_config(path, {"seed": "2"}, env={"GAPBRIDGE_SEED": "44"}).seed == 44


@pytest.mark.parametrize(
    "overrides",
    [{"gap": "7"}, {"gap_len": "seven"}, {"score_clamp_zero": "maybe"}],
)
def test_bad_values_raise(overrides):
    with pytest.raises(ConfigurationError):
        load_run_config(None, overrides, env={})


def test_parse_overrides():
    assert parse_overrides(["a=1", " b = x=y "]) == {"a": "1", "b": "x=y"}
    with pytest.raises(ConfigurationError):
        parse_overrides(["novalue"])


def test_config_file_needs_key_value(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("gap_len 30\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match=":1:"):
        load_run_config(path, env={})


@pytest.mark.parametrize(
    "changes,fragment",
    [
        ({"variant": "csdi"}, "variant"),
        ({"alpha": 1.0}, "alpha"),
        ({"ddim_eta": 0.5}, "ddim_eta"),
        ({"workers": 0}, "workers"),
        ({"generative_heads": "ddim,gan"}, "heads"),
        ({"n_days": 300}, "n_days"),
        ({"dataset": "nowhere.csv"}, "not found"),
        ({"conformal_sampler": "gibbs"}, "conformal_sampler"),
    ],
)
def test_validation_messages(changes, fragment):
    errors = validate_config(replace(RunConfig(), **changes))
    assert len(errors) == 1
    assert fragment in errors[0]


def test_heads_are_parsed():
    assert RunConfig(generative_heads=" fm , ").heads() == ["fm"]
