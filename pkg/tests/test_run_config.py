import pytest

from helpers.config_manager import CONFIGS, read_section
from helpers.project_paths import RUN_INI_PATH, SYNTHETIC_INI_PATH
from resources.services.run_config import SEED_ENV, RunConfig, config_as_text, load_run_config, parse_overrides
from resources.utils.errors import ConfigError, InputError
from resources.utils.market_data import DEFAULT_ERAS, FeatureKind


# Positive Cases
def test_defaults():
    cfg = RunConfig()
    assert cfg.window_lengths == (60, 90, 120)
    assert cfg.k_ica == 6 and cfg.icasso_runs == 50
    assert cfg.rho_window == 252 and cfg.delta == 45
    assert cfg.iq_threshold == 0.9
    assert cfg.subject_rank_value == 6 and cfg.group_rank_value == 6
    assert cfg.era_specs == DEFAULT_ERAS


def test_run_ini_matches_defaults():
    assert CONFIGS["RUN_INI"] is not None
    assert load_run_config(RUN_INI_PATH, environ={}) == RunConfig()


def test_flat_synthetic_config_loads():
    cfg = load_run_config(SYNTHETIC_INI_PATH, environ={})
    assert cfg.synth_etfs == 8 and cfg.window_lengths == (60,)
    assert cfg.feature_kinds == (FeatureKind.LOGRET,)
    assert [e.label for e in cfg.era_specs] == ["E1", "E2", "E3"]
    assert cfg.risk_on_assets == ("S001", "S002", "S003")


def test_precedence_file_overrides_flags_env(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("k_ica = 4\nseed = 1\nthreads = 2\ndelta = 30  # trailing comment\n", encoding="utf-8")
    cfg = load_run_config(path, {"k_ica": "3", "seed": "2"}, seed=3, threads=4, outdir="elsewhere", environ={})
    assert cfg.k_ica == 3 and cfg.seed == 3 and cfg.threads == 4 and cfg.delta == 30
    assert cfg.output_dir == "elsewhere"
    assert load_run_config(path, {"seed": "2"}, seed=3, environ={SEED_ENV: "99"}).seed == 99


def test_blank_env_seed_is_ignored():
    assert load_run_config(environ={SEED_ENV: "  "}).seed == RunConfig().seed


def test_text_dump_round_trips(tmp_path):
    cfg = load_run_config(overrides={"window_lengths": "40,80", "risk_on_assets": "S001,S002", "k_ica": "3"}, environ={})
    path = tmp_path / "dump.cfg"
    path.write_text(config_as_text(cfg), encoding="utf-8")
    assert load_run_config(path, environ={}) == cfg
    assert read_section(path)["window_lengths"] == "40,80"


def test_parse_overrides_later_pairs_win():
    assert parse_overrides(["a=1", "b = x=y", "a=2"]) == {"a": "2", "b": "x=y"}


# Negative Cases
@pytest.mark.negative
def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.cfg", environ={})


@pytest.mark.negative
@pytest.mark.parametrize(
    "overrides",
    [
        {"no_such_key": "1"},
        {"k_ica": "0"},
        {"k_ica": "4", "group_rank": "3"},
        {"window_lengths": "60,1"},
        {"eras": "A:2020-01-01:2020-06-30;B:2020-06-01:2020-12-31"},
        {"baseline_era": "S9"},
        {"gica_mode": "per_window", "subject_rank": "6", "group_rank": "8"},
        {"window_fn": "TRIANGLE"},
    ],
)
def test_invalid_configurations(overrides):
    with pytest.raises(ConfigError) as e:
        load_run_config(overrides=overrides, environ={})
    assert isinstance(e.value, InputError) and e.value.exit_code == 2


@pytest.mark.negative
def test_override_without_equals_sign():
    with pytest.raises(ConfigError):
        parse_overrides(["k_ica"])
