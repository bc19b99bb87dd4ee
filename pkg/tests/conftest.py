import pytest
import logging
import configparser

import numpy as np

from helpers.config_manager import CONFIGS, DEFAULT_SECTION
from resources.utils.market_data import BARS_HEADER
from resources.utils.synth_bench import gen_synthetic_universe

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20250802
DEFAULT_TRIALS = 20


# ---------- Common utility: supports dict / SectionProxy / ConfigParser ----------
def _cfg_get(cfg, key, default=None):
    """Fetch key from cfg:
    - dict: cfg.get(key, default)
    - SectionProxy: cfg.get(key, fallback=default)
    - ConfigParser: cfg.get('run', key, fallback=default)
    """
    if cfg is None:
        return default
    if isinstance(cfg, dict):
        return cfg.get(key, default)
    if isinstance(cfg, configparser.SectionProxy):
        return cfg.get(key, fallback=default)
    if isinstance(cfg, configparser.ConfigParser):
        if cfg.has_section(DEFAULT_SECTION):
            return cfg.get(DEFAULT_SECTION, key, fallback=default)
        return default
    return default


def _to_int(val, default: int) -> int:
    try:
        return int(str(val).strip())
    except Exception:
        return default


def pytest_addoption(parser):
    parser.addoption("--seed", action="store", default=None, help="root seed for generated data")
    parser.addoption("--threads", action="store", default=None, help="worker threads for the threaded-equality checks")
    parser.addoption("--trials", action="store", default=None, help="Monte-Carlo trials per acceptance test")


@pytest.fixture(scope="session")
def app_cfg(pytestconfig):
    # First get INI values, then allow CLI options to override
    ini_cfg = CONFIGS.get("RUN_INI")

    seed_val = _to_int(pytestconfig.getoption("--seed") or _cfg_get(ini_cfg, "seed", DEFAULT_SEED), DEFAULT_SEED)
    threads_val = max(2, _to_int(pytestconfig.getoption("--threads") or 3, 3))
    trials_val = max(1, _to_int(pytestconfig.getoption("--trials") or DEFAULT_TRIALS, DEFAULT_TRIALS))

    cfg = {
        "seed": seed_val,
        "threads": threads_val,
        "trials": trials_val,
        "k_ica": _to_int(_cfg_get(ini_cfg, "k_ica", 6), 6),
        "icasso_runs": _to_int(_cfg_get(ini_cfg, "icasso_runs", 50), 50),
        "rho_window": _to_int(_cfg_get(ini_cfg, "rho_window", 252), 252),
        "delta": _to_int(_cfg_get(ini_cfg, "delta", 45), 45),
    }

    logger.info(
        "[CFG] seed=%s threads=%s trials=%s k_ica=%s icasso_runs=%s rho_window=%s delta=%s",
        cfg["seed"],
        cfg["threads"],
        cfg["trials"],
        cfg["k_ica"],
        cfg["icasso_runs"],
        cfg["rho_window"],
        cfg["delta"],
    )
    return cfg


@pytest.fixture
def rng(app_cfg):
    return np.random.default_rng(app_cfg["seed"])


@pytest.fixture(scope="session")
def synthetic_universe(app_cfg):
    return gen_synthetic_universe(n_assets=12, n_days=700, K=3, seed=app_cfg["seed"], n_etf=5, basket_size=3)


@pytest.fixture
def bars_csv(tmp_path):
    """Write bar rows (without header) to a CSV file and return its path."""

    def write(rows, name="bars.csv", header=",".join(BARS_HEADER)):
        path = tmp_path / name
        path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
        return path

    return write
