import json
import logging
from configparser import ConfigParser, Error as ConfigParserError
from functools import lru_cache
from pathlib import Path
from typing import Union

from helpers.project_paths import (
    RUN_INI_PATH,
    SYNTHETIC_INI_PATH,
    TEST_DATA_DMNC_PATH,
    TEST_DATA_FACTORS_PATH,
    TEST_DATA_MARKET_DATA_PATH,
    TEST_DATA_REGISTRY_PATH,
)

logger = logging.getLogger(__name__)

DEFAULT_SECTION = "run"


def parse_flat_config(text: str, section: str = DEFAULT_SECTION) -> ConfigParser:
    """Parse INI text; a file without any section header is read as ``[run]``."""
    config = ConfigParser(interpolation=None, delimiters=("=",), inline_comment_prefixes=("#",))
    stripped = [line.strip() for line in text.splitlines()]
    first = next((line for line in stripped if line and not line.startswith(("#", ";"))), "")
    if not first.startswith("["):
        text = f"[{section}]\n" + text
    config.read_string(text)
    return config


def read_section(path: Union[str, Path], section: str = DEFAULT_SECTION) -> dict:
    """Key/value pairs of one section of a (possibly flat) config file."""
    config = parse_flat_config(Path(path).read_text(encoding="utf-8"), section)
    if not config.has_section(section):
        return {}
    return dict(config.items(section))


# ----- Lazy Loading Functions -----
@lru_cache()
def get_config(path: str, encoding="utf-8") -> ConfigParser:
    """Loads an INI configuration file lazily to prevent FileNotFoundError."""
    try:
        return parse_flat_config(Path(path).read_text(encoding=encoding))
    except (FileNotFoundError, ConfigParserError):
        logger.warning("Configuration file not found or invalid: %s", path)
        return None


# ----- Lazy Loading Functions -----
@lru_cache()
def get_json(path: str, encoding: str = "utf-8") -> Union[dict, list]:
    """Lazily load a JSON file, return {} if not found or parse error."""
    try:
        with open(path, "r", encoding=encoding) as f:
            return json.load(f)
    except (FileNotFoundError, json.JSONDecodeError):
        logger.warning("JSON file not found or invalid: %s", path)
        return {}


# ----- Centralized Configuration Management (Lazy Loading) -----
CONFIGS = {
    "RUN_INI": get_config(RUN_INI_PATH),
    "SYNTHETIC_INI": get_config(SYNTHETIC_INI_PATH),
}

JSON_DATA = {
    "TEST_DATA_MARKET_DATA": get_json(TEST_DATA_MARKET_DATA_PATH),
    "TEST_DATA_COMPONENT_REGISTRY": get_json(TEST_DATA_REGISTRY_PATH),
    "TEST_DATA_FACTOR_ENGINE": get_json(TEST_DATA_FACTORS_PATH),
    "TEST_DATA_DMNC_ENGINE": get_json(TEST_DATA_DMNC_PATH),
}
