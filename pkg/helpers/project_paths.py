from pathlib import Path

# ----- Set project root directory -----
PROJECT_ROOT = Path(__file__).resolve().parent.parent

# ----- Config Files -----
CONFIG_FILES_DIR = PROJECT_ROOT / "config_files"

# JSON
JSON_DIR = CONFIG_FILES_DIR / "json"
TEST_DATA_MARKET_DATA_PATH = JSON_DIR / "test_data_market_data.json"
TEST_DATA_REGISTRY_PATH = JSON_DIR / "test_data_component_registry.json"
TEST_DATA_FACTORS_PATH = JSON_DIR / "test_data_factor_engine.json"
TEST_DATA_DMNC_PATH = JSON_DIR / "test_data_dmnc_engine.json"

# INI
INI_DIR = CONFIG_FILES_DIR / "ini"
RUN_INI_PATH = INI_DIR / "run.ini"
SYNTHETIC_INI_PATH = INI_DIR / "synthetic.ini"

# ----- Reports directory -----
REPORTS = PROJECT_ROOT / "reports"
ALLURE_RESULTS_PATH = REPORTS / "allure_results"
