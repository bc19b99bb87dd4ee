import json

import numpy as np
import pytest

from resources.services.cli import EXIT_COMPUTATION, EXIT_INPUT, EXIT_OK, main
from resources.services.panel_store import PanelStore
from resources.services.pipeline import ConnectomePipeline
from resources.services.report_models import ReportBundle
from resources.services.run_config import SEED_ENV, RunConfig
from resources.utils.errors import RankDeficient
from resources.utils.market_data import FeatureKind, clean_bars, compute_feature, load_bars

SMALL = {
    "synth_assets": "12",
    "synth_days": "700",
    "synth_modules": "3",
    "synth_etfs": "5",
    "synth_basket_size": "3",
    "window_lengths": "40",
    "feature_kinds": "LOGRET",
    "k_ica": "3",
    "icasso_runs": "4",
    "gica_stride": "5",
    "window_fit_stride": "20",
    "eras": "E1:2005-01-01:2005-12-31;E2:2006-01-01:2007-12-31",
    "baseline_era": "E1",
    "rho_window": "120",
    "delta": "30",
    "regime_k": "2",
    "regime_restarts": "3",
    "risk_on_assets": "S001,S002",
}


def _args(command, outdir, seed, threads=1, **extra):
    args = [command, "--outdir", str(outdir), "--seed", str(seed), "--threads", str(threads), "--log-level", "WARNING"]
    for key, value in {**SMALL, **extra}.items():
        args += ["--set", f"{key}={value}"]
    return args


def _inputs(synth_dir):
    return {
        "input_bars": synth_dir / "synth" / "bars.csv",
        "etf_bars": synth_dir / "synth" / "etf_bars.csv",
        "etf_weights": synth_dir / "synth" / "etf_weights.csv",
    }


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def study(app_cfg, tmp_path_factory):
    """One synthetic market plus a full single-threaded run over it."""
    base = tmp_path_factory.mktemp("study")
    with pytest.MonkeyPatch.context() as mp:
        mp.delenv(SEED_ENV, raising=False)
        assert main(_args("synth", base / "shared", app_cfg["seed"])) == EXIT_OK
        inputs = _inputs(base / "shared")
        code = main(_args("all", base / "run_a", app_cfg["seed"], **inputs))
    assert code == EXIT_OK, f"all stages exited with {code}"
    return {"base": base, "inputs": inputs, "run": base / "run_a"}


# Positive Cases
def test_synth_writes_market_and_truth(study):
    synth = study["base"] / "shared" / "synth"
    for name in ("bars.csv", "true_mixing.csv", "etf_bars.csv", "etf_weights.csv"):
        assert (synth / name).is_file(), f"missing synth/{name}"
    assert len(load_bars(synth / "bars.csv")) == 12 * 701


def test_all_stages_write_their_artifacts(study):
    run = study["run"]
    expected = [
        "features/stock_logret_w40.csv",
        "features/stock_logret_w40.csv.meta",
        "features/etf_raw_logret.csv",
        "gica/stock_w40_reference_map.csv",
        "gica/stock_w40_activations.csv",
        "gica/stock_w40_E1_map.csv",
        "gica/stock_w40_E2_iq.csv",
        "gica/stock_w40_cross_era.csv",
        "gica/etf_w40_summary.json",
        "factors/stock_w40_factors.csv",
        "factors/stock_w40_rho120.csv",
        "dmnc/stock_w40_tensor/manifest.json",
        "dmnc/stock_w40_metrics.csv",
        "dmnc/stock_w40_order.csv",
        "dmnc/node_etf_tensor/manifest.json",
        "dmnc/node_etf_ordered_metrics.csv",
        "regimes/stock_w40_labels.csv",
        "regimes/stock_w40_timeline.csv",
        "report/report.json",
        "report/report_schema.json",
        "report/components.csv",
        "report/structural_volatility.csv",
    ]
    missing = [name for name in expected if not (run / name).is_file()]
    assert not missing, f"missing artifacts: {missing}"


def test_cli_features_equal_library_features(study):
    bars = load_bars(study["inputs"]["input_bars"])
    prices, volumes = clean_bars(bars)
    expected = compute_feature(prices, volumes, FeatureKind.LOGRET, 40)
    written = PanelStore(study["run"]).read_panel(study["run"] / "features" / "stock_logret_w40.csv")
    assert written.assets == expected.assets
    assert written.dates.equals(expected.dates)
    assert written.feature_kind is FeatureKind.LOGRET and written.window_len == 40
    assert np.allclose(written.values, expected.values, rtol=1e-15, atol=0)


def test_stock_map_carries_risk_roles(study):
    cmap = PanelStore(study["run"]).read_component_map(study["run"] / "gica" / "stock_w40_reference_map.csv", 40)
    assert cmap.risk_on is not None and cmap.risk_off is not None and cmap.risk_on != cmap.risk_off
    ref = [cmap.asset_order.index(a) for a in ("S001", "S002")]
    assert cmap.loadings[cmap.risk_on, ref].mean() > 0
    assert cmap.loadings[cmap.risk_off, ref].mean() <= 0


def test_factor_index_log_ratio_is_activation(study):
    pipeline = ConnectomePipeline(RunConfig(output_dir=str(study["run"])))
    factors = pipeline.read_factor_series("stock", 40)
    assert factors is not None
    assert np.allclose(np.log(factors.idx_on[1:] / factors.idx_on[:-1]), factors.z_on[1:], atol=1e-10)
    assert np.allclose(np.log(factors.idx_off[1:] / factors.idx_off[:-1]), factors.z_off[1:], atol=1e-10)


def test_written_tensor_is_valid(study):
    tensor = PanelStore(study["run"]).read_tensor(study["run"] / "dmnc" / "stock_w40_tensor")
    mats = tensor.matrices
    assert tensor.K == 3 and tensor.delta == 30
    assert np.nanmax(np.abs(mats - mats.transpose(0, 2, 1))) <= 1e-10
    assert np.all(np.diagonal(mats, axis1=1, axis2=2) == 1.0)
    manifest = json.loads((study["run"] / "dmnc" / "stock_w40_tensor" / "manifest.json").read_text())
    assert manifest["variance_conventions"]["structural_volatility"].startswith("population")


def test_report_validates_against_its_schema(study):
    report_dir = study["run"] / "report"
    bundle = ReportBundle.model_validate_json((report_dir / "report.json").read_text(encoding="utf-8"))
    assert json.loads((report_dir / "report_schema.json").read_text(encoding="utf-8")) == ReportBundle.model_json_schema()
    assert [(e.universe, e.window_len) for e in bundle.entries] == [("stock", 40), ("etf", 40)]
    stock = bundle.entries[0]
    assert {c.role for c in stock.components} >= {"risk_on", "risk_off"}
    assert all(set(c.occurrence_rate) == {"E1", "E2"} for c in stock.components)
    assert stock.factors is not None and stock.dmnc is not None and stock.dmnc.regime_k == 2
    assert len(bundle.cross_brain) == 1 and len(bundle.cross_brain[0].structural_overlap) == 3
    assert "output_dir" not in bundle.config and "threads" not in bundle.config


def test_rerun_with_threads_is_byte_identical(app_cfg, study, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    other = study["base"] / "run_b"
    assert main(_args("all", other, app_cfg["seed"], threads=app_cfg["threads"], **study["inputs"])) == EXIT_OK
    first, second = _tree(study["run"]), _tree(other)
    assert sorted(first) == sorted(second)
    differing = [name for name in first if first[name] != second[name]]
    assert not differing, f"files differ between runs: {differing[:5]}"


def test_env_seed_overrides_flag(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "17")
    assert main(_args("synth", tmp_path / "a", 1)) == EXIT_OK
    assert main(_args("synth", tmp_path / "b", 2)) == EXIT_OK
    assert (tmp_path / "a" / "synth" / "bars.csv").read_bytes() == (tmp_path / "b" / "synth" / "bars.csv").read_bytes()


# Negative Cases
@pytest.mark.negative
def test_missing_bars_file_exits_2(tmp_path):
    assert main(_args("features", tmp_path, 1, input_bars=tmp_path / "absent.csv")) == EXIT_INPUT


@pytest.mark.negative
def test_missing_config_file_exits_2(tmp_path):
    assert main(["features", "--config", str(tmp_path / "absent.ini")]) == EXIT_INPUT


@pytest.mark.negative
def test_era_without_data_exits_2(study, tmp_path):
    eras = "E1:1990-01-01:1990-12-31;E2:2006-01-01:2007-12-31"
    args = _args("features", tmp_path, 1, eras=eras, **study["inputs"])
    assert main(args) == EXIT_OK
    assert main(_args("gica", tmp_path, 1, eras=eras, **study["inputs"])) == EXIT_INPUT


@pytest.mark.negative
def test_k_above_asset_count_exits_2(study, tmp_path):
    extra = {"k_ica": "20", "input_bars": study["inputs"]["input_bars"]}
    assert main(_args("features", tmp_path, 1, **extra)) == EXIT_OK
    assert main(_args("gica", tmp_path, 1, **extra)) == EXIT_INPUT


@pytest.mark.negative
def test_malformed_override_exits_2(tmp_path):
    assert main(["features", "--outdir", str(tmp_path), "--set", "k_ica"]) == EXIT_INPUT


@pytest.mark.negative
def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 2


@pytest.mark.negative
@pytest.mark.parametrize("error", [RankDeficient(3, 2), RuntimeError("boom")])
def test_computation_failures_exit_1(tmp_path, monkeypatch, error):
    def fail(self, stage):
        raise error

    monkeypatch.setattr(ConnectomePipeline, "run", fail)
    assert main(_args("features", tmp_path, 1)) == EXIT_COMPUTATION
