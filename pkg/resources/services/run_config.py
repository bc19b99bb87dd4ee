"""Run configuration: pydantic model plus the file / override / env loading chain."""

import logging
import os
from pathlib import Path
from typing import Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from helpers.config_manager import DEFAULT_SECTION, read_section
from resources.utils.component_registry import ResampleScheme
from resources.utils.dmnc_engine import SmoothingMethod, WindowFn
from resources.utils.errors import ConfigError
from resources.utils.market_data import DEFAULT_ERAS, FeatureKind, EraSpec, format_eras, parse_eras

logger = logging.getLogger(__name__)

SEED_ENV = "CONNECTOME_SEED"


def _split(value):
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return value


class RunConfig(BaseModel):
    """Every tunable of a pipeline run; defaults follow the published method where it gives one."""

    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)

    # inputs / outputs
    input_bars: str = ""
    etf_bars: str = ""
    etf_weights: str = ""
    output_dir: str = "output"

    # features
    window_lengths: tuple[int, ...] = Field((60, 90, 120), min_length=1, description="rolling window lengths w")
    feature_kinds: tuple[FeatureKind, ...] = (FeatureKind.VWAP, FeatureKind.LOGRET)
    ica_feature: FeatureKind = FeatureKind.LOGRET
    eras: str = Field(format_eras(DEFAULT_ERAS), description="label:start:end;...")

    # group ICA
    k_ica: int = Field(6, ge=1, le=64, description="K_ICA components")
    subject_rank: int = Field(0, ge=0, description="0 means k_ica")
    group_rank: int = Field(0, ge=0, description="0 means k_ica")
    icasso_runs: int = Field(50, ge=2, le=1000, description="R_runs ICA runs per consensus")
    resample_scheme: ResampleScheme = ResampleScheme.SEED_ONLY
    ica_tol: float = Field(1e-6, gt=0, lt=1)
    ica_max_iter: int = Field(4000, ge=1)
    ica_solver: Literal["fastica", "picard"] = "fastica"
    gica_mode: Literal["per_window", "global"] = "per_window"
    gica_stride: int = Field(1, ge=1)
    window_fit_stride: int = Field(1, ge=1)

    # factors
    risk_on_assets: tuple[str, ...] = ()
    risk_off_assets: tuple[str, ...] = ()
    factor_maps: Literal["era", "global"] = "era"
    rho_window: int = Field(252, ge=2, description="risk-shift rolling correlation window")
    iq_threshold: float = Field(0.9, ge=0, le=1, description="occurrence-rate I_q threshold")

    # dMNC
    delta: int = Field(45, ge=3, description="dMNC window width")
    dmnc_stride: int = Field(1, ge=1)
    window_fn: WindowFn = WindowFn.RECT
    gaussian_sigma: float = Field(0.0, ge=0, description="0 means delta / 4")
    smoothing: SmoothingMethod = SmoothingMethod.NONE
    smoothing_param: float = Field(0.0, ge=0, description="moving-average length or EWM alpha; 0 means method default")
    zscore_activations: bool = True
    absolute_weights: bool = False
    volatility_tau: int = Field(20, ge=2)
    node_dmnc: bool = True

    # regimes
    regime_k: int = Field(4, ge=1)
    regime_restarts: int = Field(10, ge=1)
    baseline_era: str = "S3"

    # run
    seed: int = Field(20250802, ge=0, lt=2**64)
    threads: int = Field(1, ge=1, le=256)

    # synthetic scenario
    synth_assets: int = Field(20, ge=2)
    synth_days: int = Field(1500, ge=10)
    synth_modules: int = Field(4, ge=1)
    synth_etfs: int = Field(0, ge=0)
    synth_basket_size: int = Field(2, ge=1)
    synth_start: str = "2005-01-03"

    @field_validator("window_lengths", "feature_kinds", "risk_on_assets", "risk_off_assets", mode="before")
    @classmethod
    def _comma_list(cls, value):
        return _split(value)

    @field_validator("window_lengths")
    @classmethod
    def _positive_windows(cls, value):
        if any(w < 2 for w in value):
            raise ValueError("window lengths must be >= 2")
        return tuple(dict.fromkeys(value))

    @field_validator("eras")
    @classmethod
    def _valid_eras(cls, value):
        parse_eras(value)
        return value

    @model_validator(mode="after")
    def _ranks(self):
        if self.k_ica > self.group_rank_value:
            raise ValueError(f"k_ica={self.k_ica} exceeds group_rank={self.group_rank_value}")
        if self.subject_rank_value > min(self.window_lengths) - 1:
            raise ValueError(f"subject_rank={self.subject_rank_value} needs windows longer than {self.subject_rank_value}")
        if self.gica_mode == "per_window" and self.group_rank_value > self.subject_rank_value:
            raise ValueError("per-window fits need group_rank <= subject_rank")
        if self.baseline_era not in [e.label for e in self.era_specs]:
            raise ValueError(f"baseline_era {self.baseline_era!r} is not one of the configured eras")
        return self

    @property
    def subject_rank_value(self) -> int:
        return self.subject_rank or self.k_ica

    @property
    def group_rank_value(self) -> int:
        return self.group_rank or self.k_ica

    @property
    def era_specs(self) -> tuple[EraSpec, ...]:
        return parse_eras(self.eras)

    @property
    def outdir(self) -> Path:
        return Path(self.output_dir)

    def stage_dir(self, stage: str) -> Path:
        return self.outdir / stage


def parse_overrides(pairs) -> dict:
    """``["key=value", ...]`` into a dict; later pairs win."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, object]] = None,
    *,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    outdir: Optional[str] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Defaults < config file < ``overrides`` < dedicated flags < CONNECTOME_SEED."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            values.update(read_section(path, DEFAULT_SECTION))
        except Exception as e:
            raise ConfigError(f"{path}: {e}") from None
    values.update(overrides or {})
    if seed is not None:
        values["seed"] = seed
    if threads is not None:
        values["threads"] = threads
    if outdir is not None:
        values["output_dir"] = outdir
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV, "").strip():
        values["seed"] = env[SEED_ENV].strip()
        logger.info("[CFG] root seed taken from %s", SEED_ENV)

    try:
        cfg = RunConfig(**values)
    except ValidationError as e:
        where = f"{path}: " if path is not None else ""
        raise ConfigError(f"{where}invalid configuration: {e}") from None
    logger.debug("[CFG] seed=%s threads=%s outdir=%s", cfg.seed, cfg.threads, cfg.output_dir)
    return cfg


def config_as_text(cfg: RunConfig) -> str:
    """Flat ``key = value`` dump of a config, round-trippable through ``load_run_config``."""
    lines = []
    for key, value in cfg.model_dump(mode="json").items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
