"""Pydantic models of the report bundle; ``report_schema.json`` is generated from ``ReportBundle``."""

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field

STABILITY_PASS = 0.8
REPRODUCIBILITY_PASS = 0.5
GENERALIZABILITY_PASS = 0.5


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ComponentSummary(_Strict):
    label: str
    role: Optional[str] = Field(None, description="risk_on, risk_off or empty")
    stability: float = Field(ge=0, le=1, description="median I_q over the per-window fits")
    noisy: bool
    reproducibility: Optional[float] = Field(None, ge=0, le=1, description="mean cross-era matched |rho|")
    generalizability: Optional[float] = Field(None, ge=0, le=1, description="cross-brain structural overlap")
    passes_three_axis: bool
    occurrence_rate: dict[str, float] = Field(default_factory=dict, description="era -> fraction of windows with I_q above the threshold")


class EraSummary(_Strict):
    era: str
    n_windows: int = Field(ge=1)
    median_iq: list[float]
    iqr_iq: list[float]


class CrossEraEntry(_Strict):
    era_a: str
    era_b: str
    mean_abs_corr: float = Field(ge=0, le=1)
    matched_abs_corr: list[float]


class FactorSummary(_Strict):
    n_days: int
    rho_window: int
    risk_shift_amplitude: Optional[float] = None
    rho_min: Optional[float] = None
    rho_max: Optional[float] = None


class RegimeRun(_Strict):
    start: str
    end: str
    label: int
    length: int


class DmncSummary(_Strict):
    n_windows: int
    n_flagged: int
    structural_volatility_mean: Optional[float] = None
    structural_volatility_max: Optional[float] = None
    similarity_jump_max: Optional[float] = None
    baseline_windows: int = 0
    regime_k: Optional[int] = None
    regime_timeline: list[RegimeRun] = Field(default_factory=list)


class UniverseWindowReport(_Strict):
    universe: str
    window_len: int
    gica_mode: str
    components: list[ComponentSummary]
    eras: list[EraSummary]
    cross_era: list[CrossEraEntry]
    factors: Optional[FactorSummary] = None
    dmnc: Optional[DmncSummary] = None


class CrossBrainEntry(_Strict):
    window_len: int
    structural_overlap: list[float]
    structural_overlap_mean: float
    synchrony_on: Optional[float] = None
    synchrony_off: Optional[float] = None


class ReportBundle(_Strict):
    seed: int
    config: dict[str, Any]
    iq_threshold: float
    thresholds: dict[str, float] = Field(
        default_factory=lambda: {
            "stability": STABILITY_PASS,
            "reproducibility": REPRODUCIBILITY_PASS,
            "generalizability": GENERALIZABILITY_PASS,
        }
    )
    entries: list[UniverseWindowReport]
    cross_brain: list[CrossBrainEntry] = Field(default_factory=list)


def passes_three_axis(stability: float, reproducibility: Optional[float], generalizability: Optional[float]) -> bool:
    """Every axis that could be measured must clear its threshold."""
    if stability < STABILITY_PASS:
        return False
    if reproducibility is not None and reproducibility < REPRODUCIBILITY_PASS:
        return False
    return generalizability is None or generalizability >= GENERALIZABILITY_PASS
