"""Risk-On / Risk-Off factor activations, index levels, risk-shift curves and cross-universe statistics."""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from resources.utils.component_registry import MatchResult, iqr, match_components
from resources.utils.errors import (
    DimensionMismatch,
    InsufficientData,
    InsufficientOverlap,
    InvalidParameter,
    LengthMismatch,
    OverflowGuard,
    WindowTooLong,
    ZeroVarianceComponent,
)
from resources.utils.group_ica import ComponentMap

logger = logging.getLogger(__name__)

INDEX_BASE = 100.0
OVERFLOW_LIMIT = 700.0
DEFAULT_RHO_WINDOW = 252
MIN_CURVE_POINTS = 4
MIN_SHARED_DATES = 30


@dataclass(frozen=True, eq=False)
class FactorSeries:
    dates: pd.DatetimeIndex
    z_on: np.ndarray
    z_off: np.ndarray
    idx_on: np.ndarray
    idx_off: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", pd.DatetimeIndex(self.dates))
        for name in ("z_on", "z_off", "idx_on", "idx_off"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (len(self.dates),):
                raise LengthMismatch(f"{name} has {value.size} points for {len(self.dates)} dates")
            object.__setattr__(self, name, value)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {"z_on": self.z_on, "z_off": self.z_off, "idx_on": self.idx_on, "idx_off": self.idx_off},
            index=self.dates,
        )
        frame.index.name = "date"
        return frame


@dataclass(frozen=True, eq=False)
class RiskShiftCurve:
    dates: pd.DatetimeIndex
    rho: np.ndarray  # NaN where undefined
    window: int = DEFAULT_RHO_WINDOW

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({f"rho{self.window}": self.rho}, index=pd.DatetimeIndex(self.dates))
        frame.index.name = "date"
        return frame


@dataclass(frozen=True, eq=False)
class EtfStockWeights:
    """ETF-to-stock weight matrix M, one row per ETF."""

    weights: np.ndarray
    etf_order: tuple
    stock_order: tuple

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (len(self.etf_order), len(self.stock_order)):
            raise DimensionMismatch(f"weights {weights.shape} vs {len(self.etf_order)} ETFs x {len(self.stock_order)} stocks")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidParameter("ETF weights must be finite and non-negative")
        if np.any(weights.sum(axis=1) > 1.0 + 1e-9):
            raise InvalidParameter("ETF weight rows must sum to at most 1")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "etf_order", tuple(self.etf_order))
        object.__setattr__(self, "stock_order", tuple(self.stock_order))


def project_returns(returns, w_on, w_off) -> tuple[np.ndarray, np.ndarray]:
    """Daily factor activations z_t = <w, r_t> for both loading vectors."""
    r = np.asarray(returns, dtype=float)
    w_on = np.asarray(w_on, dtype=float).reshape(-1)
    w_off = np.asarray(w_off, dtype=float).reshape(-1)
    if r.ndim != 2 or w_on.size != r.shape[1] or w_off.size != r.shape[1]:
        raise DimensionMismatch(f"returns {r.shape} cannot be projected on loadings of length {w_on.size}/{w_off.size}")
    if not np.all(np.isfinite(r)):
        raise InvalidParameter("returns must be finite")
    return r @ w_on, r @ w_off


def factor_index(z) -> np.ndarray:
    """Index level 100 * exp(cumulative sum of z); |cumulative sum| above the guard raises."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if not np.all(np.isfinite(z)):
        raise InvalidParameter("factor activations must be finite")
    total = np.cumsum(z)
    over = np.flatnonzero(np.abs(total) > OVERFLOW_LIMIT)
    if over.size:
        raise OverflowGuard(int(over[0]), float(total[over[0]]))
    return INDEX_BASE * np.exp(total)


def build_factor_series(dates, returns, w_on, w_off) -> FactorSeries:
    z_on, z_off = project_returns(returns, w_on, w_off)
    return FactorSeries(pd.DatetimeIndex(dates), z_on, z_off, factor_index(z_on), factor_index(z_off))


def rolling_pearson(x, y, window: int) -> np.ndarray:
    """Trailing-window Pearson correlation; NaN before the first full window and where a window is flat."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size:
        raise LengthMismatch(f"series lengths differ: {x.size} vs {y.size}")
    if window < 2:
        raise InvalidParameter("rolling window must be >= 2")
    if x.size < window:
        raise WindowTooLong(f"series of length {x.size} shorter than window {window}")

    xw = sliding_window_view(x, window)
    yw = sliding_window_view(y, window)
    xc = xw - xw.mean(axis=1, keepdims=True)
    yc = yw - yw.mean(axis=1, keepdims=True)
    num = np.sum(xc * yc, axis=1)
    den = np.sqrt(np.sum(xc * xc, axis=1) * np.sum(yc * yc, axis=1))
    rho = np.full(x.size, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho[window - 1 :] = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return np.clip(rho, -1.0, 1.0)


def risk_shift_curve(series: FactorSeries, window: int = DEFAULT_RHO_WINDOW) -> RiskShiftCurve:
    return RiskShiftCurve(series.dates, rolling_pearson(series.z_on, series.z_off, window), window)


def risk_shift_amplitude(curve: RiskShiftCurve) -> float:
    """Interquartile range of the defined points of the curve."""
    rho = np.asarray(curve.rho, dtype=float)
    defined = rho[~np.isnan(rho)]
    if defined.size < MIN_CURVE_POINTS:
        raise InsufficientData(f"risk-shift amplitude needs {MIN_CURVE_POINTS} defined points, got {defined.size}")
    return iqr(defined)


def structural_overlap(stock_map: ComponentMap, etf_map: ComponentMap, M: EtfStockWeights) -> MatchResult:
    """Match stock-space maps against ETF maps projected through M (M^T v per component)."""
    if etf_map.asset_order != M.etf_order:
        raise DimensionMismatch("ETF map columns do not follow the weight matrix rows")
    if stock_map.asset_order != M.stock_order:
        raise DimensionMismatch("stock map columns do not follow the weight matrix columns")
    projected = ComponentMap(etf_map.loadings @ M.weights, M.stock_order, etf_map.iq, etf_map.window_len)
    return match_components(stock_map, projected)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise ZeroVarianceComponent(0 if sx == 0 else 1, "synchrony pair")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def temporal_synchrony(series_a: FactorSeries, series_b: FactorSeries, min_overlap: int = MIN_SHARED_DATES) -> tuple[float, float]:
    """Full-sample correlation of (z_on, z_off) pairs over the shared dates."""
    shared = series_a.dates.intersection(series_b.dates)
    if len(shared) < min_overlap:
        raise InsufficientOverlap(f"{len(shared)} shared dates, need {min_overlap}")
    ia = series_a.dates.get_indexer(shared)
    ib = series_b.dates.get_indexer(shared)
    corr_on = pearson(series_a.z_on[ia], series_b.z_on[ib])
    corr_off = pearson(series_a.z_off[ia], series_b.z_off[ib])
    logger.debug("[XBRAIN] synchrony on %d dates: on=%.4f off=%.4f", len(shared), corr_on, corr_off)
    return corr_on, corr_off
