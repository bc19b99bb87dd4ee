"""Daily bar ingestion, rolling-window features, panel cleaning and era segmentation."""

import io
import logging
import math
import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from os import PathLike
from typing import BinaryIO, Iterable, Sequence, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from resources.utils.errors import (
    DuplicateKey,
    EmptyEra,
    InvalidParameter,
    MalformedRow,
    NonPositivePrice,
    UnfillableColumn,
    WindowTooLong,
    ZeroVolumeWindow,
)

logger = logging.getLogger(__name__)

BARS_HEADER = ("date", "ticker", "adj_close", "close", "volume")
VALID_ROW_PERCENT = 95


class FeatureKind(str, Enum):
    VWAP = "VWAP"
    LOGRET = "LOGRET"
    RAW_LOGRET = "RAW_LOGRET"
    PRICE = "PRICE"


@dataclass(frozen=True)
class DailyBar:
    date: date
    ticker: str
    adj_close: float
    close: float
    volume: float


@dataclass(frozen=True, eq=False)
class AssetPanel:
    """Date-indexed T x K matrix of one feature, one column per asset."""

    dates: pd.DatetimeIndex
    assets: tuple
    values: np.ndarray
    feature_kind: FeatureKind
    window_len: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "dates", pd.DatetimeIndex(self.dates))
        if values.shape != (len(self.dates), len(self.assets)):
            raise InvalidParameter(f"panel values {values.shape} do not match {len(self.dates)} dates x {len(self.assets)} assets")
        if not self.dates.is_monotonic_increasing or self.dates.has_duplicates:
            raise InvalidParameter("panel dates must be strictly increasing")
        if self.window_len < 1:
            raise InvalidParameter("window_len must be positive")

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, index=self.dates, columns=list(self.assets))
        frame.index.name = "date"
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, feature_kind: FeatureKind, window_len: int = 1) -> "AssetPanel":
        return cls(
            dates=pd.DatetimeIndex(frame.index),
            assets=tuple(str(c) for c in frame.columns),
            values=frame.to_numpy(dtype=float),
            feature_kind=FeatureKind(feature_kind),
            window_len=window_len,
        )

    def select_assets(self, assets: Sequence[str]) -> "AssetPanel":
        missing = [a for a in assets if a not in self.assets]
        if missing:
            raise InvalidParameter(f"assets not in panel: {missing}")
        idx = [self.assets.index(a) for a in assets]
        return AssetPanel(self.dates, tuple(assets), self.values[:, idx], self.feature_kind, self.window_len)


@dataclass(frozen=True)
class EraSpec:
    label: str
    start_date: date
    end_date: date

    def __post_init__(self):
        if self.start_date > self.end_date:
            raise InvalidParameter(f"era {self.label}: start {self.start_date} after end {self.end_date}")


DEFAULT_ERAS = (
    EraSpec("S1", date(2005, 1, 1), date(2009, 12, 31)),
    EraSpec("S2", date(2010, 1, 1), date(2014, 12, 31)),
    EraSpec("S3", date(2015, 1, 1), date(2019, 12, 31)),
    EraSpec("S4", date(2020, 1, 1), date(2021, 12, 31)),
    EraSpec("S5", date(2022, 1, 1), date(2025, 12, 31)),
)


# ---------- ingestion ----------


def _parse_float(raw: str, name: str, line: int) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise MalformedRow(line, f"{name}={raw!r} is not a number") from None
    if not math.isfinite(value):
        raise MalformedRow(line, f"{name}={raw!r} is not finite")
    return value


def load_bars(csv_source: Union[BinaryIO, bytes, str, PathLike]) -> list[DailyBar]:
    """Parse a ``date,ticker,adj_close,close,volume`` CSV into bars, in file order.

    ``csv_source`` may be a binary stream, raw bytes, or a path.
    """
    if isinstance(csv_source, bytes):
        csv_source = io.BytesIO(csv_source)
    try:
        frame = pd.read_csv(csv_source, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True)
    except pd.errors.ParserError as e:
        found = re.search(r"line (\d+)", str(e))
        raise MalformedRow(int(found.group(1)) if found else 0, str(e).strip()) from None
    except pd.errors.EmptyDataError:
        raise MalformedRow(1, "empty input, header missing") from None
    header = tuple(c.strip() for c in frame.columns)
    if header != BARS_HEADER:
        raise MalformedRow(1, f"expected header {','.join(BARS_HEADER)}, got {','.join(header)}")

    bars: list[DailyBar] = []
    seen: dict[tuple, int] = {}
    # line 1 is the header
    for line, row in enumerate(frame.itertuples(index=False, name=None), start=2):
        raw_date, ticker, raw_adj, raw_close, raw_vol = (str(v).strip() for v in row)
        try:
            day = date.fromisoformat(raw_date)
        except ValueError:
            raise MalformedRow(line, f"date={raw_date!r} is not ISO-8601") from None
        if not ticker:
            raise MalformedRow(line, "empty ticker")
        adj_close = _parse_float(raw_adj, "adj_close", line)
        close = _parse_float(raw_close, "close", line)
        volume = _parse_float(raw_vol, "volume", line)
        if adj_close <= 0 or close <= 0:
            raise NonPositivePrice(f"non-positive price for {ticker} on {day}", line=line)
        if volume < 0:
            raise MalformedRow(line, f"volume={raw_vol!r} is negative")
        key = (day, ticker)
        if key in seen:
            raise DuplicateKey(day, ticker, line=line)
        seen[key] = line
        bars.append(DailyBar(day, ticker, adj_close, close, volume))

    logger.info("[BARS] parsed %d bars, %d tickers", len(bars), len({b.ticker for b in bars}))
    return bars


def bars_to_frames(bars: Iterable[DailyBar]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Pivot bars into (adjusted price, volume) frames; absent (date, ticker) cells are NaN.

    Tickers keep their order of first appearance; dates are sorted.
    """
    records = pd.DataFrame([(b.date, b.ticker, b.adj_close, b.volume) for b in bars], columns=["date", "ticker", "adj_close", "volume"])
    if records.empty:
        raise InvalidParameter("no bars to pivot")
    records["date"] = pd.to_datetime(records["date"])
    tickers = list(dict.fromkeys(records["ticker"]))
    prices = records.pivot(index="date", columns="ticker", values="adj_close").sort_index()[tickers]
    volumes = records.pivot(index="date", columns="ticker", values="volume").sort_index()[tickers]
    prices.columns.name = None
    volumes.columns.name = None
    return prices, volumes


# ---------- rolling-window features ----------


def vwap_series(prices, volumes, w: int) -> np.ndarray:
    """w-day volume-weighted average price; works column-wise on 2-D input."""
    p = np.asarray(prices, dtype=float)
    v = np.asarray(volumes, dtype=float)
    if p.shape != v.shape:
        raise InvalidParameter(f"prices {p.shape} and volumes {v.shape} differ in shape")
    if w < 1:
        raise InvalidParameter("w must be >= 1")
    if p.shape[0] < w:
        raise WindowTooLong(f"series length {p.shape[0]} shorter than w={w}")
    if np.any(v < 0):
        raise InvalidParameter("volumes must be non-negative")

    pv = sliding_window_view(p * v, w, axis=0).sum(axis=-1)
    vol = sliding_window_view(v, w, axis=0).sum(axis=-1)
    zero = np.argwhere(vol == 0)
    if zero.size:
        raise ZeroVolumeWindow(int(zero[0][0]))
    return pv / vol


def logret_series(prices, w: int) -> np.ndarray:
    """Mean of daily log returns over w consecutive days; works column-wise on 2-D input."""
    p = np.asarray(prices, dtype=float)
    if w < 1:
        raise InvalidParameter("w must be >= 1")
    if p.shape[0] < w + 1:
        raise WindowTooLong(f"series length {p.shape[0]} shorter than w+1={w + 1}")
    if np.any(p <= 0):
        raise NonPositivePrice()
    daily = np.diff(np.log(p), axis=0)
    return sliding_window_view(daily, w, axis=0).mean(axis=-1)


def compute_feature(prices: AssetPanel, volumes: AssetPanel, kind: FeatureKind, w: int) -> AssetPanel:
    """Apply one feature to every asset column; rows are dated at each window's last day."""
    kind = FeatureKind(kind)
    if kind is FeatureKind.VWAP:
        values = vwap_series(prices.values, volumes.values, w)
        dates = prices.dates[w - 1 :]
    elif kind is FeatureKind.LOGRET:
        values = logret_series(prices.values, w)
        dates = prices.dates[w:]
    elif kind is FeatureKind.RAW_LOGRET:
        values = logret_series(prices.values, 1)
        dates = prices.dates[1:]
        w = 1
    else:
        raise InvalidParameter(f"unsupported feature kind {kind}")
    logger.debug("[FEAT] %s w=%d -> %d rows", kind.value, w, len(dates))
    return AssetPanel(dates, prices.assets, values, kind, w)


# ---------- cleaning ----------


def clean_panel(raw: pd.DataFrame, feature_kind: FeatureKind = FeatureKind.PRICE, window_len: int = 1) -> AssetPanel:
    """Drop dates with < 95% valid entries, then forward-fill remaining gaps column-wise."""
    frame = raw.sort_index()
    n_assets = frame.shape[1]
    valid = frame.notna().sum(axis=1)
    keep = valid * 100 >= VALID_ROW_PERCENT * n_assets
    dropped = int((~keep).sum())
    frame = frame.loc[keep]
    if dropped:
        logger.info("[CLEAN] dropped %d of %d dates below %d%% valid", dropped, len(keep), VALID_ROW_PERCENT)

    if not frame.empty:
        leading = frame.iloc[0].isna()
        if leading.any():
            raise UnfillableColumn(str(leading[leading].index[0]))
    filled = frame.ffill()
    return AssetPanel.from_frame(filled, feature_kind, window_len)


def clean_bars(bars: Iterable[DailyBar]) -> tuple[AssetPanel, AssetPanel]:
    """Cleaned (price, volume) panels sharing the dates kept by the price validity filter."""
    prices, volumes = bars_to_frames(bars)
    price_panel = clean_panel(prices)
    volume_frame = volumes.loc[price_panel.dates].ffill()
    volume_panel = AssetPanel.from_frame(volume_frame.fillna(0.0), FeatureKind.PRICE)
    return price_panel, volume_panel


# ---------- eras ----------


def validate_eras(eras: Sequence[EraSpec]) -> None:
    for prev, nxt in zip(eras, eras[1:]):
        if nxt.start_date <= prev.end_date:
            raise InvalidParameter(f"eras {prev.label} and {nxt.label} overlap or are out of order")
    labels = [e.label for e in eras]
    if len(set(labels)) != len(labels):
        raise InvalidParameter(f"duplicate era labels: {labels}")


def parse_eras(text: str) -> tuple[EraSpec, ...]:
    """Parse ``label:start:end;label:start:end`` into era specs."""
    eras = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = [p.strip() for p in chunk.split(":")]
        if len(parts) != 3:
            raise InvalidParameter(f"era spec {chunk!r} is not label:start:end")
        try:
            eras.append(EraSpec(parts[0], date.fromisoformat(parts[1]), date.fromisoformat(parts[2])))
        except ValueError as e:
            raise InvalidParameter(f"era spec {chunk!r}: {e}") from None
    validate_eras(eras)
    return tuple(eras)


def format_eras(eras: Sequence[EraSpec]) -> str:
    return ";".join(f"{e.label}:{e.start_date.isoformat()}:{e.end_date.isoformat()}" for e in eras)


def era_mask(dates: pd.DatetimeIndex, era: EraSpec) -> np.ndarray:
    return np.asarray((dates >= pd.Timestamp(era.start_date)) & (dates <= pd.Timestamp(era.end_date)))


def segment_eras(panel: AssetPanel, eras: Sequence[EraSpec] = DEFAULT_ERAS) -> dict[str, AssetPanel]:
    """Split a panel into era sub-panels by inclusive date range."""
    validate_eras(eras)
    out: dict[str, AssetPanel] = {}
    for era in eras:
        mask = era_mask(panel.dates, era)
        if not mask.any():
            raise EmptyEra(era.label)
        out[era.label] = AssetPanel(panel.dates[mask], panel.assets, panel.values[mask], panel.feature_kind, panel.window_len)
    return out
