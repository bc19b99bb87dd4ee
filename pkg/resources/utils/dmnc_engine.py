"""Dynamic connectivity tensor: windowed correlations, vectorisation and change signals."""

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from resources.utils.errors import (
    AsymmetricInput,
    DegenerateRow,
    InsufficientData,
    InvalidParameter,
    SingularCovariance,
    WindowTooLong,
    ZeroVarianceRowWarning,
    ZeroVector,
)
from resources.utils.group_ica import ActivationMatrix

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8
TENSOR_TOL = 1e-10
SHRINKAGE = 1e-3


class WindowFn(str, Enum):
    RECT = "RECT"
    GAUSSIAN = "GAUSSIAN"


class SmoothingMethod(str, Enum):
    NONE = "NONE"
    MOVING_AVG = "MOVING_AVG"
    EXP = "EXP"
    ZSCORE = "ZSCORE"


@dataclass(frozen=True, eq=False)
class DmncTensor:
    matrices: np.ndarray  # n x K x K
    timestamps: pd.Index
    delta: int
    window_fn: WindowFn = WindowFn.RECT
    sigma: Optional[float] = None
    stride: int = 1
    flagged: tuple = ()  # windows holding a constant row, their entries are NaN

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise InvalidParameter(f"tensor must be n x K x K, got {mats.shape}")
        if len(self.timestamps) != mats.shape[0]:
            raise InvalidParameter("one timestamp per matrix is required")
        finite = np.where(np.isnan(mats), 0.0, mats)
        if np.max(np.abs(finite - finite.transpose(0, 2, 1)), initial=0.0) > TENSOR_TOL:
            raise AsymmetricInput(float(np.max(np.abs(finite - finite.transpose(0, 2, 1)))))
        diag = np.diagonal(mats, axis1=1, axis2=2)
        if diag.size and not np.all(diag == 1.0):
            raise InvalidParameter("every connectivity matrix needs a unit diagonal")
        if np.any(np.abs(finite) > 1.0):
            raise InvalidParameter("correlations must lie in [-1, 1]")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "timestamps", pd.Index(self.timestamps))
        object.__setattr__(self, "window_fn", WindowFn(self.window_fn))
        object.__setattr__(self, "flagged", tuple(int(i) for i in self.flagged))

    def __len__(self) -> int:
        return self.matrices.shape[0]

    @property
    def K(self) -> int:
        return self.matrices.shape[1]

    def vectors(self) -> np.ndarray:
        """n x K(K-1)/2 upper-triangle vectors."""
        iu = np.triu_indices(self.K, 1)
        return self.matrices[:, iu[0], iu[1]]

    def subset(self, indices: Sequence[int]) -> "DmncTensor":
        idx = np.asarray(indices, dtype=int)
        keep = set(idx.tolist())
        flagged = [int(np.flatnonzero(idx == f)[0]) for f in self.flagged if f in keep]
        return DmncTensor(self.matrices[idx], self.timestamps[idx], self.delta, self.window_fn, self.sigma, self.stride, tuple(flagged))


@dataclass(frozen=True, eq=False)
class ConnectivityVector:
    values: np.ndarray
    K: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != self.K * (self.K - 1) // 2:
            raise InvalidParameter(f"vector of length {values.size} does not fit K={self.K}")
        object.__setattr__(self, "values", values)

    @property
    def index_map(self) -> list[tuple[int, int]]:
        iu = np.triu_indices(self.K, 1)
        return list(zip(iu[0].tolist(), iu[1].tolist()))


@dataclass(frozen=True, eq=False)
class OrderedWindowIndex:
    order: np.ndarray
    keys: np.ndarray  # n x 2, (z_on, z_off)
    rank: np.ndarray = field(init=False)

    def __post_init__(self):
        rank = np.empty_like(self.order)
        rank[self.order] = np.arange(self.order.size)
        object.__setattr__(self, "rank", rank)


# ---------- single window ----------


def window_weights(delta: int, window_fn: WindowFn = WindowFn.RECT, sigma: Optional[float] = None) -> np.ndarray:
    """Per-sample weights; the Gaussian is centred at (delta-1)/2 with sigma defaulting to delta/4."""
    window_fn = WindowFn(window_fn)
    if window_fn is WindowFn.RECT:
        return np.ones(delta)
    sigma = float(sigma) if sigma else delta / 4.0
    if sigma <= 0:
        raise InvalidParameter("gaussian sigma must be positive")
    s = np.arange(delta, dtype=float)
    mu = (delta - 1) / 2.0
    return np.exp(-((s - mu) ** 2) / (2.0 * sigma**2))


def _correlation(A_slice: np.ndarray, weights: Optional[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(A_slice, dtype=float)
    K, delta = X.shape
    flat = np.flatnonzero(np.ptp(X, axis=1) == 0)
    if weights is None:
        centred = X - X.mean(axis=1, keepdims=True)
    else:
        w = np.asarray(weights, dtype=float) / np.sum(weights)
        centred = (X - (X @ w)[:, None]) * np.sqrt(w)
    cov = centred @ centred.T
    scale = np.sqrt(np.diag(cov))
    scale[flat] = 1.0
    C = cov / np.outer(scale, scale)
    C = np.clip((C + C.T) / 2.0, -1.0, 1.0)
    C[flat, :] = np.nan
    C[:, flat] = np.nan
    np.fill_diagonal(C, 1.0)
    return C, flat


def window_correlation(A_slice, weights=None) -> np.ndarray:
    """(Weighted) Pearson matrix of a K x delta slice; rows that are constant give NaN entries."""
    A_slice = np.asarray(A_slice, dtype=float)
    if A_slice.ndim != 2:
        raise InvalidParameter(f"expected a K x delta slice, got shape {A_slice.shape}")
    if A_slice.shape[1] < 3:
        raise InvalidParameter("a correlation window needs at least 3 samples")
    if weights is not None and np.asarray(weights).shape != (A_slice.shape[1],):
        raise InvalidParameter("one weight per sample is required")
    C, flat = _correlation(A_slice, weights)
    if flat.size:
        msg = f"constant activation rows {flat.tolist()} in correlation window"
        logger.warning("[DMNC] %s", msg)
        warnings.warn(msg, ZeroVarianceRowWarning, stacklevel=2)
    return C


# ---------- tensor ----------


def build_dmnc(
    A: Union[ActivationMatrix, np.ndarray],
    delta: int,
    stride: int = 1,
    window_fn: WindowFn = WindowFn.RECT,
    sigma: Optional[float] = None,
    threads: int = 1,
) -> DmncTensor:
    """Correlation matrices over windows [t, t+delta) every ``stride``; timestamped at the window end."""
    values = A.values if isinstance(A, ActivationMatrix) else np.asarray(A, dtype=float)
    T = values.shape[1]
    if delta < 3 or stride < 1:
        raise InvalidParameter("delta must be >= 3 and stride >= 1")
    if T < delta:
        raise WindowTooLong(f"activation length {T} shorter than delta={delta}")
    window_fn = WindowFn(window_fn)
    weights = None if window_fn is WindowFn.RECT else window_weights(delta, window_fn, sigma)
    starts = list(range(0, T - delta + 1, stride))
    slices = sliding_window_view(values, delta, axis=1)  # K x (T-delta+1) x delta

    if threads > 1:
        results = Parallel(n_jobs=threads, prefer="threads")(delayed(_correlation)(slices[:, s, :], weights) for s in starts)
    else:
        results = [_correlation(slices[:, s, :], weights) for s in starts]
    matrices = np.stack([C for C, _ in results])
    flagged = tuple(i for i, (_, flat) in enumerate(results) if flat.size)
    if flagged:
        msg = f"{len(flagged)} of {len(starts)} dMNC windows contain a constant activation row"
        logger.warning("[DMNC] %s", msg)
        warnings.warn(msg, ZeroVarianceRowWarning, stacklevel=2)

    ends = [s + delta - 1 for s in starts]
    dates = getattr(A, "dates", None)
    timestamps = dates[ends] if dates is not None else pd.Index(ends, name="window_end")
    used_sigma = None if window_fn is WindowFn.RECT else (sigma or delta / 4.0)
    logger.info("[DMNC] K=%d windows=%d delta=%d stride=%d fn=%s", values.shape[0], len(starts), delta, stride, window_fn.value)
    return DmncTensor(matrices, timestamps, delta, window_fn, used_sigma, stride, flagged)


def smooth_activations(A: ActivationMatrix, method: SmoothingMethod = SmoothingMethod.NONE, param: Optional[float] = None) -> ActivationMatrix:
    """Row-wise moving average (param = n), exponential smoothing (param = alpha) or z-score."""
    method = SmoothingMethod(method)
    frame = pd.DataFrame(A.values.T)
    if method is SmoothingMethod.NONE:
        out = frame
    elif method is SmoothingMethod.MOVING_AVG:
        n = 1 if param is None else int(param)
        if n < 1 or (param is not None and n != param):
            raise InvalidParameter(f"moving-average length must be a positive integer, got {param}")
        out = frame.rolling(window=n, min_periods=1).mean()
    elif method is SmoothingMethod.EXP:
        alpha = float(param if param is not None else 1.0)
        if not 0 < alpha <= 1:
            raise InvalidParameter(f"alpha must be in (0, 1], got {alpha}")
        out = frame.ewm(alpha=alpha, adjust=False).mean()
    else:
        flat = np.flatnonzero(np.ptp(A.values, axis=1) == 0)
        if flat.size or A.T < 2:
            raise DegenerateRow(int(flat[0]) if flat.size else 0)
        out = (frame - frame.mean()) / frame.std(ddof=1)
    return ActivationMatrix(out.to_numpy().T, A.component_order, A.dates)


def order_windows(factor_coords) -> OrderedWindowIndex:
    """Ascending by z_on, then z_off, then original position."""
    keys = np.asarray(factor_coords, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(keys)):
        raise InvalidParameter("window factor coordinates must be finite")
    order = np.lexsort((np.arange(len(keys)), keys[:, 1], keys[:, 0]))
    return OrderedWindowIndex(order, keys)


# ---------- vectors ----------


def vectorize_upper(C) -> ConnectivityVector:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidParameter(f"expected a square matrix, got shape {C.shape}")
    deviation = float(np.nanmax(np.abs(C - C.T), initial=0.0))
    if deviation > SYMMETRY_TOL:
        raise AsymmetricInput(deviation)
    iu = np.triu_indices(C.shape[0], 1)
    return ConnectivityVector(C[iu], C.shape[0])


def devectorize(v: ConnectivityVector) -> np.ndarray:
    C = np.eye(v.K)
    iu = np.triu_indices(v.K, 1)
    C[iu] = v.values
    C[(iu[1], iu[0])] = v.values
    return C


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, ConnectivityVector) else np.asarray(v, dtype=float).reshape(-1)


def cosine_similarity(v1, v2) -> float:
    a, b = _values(v1), _values(v2)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def frobenius_distance(C1, C2) -> float:
    return float(np.linalg.norm(np.asarray(C1, dtype=float) - np.asarray(C2, dtype=float), "fro"))


# ---------- change signals ----------


def similarity_jump(tensor: DmncTensor, metric: str = "cosine") -> np.ndarray:
    """Step-to-step change, length n-1: 1 - cosine of consecutive vectors, or Frobenius distance.

    Steps touching a flagged window, or (cosine only) an all-zero off-diagonal vector, are NaN.
    """
    if len(tensor) < 2:
        raise InsufficientData("similarity jump needs at least two matrices")
    if metric not in ("cosine", "frobenius"):
        raise InvalidParameter(f"unknown jump metric {metric!r}")
    vectors = tensor.vectors()
    out = np.empty(len(tensor) - 1)
    for t in range(1, len(tensor)):
        prev, cur = vectors[t - 1], vectors[t]
        if np.isnan(prev).any() or np.isnan(cur).any():
            out[t - 1] = np.nan
        elif np.array_equal(prev, cur):
            out[t - 1] = 0.0
        elif metric == "cosine" and not (np.any(prev) and np.any(cur)):
            out[t - 1] = np.nan
        elif metric == "cosine":
            out[t - 1] = 1.0 - cosine_similarity(cur, prev)
        else:
            out[t - 1] = frobenius_distance(tensor.matrices[t], tensor.matrices[t - 1])
    return out


def _baseline_indices(n: int, baseline) -> np.ndarray:
    if isinstance(baseline, slice):
        return np.arange(n)[baseline]
    arr = np.asarray(baseline)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise InvalidParameter("baseline mask must have one entry per matrix")
        return np.flatnonzero(arr)
    if arr.shape == (2,):
        start, stop = int(arr[0]), int(arr[1])
        if not 0 <= start < stop <= n:
            raise InvalidParameter(f"baseline range {start}:{stop} outside 0:{n}")
        return np.arange(start, stop)
    return arr.astype(int)


def distance_to_baseline(tensor: DmncTensor, baseline_range) -> np.ndarray:
    """Mahalanobis distance of every vector from the baseline mean, covariance shrunk by 1e-3 * trace / dim.

    ``baseline_range`` is a (start, stop) pair, a slice, or a boolean mask over the matrices.
    """
    vectors = tensor.vectors()
    idx = _baseline_indices(len(tensor), baseline_range)
    base = vectors[idx]
    base = base[~np.isnan(base).any(axis=1)]
    dim = vectors.shape[1]
    if base.shape[0] < dim + 2:
        raise InsufficientData(f"baseline has {base.shape[0]} usable windows, need at least {dim + 2}")
    mean = base.mean(axis=0)
    cov = np.atleast_2d(np.cov(base, rowvar=False, ddof=1))
    lam = SHRINKAGE * np.trace(cov) / dim
    try:
        factor = linalg.cho_factor(cov + lam * np.eye(dim))
    except linalg.LinAlgError:
        raise SingularCovariance("regularised baseline covariance is singular") from None
    diff = vectors - mean
    out = np.full(len(tensor), np.nan)
    ok = ~np.isnan(diff).any(axis=1)
    solved = linalg.cho_solve(factor, diff[ok].T)
    out[ok] = np.sqrt(np.maximum(np.einsum("ij,ji->i", diff[ok], solved), 0.0))
    return out


def structural_volatility(tensor: DmncTensor, tau: int) -> np.ndarray:
    """S(t) = sum over entries of the population variance across the last tau matrices, over K^2.

    One value per t >= tau - 1, so the result has n - tau + 1 points.
    """
    n = len(tensor)
    if tau < 2:
        raise InvalidParameter("tau must be >= 2")
    if n < tau:
        raise WindowTooLong(f"tensor of {n} matrices shorter than tau={tau}")
    windows = sliding_window_view(tensor.matrices, tau, axis=0)  # (n-tau+1) x K x K x tau
    shifted = windows - windows[..., :1]
    return shifted.var(axis=-1).sum(axis=(1, 2)) / tensor.K**2


def edge_zscores(tensor: DmncTensor) -> pd.DataFrame:
    """Full-sample z-score (ddof=1) of every upper-triangle edge; constant edges are NaN."""
    if len(tensor) < 3:
        raise InsufficientData("edge z-scores need at least three matrices")
    vectors = tensor.vectors()
    mean = np.nanmean(vectors, axis=0)
    std = np.nanstd(vectors, axis=0, ddof=1)
    flat = np.nanmax(vectors, axis=0) == np.nanmin(vectors, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (vectors - mean) / np.where(flat, 1.0, std)
    z[:, flat] = np.nan
    iu = np.triu_indices(tensor.K, 1)
    columns = [f"{i}-{j}" for i, j in zip(iu[0], iu[1])]
    return pd.DataFrame(z, index=tensor.timestamps, columns=columns)
