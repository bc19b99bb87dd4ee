"""Sliding-window pseudo-subjects, two-stage PCA reduction and group ICA decomposition."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view

from resources.utils.errors import AssetOrderMismatch, InvalidParameter, WindowTooLong
from resources.utils.ica_core import DEFAULT_MAX_ITER, DEFAULT_TOL, UnmixingMatrix, WhiteningResult, get_solver, pca_whiten
from resources.utils.market_data import AssetPanel

logger = logging.getLogger(__name__)

NOISY_IQ = 0.8
SUMMARY_STATISTICS = ("mean", "std", "trend")


def component_labels(K: int) -> tuple[str, ...]:
    return tuple(f"IC{k + 1}" for k in range(K))


@dataclass(frozen=True, eq=False)
class PseudoSubjectStack:
    """Sliding windows of a panel, each an N x w_len slice (assets by days)."""

    windows: np.ndarray  # n_windows x N x w_len
    start_indices: tuple
    stride: int
    w_len: int
    asset_order: tuple
    end_dates: Optional[pd.DatetimeIndex] = None

    def __post_init__(self):
        windows = np.asarray(self.windows, dtype=float)
        if windows.ndim != 3:
            raise InvalidParameter(f"stack must be n x N x w, got shape {windows.shape}")
        if windows.shape[2] != self.w_len or len(self.start_indices) != windows.shape[0]:
            raise InvalidParameter("stack windows disagree with w_len / start_indices")
        if len(self.asset_order) != windows.shape[1]:
            raise AssetOrderMismatch(f"{len(self.asset_order)} asset labels for {windows.shape[1]} rows")
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "start_indices", tuple(int(s) for s in self.start_indices))
        object.__setattr__(self, "asset_order", tuple(self.asset_order))

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def n_assets(self) -> int:
        return self.windows.shape[1]

    def subset(self, indices: Sequence[int]) -> "PseudoSubjectStack":
        """Windows at ``indices`` (repeats allowed, for bootstrap resampling)."""
        idx = np.asarray(indices, dtype=int)
        return PseudoSubjectStack(
            windows=self.windows[idx],
            start_indices=tuple(self.start_indices[i] for i in idx),
            stride=self.stride,
            w_len=self.w_len,
            asset_order=self.asset_order,
            end_dates=None if self.end_dates is None else self.end_dates[idx],
        )


@dataclass(frozen=True, eq=False)
class ComponentMap:
    loadings: np.ndarray  # K x N
    asset_order: tuple
    iq: np.ndarray  # K, in [0, 1]
    window_len: int
    labels: tuple = ()
    risk_on: Optional[int] = None
    risk_off: Optional[int] = None

    def __post_init__(self):
        loadings = np.array(self.loadings, dtype=float)
        if loadings.ndim != 2:
            raise InvalidParameter(f"loadings must be K x N, got shape {loadings.shape}")
        if not np.all(np.isfinite(loadings)):
            raise InvalidParameter("loadings contain non-finite values")
        if len(self.asset_order) != loadings.shape[1]:
            raise AssetOrderMismatch(f"{len(self.asset_order)} asset labels for {loadings.shape[1]} loading columns")
        iq = np.array(self.iq, dtype=float).reshape(-1)
        if iq.shape != (loadings.shape[0],):
            raise InvalidParameter(f"iq has {iq.size} entries for {loadings.shape[0]} components")
        if np.any(iq < 0) or np.any(iq > 1):
            raise InvalidParameter("iq scores must lie in [0, 1]")
        labels = tuple(self.labels) or component_labels(loadings.shape[0])
        if len(labels) != loadings.shape[0]:
            raise InvalidParameter("one label per component is required")
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "iq", iq)
        object.__setattr__(self, "asset_order", tuple(self.asset_order))
        object.__setattr__(self, "labels", labels)

    @property
    def K(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_assets(self) -> int:
        return self.loadings.shape[1]

    @property
    def noisy(self) -> np.ndarray:
        return self.iq < NOISY_IQ

    def reordered(self, order: Sequence[int], signs: Optional[Sequence[float]] = None) -> "ComponentMap":
        """Rows taken in ``order`` and multiplied by ``signs``; role labels are dropped."""
        order = np.asarray(order, dtype=int)
        signs = np.ones(len(order)) if signs is None else np.asarray(signs, dtype=float)
        return ComponentMap(
            loadings=self.loadings[order] * signs[:, None],
            asset_order=self.asset_order,
            iq=self.iq[order],
            window_len=self.window_len,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.loadings, index=list(self.labels), columns=list(self.asset_order))
        frame.index.name = "component"
        return frame


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    values: np.ndarray  # K x T_w
    component_order: tuple
    dates: Optional[pd.DatetimeIndex] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or len(self.component_order) != values.shape[0]:
            raise InvalidParameter("activation rows must match the component order")
        if self.dates is not None and len(self.dates) != values.shape[1]:
            raise InvalidParameter("activation columns must match the window dates")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "component_order", tuple(self.component_order))

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def to_frame(self) -> pd.DataFrame:
        index = self.dates if self.dates is not None else pd.RangeIndex(self.T, name="window")
        frame = pd.DataFrame(self.values.T, index=index, columns=list(self.component_order))
        frame.index.name = "date" if self.dates is not None else "window"
        return frame


# ---------- stacks ----------


def build_pseudo_subjects(panel: AssetPanel, w: int, stride: int = 1) -> PseudoSubjectStack:
    """Contiguous windows [t, t+w) every ``stride`` rows; floor((T-w)/stride)+1 of them."""
    if w < 1 or stride < 1:
        raise InvalidParameter("w and stride must be >= 1")
    T = panel.n_dates
    if w > T:
        raise WindowTooLong(f"window w={w} longer than the panel ({T} dates)")
    # sliding_window_view over rows of a T x N panel gives (T-w+1) x N x w
    windows = np.ascontiguousarray(sliding_window_view(panel.values, w, axis=0)[::stride])
    starts = tuple(range(0, T - w + 1, stride))
    end_dates = panel.dates[[s + w - 1 for s in starts]]
    logger.debug("[GICA] %d pseudo-subjects w=%d stride=%d", len(starts), w, stride)
    return PseudoSubjectStack(windows, starts, stride, w, panel.assets, end_dates)


def build_summary_stack(panel: AssetPanel, w: int, stride: int = 1, statistic: str = "mean") -> PseudoSubjectStack:
    """Single pseudo-subject whose columns are one summary statistic per asset per window.

    ``statistic`` is ``mean``, ``std`` (ddof=1) or ``trend`` (least-squares slope per day).
    """
    if statistic not in SUMMARY_STATISTICS:
        raise InvalidParameter(f"statistic must be one of {SUMMARY_STATISTICS}, got {statistic!r}")
    stack = build_pseudo_subjects(panel, w, stride)
    if statistic == "mean":
        summary = stack.windows.mean(axis=2)
    elif statistic == "std":
        if w < 2:
            raise InvalidParameter("std summary needs w >= 2")
        summary = stack.windows.std(axis=2, ddof=1)
    else:
        if w < 2:
            raise InvalidParameter("trend summary needs w >= 2")
        s = np.arange(w, dtype=float) - (w - 1) / 2.0
        summary = stack.windows @ s / float(s @ s)
    matrix = summary.T[None, :, :]  # 1 x N x n_windows
    return PseudoSubjectStack(matrix, (0,), stride, matrix.shape[2], panel.assets, None)


# ---------- decomposition ----------


@dataclass(frozen=True, eq=False)
class GroupReduction:
    """Group-level whitening of the concatenated subject reconstructions."""

    whitening: WhiteningResult
    asset_order: tuple
    window_len: int
    subject_rank: int


def _subject_reconstruction(window: np.ndarray, rank: int) -> np.ndarray:
    reduced = pca_whiten(window, rank)
    return reduced.inverse @ reduced.whitened


def reduce_stack(stack: PseudoSubjectStack, subject_rank: int, group_rank: int, threads: int = 1) -> GroupReduction:
    """Per-window PCA back to asset coordinates, temporal concatenation, then group PCA."""
    if subject_rank < 1 or group_rank < 1:
        raise InvalidParameter("subject_rank and group_rank must be >= 1")
    if threads > 1 and len(stack) > 1:
        parts = Parallel(n_jobs=threads, prefer="threads")(delayed(_subject_reconstruction)(win, subject_rank) for win in stack.windows)
    else:
        parts = [_subject_reconstruction(win, subject_rank) for win in stack.windows]
    concatenated = np.hstack(parts)
    whitening = pca_whiten(concatenated, group_rank)
    logger.debug(
        "[GICA] reduced %d windows -> %d x %d, group variance kept %.4f",
        len(stack),
        concatenated.shape[0],
        concatenated.shape[1],
        float(whitening.explained_variance.sum()),
    )
    return GroupReduction(whitening, stack.asset_order, stack.w_len, subject_rank)


def unmix_reduction(
    reduction: GroupReduction,
    K: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    solver: str = "fastica",
) -> tuple[np.ndarray, UnmixingMatrix]:
    """ICA on the group-whitened data; returns (K x N spatial maps, unmixing)."""
    if K > reduction.whitening.rank:
        raise InvalidParameter(f"K={K} exceeds group_rank={reduction.whitening.rank}")
    unmixing = get_solver(solver)(reduction.whitening.whitened, K, tol=tol, max_iter=max_iter, seed=seed)
    # dewhitened mixing columns: A = inverse @ W^T, one row per component here
    loadings = unmixing.rows @ reduction.whitening.inverse.T
    return loadings, unmixing


def back_reconstruct(cmap: ComponentMap, window: np.ndarray, assets: Optional[Sequence[str]] = None) -> tuple[np.ndarray, np.ndarray]:
    """Project one N x w window: returns (per-component mean activation, K x w time-course)."""
    window = np.asarray(window, dtype=float)
    if assets is not None and tuple(assets) != cmap.asset_order:
        raise AssetOrderMismatch("window assets are not in the component map's asset order")
    if window.ndim != 2 or window.shape[0] != cmap.n_assets:
        raise AssetOrderMismatch(f"window has shape {window.shape}, map expects {cmap.n_assets} asset rows")
    course = cmap.loadings @ window
    return course.mean(axis=1), course


def zscore_rows(values: np.ndarray) -> np.ndarray:
    """Per-row z-score (ddof=1); constant rows are returned centred only."""
    values = np.asarray(values, dtype=float)
    centred = values - values.mean(axis=1, keepdims=True)
    if values.shape[1] < 2:
        return centred
    std = values.std(axis=1, ddof=1)
    flat = std == 0
    if np.any(flat):
        logger.warning("[GICA] %d constant activation rows left unscaled", int(flat.sum()))
    std = np.where(flat, 1.0, std)
    return centred / std[:, None]


def activation_matrix(cmap: ComponentMap, stack: PseudoSubjectStack, zscore: bool = True) -> ActivationMatrix:
    if stack.asset_order != cmap.asset_order:
        raise AssetOrderMismatch("stack and component map disagree on asset order")
    values = np.column_stack([back_reconstruct(cmap, win)[0] for win in stack.windows])
    if zscore:
        values = zscore_rows(values)
    return ActivationMatrix(values, cmap.labels, stack.end_dates)


def group_decompose(
    stack: PseudoSubjectStack,
    subject_rank: int,
    group_rank: int,
    K: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    zscore: bool = True,
    threads: int = 1,
    solver: str = "fastica",
) -> tuple[ComponentMap, ActivationMatrix]:
    """Single group ICA fit: subject PCA, concatenation, group PCA, ICA, back-reconstruction.

    A single fit has no ensemble to score, so every iq is 1.
    """
    if K > group_rank:
        raise InvalidParameter(f"K={K} must not exceed group_rank={group_rank}")
    reduction = reduce_stack(stack, subject_rank, group_rank, threads)
    loadings, unmixing = unmix_reduction(reduction, K, seed, tol, max_iter, solver)
    cmap = ComponentMap(loadings, stack.asset_order, np.ones(K), stack.w_len)
    logger.info("[GICA] fit K=%d windows=%d converged=%s iterations=%d", K, len(stack), unmixing.converged, unmixing.iterations)
    return cmap, activation_matrix(cmap, stack, zscore)
