"""Icasso consensus, stability index, Hungarian matching, polarity and era aggregation."""

import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import squareform

from resources.utils.errors import (
    AssetOrderMismatch,
    ClusterImbalanceWarning,
    DimensionMismatch,
    EmptyInput,
    EmptyReferenceSet,
    InvalidParameter,
    ZeroTotalVariance,
    ZeroVarianceComponent,
)
from resources.utils.group_ica import ComponentMap, GroupReduction, PseudoSubjectStack, reduce_stack, unmix_reduction
from resources.utils.ica_core import DEFAULT_MAX_ITER, DEFAULT_TOL

logger = logging.getLogger(__name__)

IMBALANCE_TOLERANCE = 0.2
DEFAULT_OCCURRENCE_THRESHOLD = 0.9


class ResampleScheme(str, Enum):
    SEED_ONLY = "SEED_ONLY"
    WINDOW_BOOTSTRAP = "WINDOW_BOOTSTRAP"


@dataclass(frozen=True, eq=False)
class BootstrapEnsemble:
    runs: tuple
    resample_scheme: ResampleScheme
    seeds: tuple = ()

    def __post_init__(self):
        runs = tuple(self.runs)
        if not runs:
            raise EmptyInput("an ensemble needs at least one run")
        first = runs[0]
        for run in runs[1:]:
            if run.asset_order != first.asset_order:
                raise AssetOrderMismatch("ensemble runs disagree on asset order")
            if run.K != first.K:
                raise DimensionMismatch("ensemble runs disagree on K")
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "resample_scheme", ResampleScheme(self.resample_scheme))

    def stacked(self) -> np.ndarray:
        return np.vstack([run.loadings for run in self.runs])


@dataclass(frozen=True, eq=False)
class MatchResult:
    permutation: np.ndarray  # row i of A pairs with row permutation[i] of B
    signs: np.ndarray
    matched_abs_corr: np.ndarray

    @property
    def score(self) -> float:
        return float(self.matched_abs_corr.sum())

    @property
    def mean_abs_corr(self) -> float:
        return float(self.matched_abs_corr.mean())


@dataclass(frozen=True, eq=False)
class EraAggregate:
    era_label: str
    mean_map: ComponentMap
    median_iq: np.ndarray
    iqr_iq: np.ndarray
    n_maps: int = 1


@dataclass(frozen=True, eq=False)
class CrossEraTable:
    labels: tuple
    mean_abs_corr: np.ndarray  # E x E
    pairs: dict  # (label_a, label_b) -> MatchResult


# ---------- correlation helpers ----------


def standardize_rows(X: np.ndarray, which: str = "") -> np.ndarray:
    """Rows centred and scaled to unit Euclidean norm."""
    X = np.asarray(X, dtype=float)
    centred = X - X.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centred, axis=1)
    flat = np.flatnonzero(norms == 0)
    if flat.size:
        raise ZeroVarianceComponent(int(flat[0]), which)
    return centred / norms[:, None]


def cross_correlation(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pearson correlation of every row of A with every row of B."""
    corr = standardize_rows(A, "A") @ standardize_rows(B, "B").T
    return np.clip(corr, -1.0, 1.0)


def _sign(values: np.ndarray) -> np.ndarray:
    signs = np.sign(values)
    signs[signs == 0] = 1.0
    return signs


# ---------- stability ----------


def set_variance(rows: np.ndarray) -> float:
    """Mean squared Euclidean distance of the rows to their mean vector."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return float(np.mean(np.sum((rows - rows.mean(axis=0)) ** 2, axis=1)))


def iq_score(cluster_members, total_variance: float) -> float:
    """Stability index 1 - intra-cluster variance / total variance, clipped to [0, 1]."""
    members = np.atleast_2d(np.asarray(cluster_members, dtype=float))
    if members.shape[0] == 0:
        raise EmptyInput("a cluster needs at least one member")
    if not total_variance > 0:
        raise ZeroTotalVariance("total variance of the stacked component set is zero")
    return float(np.clip(1.0 - set_variance(members) / total_variance, 0.0, 1.0))


def _run_seeds(R_runs: int, seeds, base_seed: int) -> list[int]:
    if seeds is None:
        return [int(base_seed) + r for r in range(R_runs)]
    seeds = [int(s) for s in seeds]
    if len(seeds) != R_runs:
        raise InvalidParameter(f"{len(seeds)} seeds given for {R_runs} runs")
    return seeds


def _fit_run(
    stack: PseudoSubjectStack,
    reduction: Optional[GroupReduction],
    scheme: ResampleScheme,
    K: int,
    seed: int,
    subject_rank: int,
    group_rank: int,
    tol: float,
    max_iter: int,
    solver: str,
) -> ComponentMap:
    if scheme is ResampleScheme.WINDOW_BOOTSTRAP:
        rng = np.random.default_rng(seed)
        resampled = stack.subset(rng.integers(0, len(stack), size=len(stack)))
        reduction = reduce_stack(resampled, subject_rank, group_rank)
    loadings, _ = unmix_reduction(reduction, K, seed, tol, max_iter, solver)
    return ComponentMap(loadings, stack.asset_order, np.ones(K), stack.w_len)


def icasso_ensemble(
    stack: PseudoSubjectStack,
    R_runs: int,
    K: int,
    seeds: Optional[Sequence[int]] = None,
    base_seed: int = 0,
    subject_rank: Optional[int] = None,
    group_rank: Optional[int] = None,
    scheme: ResampleScheme = ResampleScheme.SEED_ONLY,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    threads: int = 1,
    solver: str = "fastica",
) -> BootstrapEnsemble:
    """R_runs group ICA fits; run r uses seeds[r] (default base_seed + r)."""
    if R_runs < 2:
        raise InvalidParameter("icasso needs at least 2 runs")
    scheme = ResampleScheme(scheme)
    subject_rank = subject_rank or K
    group_rank = group_rank or K
    if K > group_rank:
        raise InvalidParameter(f"K={K} must not exceed group_rank={group_rank}")
    run_seeds = _run_seeds(R_runs, seeds, base_seed)
    reduction = reduce_stack(stack, subject_rank, group_rank, threads) if scheme is ResampleScheme.SEED_ONLY else None

    jobs = [(stack, reduction, scheme, K, s, subject_rank, group_rank, tol, max_iter, solver) for s in run_seeds]
    if threads > 1:
        runs = Parallel(n_jobs=threads, prefer="threads")(delayed(_fit_run)(*job) for job in jobs)
    else:
        runs = [_fit_run(*job) for job in jobs]
    return BootstrapEnsemble(tuple(runs), scheme, tuple(run_seeds))


def consensus_from_ensemble(ensemble: BootstrapEnsemble) -> ComponentMap:
    """Cluster the K * R stacked components and keep one centroid member per cluster."""
    K = ensemble.runs[0].K
    R = len(ensemble.runs)
    stacked = ensemble.stacked()
    Z = standardize_rows(stacked, "stacked ensemble")
    corr = np.clip(Z @ Z.T, -1.0, 1.0)
    abs_corr = np.abs(corr)

    if K == 1:
        clusters = np.zeros(len(stacked), dtype=int)
    else:
        dist = 1.0 - abs_corr
        dist = np.clip((dist + dist.T) / 2.0, 0.0, None)
        np.fill_diagonal(dist, 0.0)
        tree = linkage(squareform(dist, checks=False), method="average")
        clusters = cut_tree(tree, n_clusters=K).reshape(-1)

    centroids = []
    groups = []
    for c in range(K):
        members = np.flatnonzero(clusters == c)
        if members.size == 1:
            centre = int(members[0])
        else:
            peer = (abs_corr[np.ix_(members, members)].sum(axis=1) - 1.0) / (members.size - 1)
            centre = int(members[np.argmax(peer)])
        centroids.append(centre)
        groups.append(members)

    # standardised rows, each flipped toward its cluster centroid
    aligned = Z.copy()
    for centre, members in zip(centroids, groups):
        aligned[members] *= _sign(corr[members, centre])[:, None]
    total = set_variance(aligned)

    order = np.argsort(centroids, kind="stable")
    loadings = stacked[[centroids[c] for c in order]]
    iq = np.array([iq_score(aligned[groups[c]], total) for c in order])

    sizes = np.array([groups[c].size for c in order])
    off = np.abs(sizes - R) > IMBALANCE_TOLERANCE * R
    if np.any(off):
        msg = f"icasso cluster sizes {sizes.tolist()} deviate from {R} runs by more than {IMBALANCE_TOLERANCE:.0%}"
        logger.warning("[ICASSO] %s", msg)
        warnings.warn(msg, ClusterImbalanceWarning, stacklevel=2)
    first = ensemble.runs[0]
    return ComponentMap(loadings, first.asset_order, iq, first.window_len)


def icasso_consensus(
    stack: PseudoSubjectStack,
    R_runs: int,
    K: int,
    seeds: Optional[Sequence[int]] = None,
    **kwargs,
) -> ComponentMap:
    """Consensus map of R_runs ICA fits with per-component stability index.

    Keyword arguments are passed to ``icasso_ensemble``.
    """
    ensemble = icasso_ensemble(stack, R_runs, K, seeds, **kwargs)
    cmap = consensus_from_ensemble(ensemble)
    logger.debug("[ICASSO] R=%d K=%d iq=%s", R_runs, K, np.round(cmap.iq, 4).tolist())
    return cmap


# ---------- matching ----------


def _check_comparable(Wa: ComponentMap, Wb: ComponentMap) -> None:
    if Wa.asset_order != Wb.asset_order:
        raise AssetOrderMismatch("component maps disagree on asset order")
    if Wa.K != Wb.K:
        raise DimensionMismatch(f"component maps have K={Wa.K} and K={Wb.K}")


def _lowest_index_assignment(score: np.ndarray) -> np.ndarray:
    """Maximum-weight assignment; among equally good ones, row i takes the lowest free column."""
    K = score.shape[0]
    rows, cols = linear_sum_assignment(score, maximize=True)
    best = float(score[rows, cols].sum())
    tol = 1e-12
    permutation = np.empty(K, dtype=int)
    free = list(range(K))
    gained = 0.0
    for i in range(K):
        totals = []
        for j in free:
            rest = score[np.ix_(np.arange(i + 1, K), [c for c in free if c != j])]
            if rest.size:
                r, c = linear_sum_assignment(rest, maximize=True)
                totals.append(gained + score[i, j] + float(rest[r, c].sum()))
            else:
                totals.append(gained + score[i, j])
        reach = [k for k, total in enumerate(totals) if total >= best - tol]
        j = free[reach[0] if reach else int(np.argmax(totals))]
        permutation[i] = j
        gained += score[i, j]
        free.remove(j)
    return permutation


def match_components(Wa: ComponentMap, Wb: ComponentMap) -> MatchResult:
    """Hungarian assignment on |corr| between rows of Wa and rows of Wb.

    Ties between optimal assignments go to the lowest column index, row by row.
    """
    _check_comparable(Wa, Wb)
    corr = cross_correlation(Wa.loadings, Wb.loadings)
    abs_corr = np.abs(corr)
    permutation = _lowest_index_assignment(abs_corr)
    picked = corr[np.arange(Wa.K), permutation]
    return MatchResult(permutation, _sign(picked), abs_corr[np.arange(Wa.K), permutation])


def align_signs(Wa: ComponentMap, Wb: ComponentMap, permutation: Sequence[int]) -> ComponentMap:
    """Wb reordered by ``permutation`` with every row sign-flipped to correlate non-negatively with Wa."""
    _check_comparable(Wa, Wb)
    permutation = np.asarray(permutation, dtype=int)
    if sorted(permutation.tolist()) != list(range(Wa.K)):
        raise InvalidParameter(f"{permutation.tolist()} is not a permutation of {Wa.K} components")
    ordered = Wb.loadings[permutation]
    corr = np.einsum("ij,ij->i", standardize_rows(Wa.loadings, "A"), standardize_rows(ordered, "B"))
    return ComponentMap(
        loadings=ordered * _sign(corr)[:, None],
        asset_order=Wb.asset_order,
        iq=Wb.iq[permutation],
        window_len=Wb.window_len,
        labels=Wa.labels,
        risk_on=Wa.risk_on,
        risk_off=Wa.risk_off,
    )


def align_to_reference(reference: ComponentMap, cmap: ComponentMap) -> tuple[ComponentMap, MatchResult]:
    match = match_components(reference, cmap)
    return align_signs(reference, cmap, match.permutation), match


def canonical_polarity(cmap: ComponentMap, reference_assets: Sequence[str], risk_off_assets: Optional[Sequence[str]] = None) -> ComponentMap:
    """Label and orient the Risk-On / Risk-Off pair.

    Risk-On is the row with the largest |mean loading| on ``reference_assets``,
    made positive there. Risk-Off is the remaining row with the largest |mean
    loading| on ``risk_off_assets`` (default: every other asset), oriented so
    its mean reference loading is <= 0.
    """
    reference = [a for a in reference_assets if a in cmap.asset_order]
    if not reference or len(reference) != len(list(reference_assets)):
        raise EmptyReferenceSet(f"reference assets {list(reference_assets)} are empty or not in the map")
    ref_idx = [cmap.asset_order.index(a) for a in reference]
    if risk_off_assets:
        unknown = [a for a in risk_off_assets if a not in cmap.asset_order]
        if unknown:
            raise EmptyReferenceSet(f"risk-off assets not in the map: {unknown}")
        off_idx = [cmap.asset_order.index(a) for a in risk_off_assets]
    else:
        off_idx = [i for i in range(cmap.n_assets) if i not in ref_idx] or list(range(cmap.n_assets))

    loadings = cmap.loadings.copy()
    ref_means = loadings[:, ref_idx].mean(axis=1)
    risk_on = int(np.argmax(np.abs(ref_means)))
    if ref_means[risk_on] < 0:
        loadings[risk_on] *= -1.0

    risk_off = None
    if cmap.K > 1:
        off_means = np.abs(loadings[:, off_idx].mean(axis=1))
        off_means[risk_on] = -np.inf
        risk_off = int(np.argmax(off_means))
        ref_mean_off = loadings[risk_off, ref_idx].mean()
        if ref_mean_off > 0 or (ref_mean_off == 0 and loadings[risk_off, off_idx].mean() < 0):
            loadings[risk_off] *= -1.0

    return ComponentMap(loadings, cmap.asset_order, cmap.iq, cmap.window_len, cmap.labels, risk_on, risk_off)


# ---------- aggregation ----------


def iqr(values) -> float:
    q75, q25 = np.quantile(np.asarray(values, dtype=float), [0.75, 0.25], method="linear")
    return float(q75 - q25)


def aggregate_era(aligned_maps: Sequence[ComponentMap], label: str) -> EraAggregate:
    """Element-wise mean map plus per-component median and IQR of I_q."""
    maps = list(aligned_maps)
    if not maps:
        raise EmptyInput(f"era {label!r} has no aligned maps to aggregate")
    for m in maps[1:]:
        _check_comparable(maps[0], m)
    mean = np.mean([m.loadings for m in maps], axis=0)
    iq = np.vstack([m.iq for m in maps])  # n_maps x K
    median = np.quantile(iq, 0.5, axis=0, method="linear")
    spread = np.quantile(iq, 0.75, axis=0, method="linear") - np.quantile(iq, 0.25, axis=0, method="linear")
    first = maps[0]
    mean_map = ComponentMap(mean, first.asset_order, np.clip(median, 0.0, 1.0), first.window_len, first.labels, first.risk_on, first.risk_off)
    return EraAggregate(label, mean_map, median, spread, len(maps))


def occurrence_rate(iq_series, threshold: float = DEFAULT_OCCURRENCE_THRESHOLD) -> float:
    """Fraction of windows whose I_q is strictly above ``threshold``."""
    series = np.asarray(iq_series, dtype=float).reshape(-1)
    if series.size == 0:
        raise EmptyInput("occurrence rate of an empty series")
    return float(np.count_nonzero(series > threshold) / series.size)


def cross_era_similarity(aggregates: Sequence[EraAggregate]) -> CrossEraTable:
    """Matched |corr| between every pair of era mean maps."""
    aggregates = list(aggregates)
    if len(aggregates) < 2:
        raise InvalidParameter("cross-era similarity needs at least two eras")
    labels = tuple(a.era_label for a in aggregates)
    table = np.eye(len(aggregates))
    pairs = {}
    for i, a in enumerate(aggregates):
        for j, b in enumerate(aggregates):
            if j <= i:
                continue
            match = match_components(a.mean_map, b.mean_map)
            pairs[(a.era_label, b.era_label)] = match
            table[i, j] = table[j, i] = match.mean_abs_corr
            logger.info("[XERA] %s vs %s mean |rho|=%.4f", a.era_label, b.era_label, match.mean_abs_corr)
    for i, a in enumerate(aggregates):
        # self-similarity: identity match by construction
        table[i, i] = match_components(a.mean_map, a.mean_map).mean_abs_corr
    return CrossEraTable(labels, table, pairs)
