from itertools import permutations

import numpy as np
import pandas as pd
import pytest

from helpers.test_data_loader import IQR_CASES, OCCURRENCE_CASES, PLANTED_PERMUTATIONS, REGISTRY
from resources.utils.component_registry import (
    BootstrapEnsemble,
    EraAggregate,
    ResampleScheme,
    aggregate_era,
    align_signs,
    align_to_reference,
    canonical_polarity,
    consensus_from_ensemble,
    cross_correlation,
    cross_era_similarity,
    icasso_consensus,
    icasso_ensemble,
    iq_score,
    iqr,
    match_components,
    occurrence_rate,
    standardize_rows,
)
from resources.utils.errors import (
    AssetOrderMismatch,
    DimensionMismatch,
    EmptyInput,
    EmptyReferenceSet,
    InvalidParameter,
    ZeroTotalVariance,
    ZeroVarianceComponent,
)
from resources.utils.group_ica import NOISY_IQ, ComponentMap, build_pseudo_subjects
from resources.utils.ica_core import MixingModel
from resources.utils.market_data import AssetPanel, FeatureKind
from resources.utils.synth_bench import gen_sources, matched_abs_corr, mix, random_mixing

ASSETS = tuple("ABCDEFGHIJ")


def _map(loadings, assets=ASSETS, iq=None):
    loadings = np.asarray(loadings, dtype=float)
    return ComponentMap(loadings, assets[: loadings.shape[1]], np.ones(loadings.shape[0]) if iq is None else iq, 20)


def _planted_stack(seed, N=8, K=3, T=600):
    model = MixingModel(random_mixing(N, K, seed), gen_sources(K, T, seed=seed + 1))
    dates = pd.bdate_range("2020-01-01", periods=T)
    panel = AssetPanel(dates, ASSETS[:N], mix(model).T, FeatureKind.LOGRET, 1)
    return model, build_pseudo_subjects(panel, 100, 50)


# Positive Cases
def test_thresholds_match_registry_constants():
    assert NOISY_IQ == REGISTRY["thresholds"]["noisy_iq"]


@pytest.mark.parametrize("perm,signs", PLANTED_PERMUTATIONS)
def test_match_recovers_planted_permutation_and_signs(rng, perm, signs):
    Wa = _map(rng.standard_normal((3, 10)))
    loadings = np.empty_like(Wa.loadings)
    loadings[perm] = np.asarray(signs)[:, None] * Wa.loadings
    Wb = _map(loadings)

    match = match_components(Wa, Wb)
    assert match.permutation.tolist() == perm, f"permutation {match.permutation.tolist()} != {perm}"
    assert match.signs.tolist() == signs
    assert np.allclose(match.matched_abs_corr, 1.0)

    aligned = align_signs(Wa, Wb, match.permutation)
    assert np.allclose(aligned.loadings, Wa.loadings)
    assert aligned.labels == Wa.labels


@pytest.mark.parametrize("order,expected", [([1, 0, 1], [1, 0, 2]), ([1, 1, 0], [2, 0, 1]), ([0, 1, 1], [0, 1, 2])])
def test_tied_matches_take_lowest_column(rng, order, expected):
    distinct = rng.standard_normal((2, 10))
    Wa = _map(distinct[[0, 1, 1]])
    Wb = _map(distinct[order])
    match = match_components(Wa, Wb)
    assert match.permutation.tolist() == expected, f"permutation {match.permutation.tolist()} != {expected}"
    assert match.signs.tolist() == [1, 1, 1]


def test_hungarian_matches_brute_force_optimum(app_cfg, rng):
    perms = np.array(list(permutations(range(6))))
    for trial in range(50 * app_cfg["trials"]):
        Wa, Wb = _map(rng.standard_normal((6, 10))), _map(rng.standard_normal((6, 10)))
        abs_corr = np.abs(cross_correlation(Wa.loadings, Wb.loadings))
        best = abs_corr[np.arange(6), perms].sum(axis=1).max()
        match = match_components(Wa, Wb)
        assert np.isclose(match.score, best, rtol=0, atol=1e-12), f"trial {trial}: hungarian {match.score} vs brute force {best}"
        assert sorted(match.permutation.tolist()) == list(range(6))


def test_align_to_reference_gives_non_negative_diagonal(rng):
    reference = _map(rng.standard_normal((4, 10)))
    other = _map(-reference.loadings[[3, 1, 0, 2]] + 0.05 * rng.standard_normal((4, 10)))
    aligned, match = align_to_reference(reference, other)
    diag = np.diag(cross_correlation(reference.loadings, aligned.loadings))
    assert np.all(diag >= 0), f"aligned diagonal {diag}"
    assert match.mean_abs_corr > 0.9


def test_identical_runs_have_unit_stability(rng):
    run = _map(rng.standard_normal((3, 10)))
    consensus = consensus_from_ensemble(BootstrapEnsemble((run,) * 5, ResampleScheme.SEED_ONLY))
    assert np.allclose(consensus.iq, 1.0), f"iq {consensus.iq}"
    assert matched_abs_corr(consensus.loadings, run.loadings).min() > 1 - 1e-12


@pytest.mark.acceptance
def test_noisy_component_scores_below_signal_components(app_cfg, rng):
    spread = np.array([0.05, 0.05, 0.7])
    for trial in range(app_cfg["trials"]):
        base = rng.standard_normal((3, 40))
        runs = []
        for _ in range(10):
            rows = base + spread[:, None] * rng.standard_normal((3, 40))
            rows *= rng.choice([-1.0, 1.0], size=(3, 1))
            runs.append(_map(rows[rng.permutation(3)], assets=tuple(f"S{i:02d}" for i in range(40))))
        consensus = consensus_from_ensemble(BootstrapEnsemble(tuple(runs), ResampleScheme.SEED_ONLY))
        owner = np.abs(cross_correlation(consensus.loadings, base)).argmax(axis=1)
        assert sorted(owner.tolist()) == [0, 1, 2], f"trial {trial}: clusters map to {owner.tolist()}"
        iq = consensus.iq[np.argsort(owner)]
        assert iq[2] < iq[:2].min(), f"trial {trial}: noisy iq {iq[2]:.3f} vs signal {iq[:2]}"


def test_iq_score_of_singleton_and_spread():
    assert iq_score([[1.0, 0.0]], 2.0) == 1.0
    assert iq_score([[1.0, 0.0], [-1.0, 0.0]], 1.0) == 0.0


@pytest.mark.acceptance
def test_icasso_on_planted_stack(app_cfg):
    model, stack = _planted_stack(app_cfg["seed"])
    cmap = icasso_consensus(stack, 4, 3, base_seed=app_cfg["seed"], subject_rank=3, group_rank=3)
    assert cmap.K == 3 and np.all((cmap.iq >= 0) & (cmap.iq <= 1))
    assert cmap.iq.min() > 0.9, f"iq {cmap.iq}"
    assert matched_abs_corr(cmap.loadings, model.mixing.T).min() > 0.95


def test_icasso_threads_do_not_change_result(app_cfg):
    _, stack = _planted_stack(app_cfg["seed"])
    serial = icasso_consensus(stack, 4, 3, base_seed=5, threads=1)
    threaded = icasso_consensus(stack, 4, 3, base_seed=5, threads=app_cfg["threads"])
    assert np.array_equal(serial.loadings, threaded.loadings)
    assert np.array_equal(serial.iq, threaded.iq)


def test_window_bootstrap_ensemble_runs(app_cfg):
    _, stack = _planted_stack(app_cfg["seed"])
    ensemble = icasso_ensemble(stack, 3, 3, seeds=[1, 2, 3], scheme=ResampleScheme.WINDOW_BOOTSTRAP)
    assert ensemble.seeds == (1, 2, 3)
    assert ensemble.stacked().shape == (9, 8)


def test_canonical_polarity_labels_and_orients():
    loadings = [
        [0.1, 0.0, 0.2, -0.1, 0.0, 0.1],
        [-2.0, -2.0, 0.1, 0.1, 0.0, 0.0],
        [0.5, 0.5, 3.0, 3.0, 3.0, 3.0],
    ]
    cmap = canonical_polarity(_map(loadings), ["A", "B"])
    assert cmap.risk_on == 1 and cmap.risk_off == 2
    assert cmap.loadings[1, :2].mean() > 0
    assert cmap.loadings[2, :2].mean() <= 0
    assert np.array_equal(cmap.loadings[0], loadings[0])


@pytest.mark.parametrize("series,threshold,expected", OCCURRENCE_CASES)
def test_occurrence_rate(series, threshold, expected):
    assert occurrence_rate(series, threshold) == expected


@pytest.mark.parametrize("values,expected", IQR_CASES)
def test_iqr(values, expected):
    assert iqr(values) == pytest.approx(expected)


def test_aggregate_era_mean_and_iq_spread(rng):
    base = rng.standard_normal((2, 10))
    maps = [_map(base, iq=[0.9, 0.5]), _map(base + 1.0, iq=[0.7, 0.5]), _map(base + 2.0, iq=[1.0, 0.5])]
    agg = aggregate_era(maps, "E1")
    assert np.allclose(agg.mean_map.loadings, base + 1.0)
    assert np.allclose(agg.median_iq, [0.9, 0.5])
    assert np.allclose(agg.iqr_iq, [0.15, 0.0])
    assert agg.n_maps == 3


def test_cross_era_same_mixing_beats_independent(rng):
    shared = rng.standard_normal((3, 10))
    same = [EraAggregate("E1", _map(shared), np.ones(3), np.zeros(3)), EraAggregate("E2", _map(-shared[[2, 0, 1]] + 0.01 * rng.standard_normal((3, 10))), np.ones(3), np.zeros(3))]
    other = [same[0], EraAggregate("E3", _map(rng.standard_normal((3, 10))), np.ones(3), np.zeros(3))]
    same_table = cross_era_similarity(same)
    other_table = cross_era_similarity(other)
    assert np.allclose(np.diag(same_table.mean_abs_corr), 1.0)
    assert same_table.mean_abs_corr[0, 1] > 0.99
    assert other_table.mean_abs_corr[0, 1] < same_table.mean_abs_corr[0, 1]
    assert ("E1", "E2") in same_table.pairs


# Negative Cases
@pytest.mark.negative
def test_match_rejects_different_asset_order(rng):
    with pytest.raises(AssetOrderMismatch):
        match_components(_map(rng.standard_normal((2, 3))), _map(rng.standard_normal((2, 3)), assets=("B", "A", "C")))


@pytest.mark.negative
def test_match_rejects_different_k(rng):
    with pytest.raises(DimensionMismatch):
        match_components(_map(rng.standard_normal((2, 4))), _map(rng.standard_normal((3, 4))))


@pytest.mark.negative
def test_align_rejects_non_permutation(rng):
    Wa = _map(rng.standard_normal((3, 4)))
    with pytest.raises(InvalidParameter):
        align_signs(Wa, Wa, [0, 0, 1])


@pytest.mark.negative
def test_zero_row_cannot_be_standardized():
    with pytest.raises(ZeroVarianceComponent):
        standardize_rows(np.array([[1.0, 2.0], [3.0, 3.0]]))


@pytest.mark.negative
def test_zero_total_variance():
    with pytest.raises(ZeroTotalVariance):
        iq_score([[1.0, 1.0]], 0.0)


@pytest.mark.negative
def test_empty_aggregations():
    with pytest.raises(EmptyInput):
        occurrence_rate([])
    with pytest.raises(EmptyInput):
        aggregate_era([], "E1")


@pytest.mark.negative
def test_icasso_needs_two_runs(app_cfg):
    _, stack = _planted_stack(app_cfg["seed"])
    with pytest.raises(InvalidParameter):
        icasso_consensus(stack, 1, 3)


@pytest.mark.negative
def test_cross_era_needs_two_eras(rng):
    with pytest.raises(InvalidParameter):
        cross_era_similarity([EraAggregate("E1", _map(rng.standard_normal((2, 4))), np.ones(2), np.zeros(2))])


@pytest.mark.negative
def test_polarity_reference_must_be_in_map(rng):
    with pytest.raises(EmptyReferenceSet):
        canonical_polarity(_map(rng.standard_normal((2, 4))), ["ZZZ"])
    with pytest.raises(EmptyReferenceSet):
        canonical_polarity(_map(rng.standard_normal((2, 4))), [])
