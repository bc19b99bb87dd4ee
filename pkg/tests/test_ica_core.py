import numpy as np
import pytest

from resources.utils.errors import DegenerateInput, InvalidParameter, NonConvergenceWarning, RankDeficient
from resources.utils.ica_core import (
    MixingModel,
    contrast_logcosh,
    get_solver,
    ica_fixed_point,
    ica_picard_orthogonal,
    pca_whiten,
    symmetric_decorrelation,
)
from resources.utils.synth_bench import SourceDist, gen_sources, mix, random_mixing, recovery_score


def _planted(K, T, seed, F=None, dist=SourceDist.LAPLACE):
    model = MixingModel(random_mixing(F or K, K, seed), gen_sources(K, T, dist, seed + 1))
    return model, mix(model)


# Positive Cases
def test_whitened_covariance_is_identity(app_cfg):
    _, X = _planted(3, 2000, app_cfg["seed"], F=6)
    white = pca_whiten(X, 3)
    cov = np.cov(white.whitened, ddof=1)
    assert np.allclose(cov, np.eye(3), atol=1e-10), f"whitened covariance:\n{cov}"
    assert white.forward.shape == (3, 6) and white.inverse.shape == (6, 3)
    assert np.all(np.diff(white.explained_variance) <= 0)


def test_whitening_inverse_reconstructs_full_rank_data(rng):
    X = rng.standard_normal((4, 50))
    white = pca_whiten(X, 4)
    assert np.allclose(white.inverse @ white.whitened + white.mean[:, None], X, atol=1e-10)
    assert np.allclose(white.transform(X), white.whitened, atol=1e-10)


def test_whitening_is_deterministic(rng):
    X = rng.standard_normal((5, 40))
    a, b = pca_whiten(X, 3), pca_whiten(X.copy(), 3)
    assert np.array_equal(a.whitened, b.whitened)


def test_contrast_is_stable_for_large_arguments():
    G, g, g_prime = contrast_logcosh(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(G))
    assert G[1] == 0.0
    assert np.isclose(G[2], 1000.0 - np.log(2.0))
    assert np.allclose(g, [-1.0, 0.0, 1.0]) and np.allclose(g_prime, [0.0, 1.0, 0.0])
    assert isinstance(contrast_logcosh(0.5)[0], float)


def test_symmetric_decorrelation_gives_orthonormal_rows(rng):
    W = symmetric_decorrelation(rng.standard_normal((4, 4)))
    assert np.allclose(W @ W.T, np.eye(4), atol=1e-12)


@pytest.mark.acceptance
def test_fixed_point_recovers_planted_laplace_sources(app_cfg):
    scores = []
    for trial in range(app_cfg["trials"]):
        seed = app_cfg["seed"] + 10 * trial
        model, X = _planted(2, 5000, seed)
        white = pca_whiten(X, 2)
        unmixing = ica_fixed_point(white.whitened, 2, seed=seed)
        assert unmixing.converged, f"trial {trial}: no convergence after {unmixing.iterations} iterations"
        scores.append(recovery_score(unmixing, white, model))
    passed = sum(s > 0.95 for s in scores) / len(scores)
    assert passed >= 0.95, f"only {passed:.0%} of trials recovered the sources: {np.round(scores, 3).tolist()}"


@pytest.mark.parametrize("dist", [SourceDist.UNIFORM, SourceDist.SIGNED_SQUARE])
def test_fixed_point_recovers_other_source_shapes(app_cfg, dist):
    model, X = _planted(3, 5000, app_cfg["seed"], F=5, dist=dist)
    white = pca_whiten(X, 3)
    score = recovery_score(ica_fixed_point(white.whitened, 3, seed=app_cfg["seed"]), white, model)
    assert score > 0.95, f"{dist.value}: recovery score {score:.4f} <= 0.95"


def test_fixed_point_same_seed_same_rows(app_cfg):
    _, X = _planted(3, 1000, app_cfg["seed"])
    Z = pca_whiten(X, 3).whitened
    assert np.array_equal(ica_fixed_point(Z, 3, seed=7).rows, ica_fixed_point(Z, 3, seed=7).rows)


def test_quasi_newton_solver_recovers_sources(app_cfg):
    model, X = _planted(2, 5000, app_cfg["seed"])
    white = pca_whiten(X, 2)
    unmixing = get_solver("picard")(white.whitened, 2, seed=app_cfg["seed"])
    assert np.allclose(unmixing.rows @ unmixing.rows.T, np.eye(2), atol=1e-8)
    assert recovery_score(unmixing, white, model) > 0.9


# Negative Cases
@pytest.mark.negative
def test_rank_above_min_dimension_rejected(rng):
    with pytest.raises(InvalidParameter):
        pca_whiten(rng.standard_normal((3, 10)), 4)


@pytest.mark.negative
def test_rank_deficient_data_rejected(rng):
    row = rng.standard_normal(10)
    X = np.vstack([row, row, rng.standard_normal(10)])
    with pytest.raises(RankDeficient) as e:
        pca_whiten(X, 3)
    assert e.value.requested == 3 and e.value.available == 2


@pytest.mark.negative
def test_constant_whitened_row_is_degenerate(rng):
    Z = np.vstack([rng.standard_normal(20), np.zeros(20)])
    with pytest.raises(DegenerateInput):
        ica_fixed_point(Z, 2)


@pytest.mark.negative
@pytest.mark.parametrize("K", [0, 3])
def test_k_outside_rank_rejected(rng, K):
    with pytest.raises(InvalidParameter):
        ica_fixed_point(rng.standard_normal((2, 30)), K)


@pytest.mark.negative
def test_iteration_budget_exhausted_warns(app_cfg):
    _, X = _planted(3, 2000, app_cfg["seed"])
    with pytest.warns(NonConvergenceWarning):
        unmixing = ica_fixed_point(pca_whiten(X, 3).whitened, 3, max_iter=1)
    assert not unmixing.converged and unmixing.iterations == 1


@pytest.mark.negative
def test_quasi_newton_needs_square_problem(rng):
    with pytest.raises(InvalidParameter):
        ica_picard_orthogonal(rng.standard_normal((3, 50)), 2)


@pytest.mark.negative
def test_unknown_solver_rejected():
    with pytest.raises(InvalidParameter):
        get_solver("infomax")
