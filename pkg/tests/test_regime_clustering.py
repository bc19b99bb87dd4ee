import numpy as np
import pandas as pd
import pytest

from resources.utils.dmnc_engine import build_dmnc
from resources.utils.errors import InvalidParameter, KTooLarge, RankDeficient
from resources.utils.regime_clustering import cluster_regimes, pca_embed, regime_timeline
from resources.utils.synth_bench import flip_template, gen_regime_tensor, window_labels

DELTA = 40
STRIDE = 10


def _planted(seed):
    schedule = [(0, 600, np.eye(3)), (600, 1200, flip_template(3, (0, 1), 0.9))]
    acts, steps = gen_regime_tensor(schedule, 3, 0.1, seed=seed)
    tensor = build_dmnc(acts, DELTA, STRIDE)
    return tensor.vectors(), window_labels(steps, DELTA, STRIDE)


# Positive Cases
@pytest.mark.acceptance
def test_planted_regimes_recovered(app_cfg):
    vectors, truth = _planted(app_cfg["seed"])
    labeling = cluster_regimes(vectors, 2, seed=app_cfg["seed"], restarts=5)
    accuracy = max(np.mean(labeling.labels == truth), np.mean(labeling.labels == 1 - truth))
    assert accuracy > 0.95, f"regime accuracy {accuracy:.3f} <= 0.95"


def test_labels_numbered_by_first_appearance(app_cfg):
    vectors, _ = _planted(app_cfg["seed"])
    labels = cluster_regimes(vectors, 3, seed=1).labels
    firsts = [int(np.argmax(labels == c)) for c in range(3)]
    assert labels[0] == 0 and firsts == sorted(firsts)


def test_same_seed_same_labels_any_threads(app_cfg):
    vectors, _ = _planted(app_cfg["seed"])
    serial = cluster_regimes(vectors, 2, seed=9, restarts=4)
    threaded = cluster_regimes(vectors, 2, seed=9, restarts=4, threads=app_cfg["threads"])
    assert np.array_equal(serial.labels, threaded.labels)
    assert np.array_equal(serial.centroids, threaded.centroids)
    assert serial.inertia == threaded.inertia


def test_single_cluster_is_the_mean(rng):
    X = rng.standard_normal((20, 3))
    labeling = cluster_regimes(X, 1, seed=0, restarts=2)
    assert np.all(labeling.labels == 0)
    assert np.allclose(labeling.centroids[0], X.mean(axis=0))
    assert labeling.inertia == pytest.approx(((X - X.mean(axis=0)) ** 2).sum())


def test_pca_embedding(rng):
    X = rng.standard_normal((30, 4)) * np.array([5.0, 2.0, 1.0, 0.5])
    coords, explained = pca_embed(X, 2)
    assert coords.shape == (30, 2)
    assert np.allclose(coords.mean(axis=0), 0.0, atol=1e-12)
    assert explained[0] >= explained[1] and explained.sum() <= 1.0
    assert np.var(coords[:, 0]) >= np.var(coords[:, 1])


def test_regime_timeline_runs():
    stamps = pd.bdate_range("2020-01-01", periods=6)
    timeline = regime_timeline([0, 0, 1, 1, 1, 0], stamps)
    assert timeline["label"].tolist() == [0, 1, 0]
    assert timeline["length"].tolist() == [2, 3, 1]
    assert timeline["start"].tolist() == [stamps[0], stamps[2], stamps[5]]
    assert timeline["end"].tolist() == [stamps[1], stamps[4], stamps[5]]
    assert timeline["length"].sum() == 6


# Negative Cases
@pytest.mark.negative
def test_k_larger_than_samples(rng):
    with pytest.raises(KTooLarge):
        cluster_regimes(rng.standard_normal((3, 2)), 4, seed=0)


@pytest.mark.negative
def test_non_finite_vectors_rejected():
    with pytest.raises(InvalidParameter):
        cluster_regimes([[0.1, np.nan], [0.2, 0.3]], 1, seed=0)


@pytest.mark.negative
def test_embedding_of_constant_vectors():
    with pytest.raises(RankDeficient):
        pca_embed(np.ones((5, 3)), 1)


@pytest.mark.negative
def test_timeline_length_mismatch():
    with pytest.raises(InvalidParameter):
        regime_timeline([0, 1], ["a"])
