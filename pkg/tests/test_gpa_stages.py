import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from pathgpa.gpa import fit_stages


def _blobs(centers, n=10, sd=0.3, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.vstack([c + sd * rng.standard_normal((n, len(c))) for c in centers])
    return pts, np.repeat(np.arange(len(centers)), n)


def _monotone(trace):
    t = np.asarray(trace)
    return np.all(np.diff(t) >= -1e-9 * np.maximum(1.0, np.abs(t[1:])))


def test_two_clusters_separated_perfectly():
    x, truth = _blobs([np.zeros(3), np.array([10.0, 10.0, 1.0])])
    fit = fit_stages(x, 2)
    assert adjusted_rand_score(truth, fit.labels) == 1.0
    assert _monotone(fit.log_likelihood)


def test_weights_sum_to_one_and_covariances_psd():
    x, _ = _blobs([np.zeros(3), np.ones(3) * 5, np.ones(3) * 10], seed=1)
    fit = fit_stages(x, 3)
    assert fit.weights.sum() == pytest.approx(1.0)
    for c in fit.covariances:
        assert np.linalg.eigvalsh(c).min() > 0


def test_labels_follow_severity_order():
    x, _ = _blobs([np.array([0, 0, 3.0]), np.array([5, 0, 1.0]), np.array([0, 5, 2.0])], seed=2)
    fit = fit_stages(x, 3)
    assert np.all(np.diff(fit.means[:, -1]) > 0)


def test_auto_selects_planted_component_count():
    x, truth = _blobs([np.array([0, 0, 0.0]), np.array([6, 0, 1.0]), np.array([0, 6, 2.0]),
                       np.array([6, 6, 3.0])], n=12, sd=0.4, seed=3)
    fit = fit_stages(x, "auto")
    assert fit.n_components == 4
    assert set(fit.bic) == {2, 3, 4, 5, 6}
    assert adjusted_rand_score(truth, fit.labels) >= 0.9


def test_duplicate_points_are_regularized():
    x = np.vstack([np.zeros((5, 3)), np.ones((5, 3))])
    fit = fit_stages(x, 2)
    assert fit.regularized
    assert adjusted_rand_score(np.repeat([0, 1], 5), fit.labels) == 1.0


def test_too_few_points_rejected():
    with pytest.raises(ValueError):
        fit_stages(np.zeros((2, 3)), 2)


def test_single_component():
    fit = fit_stages(np.random.default_rng(0).normal(size=(6, 3)), 1)
    assert np.all(fit.labels == 0)


def test_deterministic_under_seed():
    x, _ = _blobs([np.zeros(3), np.ones(3) * 4], seed=4)
    a, b = fit_stages(x, 2, seed=5), fit_stages(x, 2, seed=5)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.log_likelihood == b.log_likelihood
