import numpy as np
import pytest

from pathgpa.sde import (FunctionSde, NodeTrajectorySet, Thresholds, detect_bifurcation, detect_graph_bifurcation,
                         potential_profile)


def _switch_field(t_star=4, target=3.0 / np.sqrt(8)):
    def drift(x, t):
        t = np.broadcast_to(np.asarray(t, dtype=float)[..., None], np.shape(x))
        return np.where(t < t_star, -0.5 * x, 0.5 * (target - x))
    return drift


def _observed(drift, T=12, N=3, seed=0, sigma=0.15, d=8):
    rng = np.random.default_rng(seed)
    x = np.zeros((T, N, d))
    x[0] = sigma / np.sqrt(0.75) * rng.standard_normal((N, d))
    for t in range(1, T):
        x[t] = x[t - 1] + drift(x[t - 1], t - 1) + sigma * rng.standard_normal((N, d))
    return NodeTrajectorySet(x)


TH = Thresholds(n_samples=64, horizon=10)


def test_planted_switch_detected_at_switch_step():
    drift = _switch_field()
    model = FunctionSde(drift, lambda x, t: 0.15)
    rep = detect_bifurcation(model, _observed(drift), TH)
    assert rep.t_star == 4
    assert "new-steady-state" in rep.conditions


def test_null_field_has_no_detection():
    drift = lambda x, t: -0.5 * x  # noqa: E731
    model = FunctionSde(drift, lambda x, t: 0.15)
    rep = detect_bifurcation(model, _observed(drift), TH)
    assert rep.t_star is None and rep.conditions == []


def test_step_zero_never_reported():
    # already far from equilibrium at t=0: escape is visible from the start
    drift = lambda x, t: 0.5 * (3.0 / np.sqrt(8) - x)  # noqa: E731
    model = FunctionSde(drift, lambda x, t: 0.15)
    rep = detect_bifurcation(model, _observed(drift), TH)
    assert rep.t_star == 1
    assert all(n.t_star != 0 for n in rep.nodes)


def test_variance_explosion_condition():
    def diffusion(x, t):
        t = np.broadcast_to(np.asarray(t, dtype=float)[..., None], np.shape(x))
        return np.where(t >= 6, 2.0 * np.sin(3.0 * t), 0.1)
    model = FunctionSde(lambda x, t: -0.5 * x, diffusion)
    rep = detect_bifurcation(model, _observed(lambda x, t: -0.5 * x), TH)
    assert rep.t_star is not None
    assert any("variance-explosion" in n.conditions for n in rep.nodes)


def test_short_trajectory_rejected():
    model = FunctionSde(lambda x, t: -x, lambda x, t: 0.1)
    with pytest.raises(ValueError):
        detect_bifurcation(model, NodeTrajectorySet(np.zeros((4, 1, 1))), TH)


def test_potential_profile_of_gradient_field():
    # psi = -x along a straight path from 0 to 3: J(t) = sum x_s * step
    path = np.arange(4.0)[:, None]
    J, dJ, norms = potential_profile(FunctionSde(lambda x, t: -x, lambda x, t: 0.0), path)
    np.testing.assert_allclose(J, [0, 0, 1, 3])
    np.testing.assert_allclose(norms, [0, 1, 2, 3])


def test_negative_edge_fires_neighbourhood_condition():
    drift = lambda x, t: -0.5 * x  # noqa: E731
    traj = _observed(drift)
    a = np.array([[0, -0.1, 0], [-0.1, 0, 0], [0, 0, 0.0]])
    rep = detect_graph_bifurcation(FunctionSde(drift, lambda x, t: 0.05, a, "gradient"), traj, a, TH)
    assert rep.t_star == 1
    assert "neighborhood-influence" in rep.conditions
    assert rep.diagnostics["negative_edge"]


def test_nonnegative_graph_without_switch_is_quiet():
    drift = lambda x, t: -0.5 * x  # noqa: E731
    a = np.full((3, 3), 0.05) - 0.05 * np.eye(3)
    rep = detect_graph_bifurcation(FunctionSde(drift, lambda x, t: 0.05, a, "gradient"), _observed(drift), a, TH)
    assert rep.t_star is None
    assert not rep.diagnostics["negative_edge"]


def test_report_serialization():
    drift = _switch_field()
    rep = detect_bifurcation(FunctionSde(drift, lambda x, t: 0.15), _observed(drift), TH)
    d = rep.as_dict()
    assert d["thresholds"]["C"] == 1.0 and d["thresholds"]["delta"] == 0.1
    assert rep.to_tsv().splitlines()[0] == "node\tt_star\tconditions"
