"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import filecmp
import itertools
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr
from sklearn.metrics import adjusted_rand_score

from pathgpa.config import PipelineConfig
from pathgpa.gpa import (GpaConfig, WeightedGraph, default_endpoints, fit_stages, knn_graph, minimum_spanning_tree,
                         run_gpa, shortest_path_trajectory, transition_pairs, tree_path)
from pathgpa.graphs import build_dataset
from pathgpa.numerics import autodiff as ad
from pathgpa.numerics import sym_eig
from pathgpa.numerics.autodiff import Tape, backward, forward
from pathgpa.numerics.rng import make_rng
from pathgpa.pipeline import MANIFEST, run_pipeline
from pathgpa.regression import RegressorConfig, sensitivity_scores, train_regressor
from pathgpa.sde import (FunctionSde, NodeTrajectorySet, SdeConfig, Thresholds, detect_bifurcation,
                         detect_graph_bifurcation, dirichlet_energy, fit_graph_sde, fit_sde,
                         graph_pathway_stability, negative_edge_flag, pathway_stability)
from pathgpa.sde.model import COUPLINGS
from pathgpa.synthetic import (SynthesisConfig, default_switch_drifts, generate_dataset, generate_ou_paths,
                               generate_regime_switch)
from pathgpa.tgcn import TemporalSequence, TgcnConfig, TgcnModel, train_tgcn

pytestmark = pytest.mark.acceptance

SEEDS = range(10)


# 1 ------------------------------------------------------------------------

ACTIVATIONS = (ad.tanh, ad.sigmoid, ad.softplus, ad.sin)


def _random_network(rng):
    while True:
        d_in = int(rng.integers(2, 8))
        widths = [d_in] + [int(rng.integers(2, 20)) for _ in range(rng.integers(1, 4))] + [1]
        if sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:])) <= 500:
            break
    params = {}
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"w{k}"] = rng.normal(scale=1 / np.sqrt(a), size=(a, b))
        params[f"b{k}"] = rng.normal(scale=0.1, size=b)
    acts = [ACTIVATIONS[i] for i in rng.integers(0, len(ACTIVATIONS), len(widths) - 2)]

    def fn(p, x):
        h = x
        for k in range(len(widths) - 1):
            h = ad.matmul(h, p[f"w{k}"]) + p[f"b{k}"]
            if k < len(acts):
                h = acts[k](h)
        return ad.sum_(ad.square(h))

    return Tape(fn, params), rng.normal(size=(int(rng.integers(1, 5)), d_in))


def _rel_error(auto, num):
    # per-tensor relative error; the floor keeps near-zero gradients from dividing noise by noise
    return float(np.max(np.abs(auto - num)) / max(np.max(np.abs(num)), 1e-3))


def test_criterion_01_autodiff_vs_finite_differences(verdict):
    rng = np.random.default_rng(2024)
    start, worst, biggest = time.perf_counter(), 0.0, 0
    for _ in range(100):
        tape, x = _random_network(rng)
        n_params = sum(v.size for v in tape.params.values())
        biggest = max(biggest, n_params)
        forward(tape, [x])
        grads = backward(tape)
        h = 1e-6
        for name, value in tape.params.items():
            num = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                orig = value[idx]
                value[idx] = orig + h
                fp = float(forward(tape, [x]))
                value[idx] = orig - h
                fm = float(forward(tape, [x]))
                value[idx] = orig
                num[idx] = (fp - fm) / (2 * h)
            worst = max(worst, _rel_error(grads.params[name], num))
        forward(tape, [x])
        gx = backward(tape).inputs[0]
        worst = max(worst, _rel_error(gx, _numeric_input(tape, x, h)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 30 and biggest <= 500
    verdict(1, ok, f"max rel err {worst:.2e}, largest net {biggest} params, {elapsed:.1f}s")
    assert ok


def _numeric_input(tape, x, h):
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        p, m = x.copy(), x.copy()
        p[idx] += h
        m[idx] -= h
        num[idx] = (float(forward(tape, [p])) - float(forward(tape, [m]))) / (2 * h)
    return num


# 2 ------------------------------------------------------------------------

def test_criterion_02_eigensolver(verdict):
    rng = np.random.default_rng(7)
    worst_res = worst_orth = 0.0
    for _ in range(50):
        a = rng.normal(size=(50, 50))
        a = (a + a.T) / 2
        vals, vecs = sym_eig(a)
        worst_res = max(worst_res, np.linalg.norm(a - vecs @ np.diag(vals) @ vecs.T) / np.linalg.norm(a))
        worst_orth = max(worst_orth, np.linalg.norm(vecs.T @ vecs - np.eye(50)))
    ok = worst_res <= 1e-8 and worst_orth <= 1e-8
    verdict(2, ok, f"residual {worst_res:.1e}, orthogonality {worst_orth:.1e}")
    assert ok


# 3 ------------------------------------------------------------------------

def _connected(n, edges):
    adj = {i: set() for i in range(n)}
    for i, j, _ in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen, stack = {0}, [0]
    while stack:
        for v in adj[stack.pop()] - seen:
            seen.add(v)
            stack.append(v)
    return len(seen) == n


def _simple_paths(adj, s, e, path=None):
    path = path or [s]
    if path[-1] == e:
        yield list(path)
        return
    for v in adj[path[-1]]:
        if v not in path:
            yield from _simple_paths(adj, s, e, path + [v])


def test_criterion_03_graph_algorithms_vs_brute_force(verdict):
    rng = np.random.default_rng(3)
    mst_ok = path_ok = 0
    trials = 0
    while trials < 50:
        n = int(rng.integers(2, 8))
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        edges = [(i, j, float(rng.uniform(0.1, 5.0))) for i, j in pairs if rng.random() < 0.6]
        if not _connected(n, edges):
            continue
        trials += 1
        g = WeightedGraph(n, edges)
        tree = minimum_spanning_tree(g)
        best = min(sum(w for _, _, w in sub) for sub in itertools.combinations(edges, n - 1)
                   if _connected(n, sub))
        mst_ok += len(tree.edges) == n - 1 and abs(tree.total_weight() - best) < 1e-9
        s, e = (int(v) for v in rng.integers(0, n, 2))
        paths = list(_simple_paths(tree.adjacency(), s, e))
        path_ok += len(paths) == 1 and tree_path(tree, s, e) == paths[0]
    ok = mst_ok == 50 and path_ok == 50
    verdict(3, ok, f"MST optimal {mst_ok}/50, tree path {path_ok}/50")
    assert ok


# 4 ------------------------------------------------------------------------

def test_criterion_04_sensitive_pathway_recovery(verdict):
    hits, worst = [], 0.0
    for seed in SEEDS:
        t0 = time.perf_counter()
        table, catalog, severity, truth = generate_dataset(SynthesisConfig(seed=seed))
        ds = build_dataset(table, catalog, severity)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, _ = train_regressor(ds, RegressorConfig(seed=seed))
        ranking = sensitivity_scores(model, ds)
        hits.append(set(truth.planted) <= set(ranking.order[:3]))
        worst = max(worst, time.perf_counter() - t0)
    ok = sum(hits) >= 8 and worst < 120
    verdict(4, ok, f"planted in top 3 on {sum(hits)}/10 seeds, slowest seed {worst:.1f}s")
    assert ok


# 5 ------------------------------------------------------------------------

def test_criterion_05_pseudotime_recovery(verdict):
    rhos, endpoints_ok = [], 0
    for seed in SEEDS:
        table, catalog, severity, truth = generate_dataset(SynthesisConfig(n_subjects=23, seed=seed))
        ds = build_dataset(table, catalog, severity)
        traj = run_gpa(ds, GpaConfig(reducer="pca", seed=seed)).trajectory
        tau = [truth.latent_time[ds.subject_ids[i]] for i in traj.indices]
        rhos.append(abs(spearmanr(np.arange(len(tau)), tau).statistic))
        y = ds.severity
        endpoints_ok += traj.indices[0] == int(np.argmin(y)) and traj.indices[-1] == int(np.argmax(y))
    good = sum(r >= 0.8 for r in rhos)
    ok = good >= 8 and endpoints_ok == 10
    verdict(5, ok, f"|rho|>=0.8 on {good}/10 seeds (min {min(rhos):.3f}), endpoints exact {endpoints_ok}/10")
    assert ok


# 6 ------------------------------------------------------------------------

def _monotone(trace):
    t = np.asarray(trace)
    return bool(np.all(np.diff(t) >= -1e-9 * np.maximum(1.0, np.abs(t[1:]))))


def test_criterion_06_mixture_stages(verdict):
    aris, monotone, pairs_ok = [], 0, 0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        centers = [np.array([3.0 * k, 0.0, 0.0]) for k in range(4)]
        truth = np.repeat(np.arange(4), 8)
        x = np.vstack([c + 0.4 * rng.standard_normal((8, 3)) for c in centers])
        fit = fit_stages(x, 4, seed=seed)
        auto = fit_stages(x, "auto", seed=seed)
        monotone += _monotone(fit.log_likelihood) and _monotone(auto.log_likelihood)
        aris.append(adjusted_rand_score(truth, fit.labels))
        tree = minimum_spanning_tree(knn_graph(x, 8))
        start, end = default_endpoints(x[:, 0])
        path = shortest_path_trajectory(tree, start, end).indices
        labels = [int(fit.labels[i]) for i in path]
        pairs_ok += len(transition_pairs(labels)) == len(set(labels)) - 1
    ok = monotone == 10 and min(aris) >= 0.9 and pairs_ok == 10
    verdict(6, ok, f"LL monotone {monotone}/10, min ARI {min(aris):.3f}, pair count {pairs_ok}/10")
    assert ok


# 7 ------------------------------------------------------------------------

def test_criterion_07_tgcn(verdict):
    rng = np.random.default_rng(1)
    n, d = 4, 3
    a = np.eye(n) * 0.5 + 0.5 / n
    x, hp = rng.normal(size=(n, d)), rng.normal(size=(n, 5))
    m = TgcnModel(d, 5, make_rng(0))
    h1, _, _, h_tilde = m.cell(m.params, a, x, a, hp, force_q=1.0)
    h0, _, _, _ = m.cell(m.params, a, x, a, hp, force_q=0.0)
    gate_one = np.array_equal(h1, h_tilde)
    gate_zero = np.array_equal(h0, hp)

    T, N = 80, 5
    xs = rng.normal(size=(T, N, d))
    y = np.zeros(T)
    y[1:] = xs[:-1].mean(axis=(1, 2))
    seq = TemporalSequence(np.broadcast_to(np.eye(N), (T, N, N)), xs, y)
    _, log = train_tgcn(seq, TgcnConfig(hidden=16, epochs=200, runs=1, lr=0.01))
    test = np.array(log.split["test"])
    var = float(np.var(y[1:][test]))
    mse = float(log.test_mse[0])
    ok = gate_one and gate_zero and mse <= 0.1 * var
    verdict(7, ok, f"Q=1 {gate_one}, Q=0 {gate_zero}, lag-1 test MSE {mse:.2e} vs 10% variance {0.1 * var:.2e}")
    assert ok


# 8 ------------------------------------------------------------------------

def test_criterion_08_ou_drift_recovery(verdict):
    t0 = time.perf_counter()
    x0 = np.linspace(-2.5, 2.5, 200)[:, None]
    paths = generate_ou_paths(0.5, 0.2, 200, 200, seed=0, dt=0.05, x0=x0)
    traj = NodeTrajectorySet(paths, dt=0.05)
    model, _ = fit_sde(traj, SdeConfig(hidden=16, epochs=300, lr=0.02, time_input=False))
    grid = np.linspace(-2, 2, 81)[:, None, None]
    mae = float(np.mean(np.abs(np.asarray(model.drift(grid, 0.0)).ravel() + 0.5 * grid.ravel())))
    sig = np.asarray(model.diffusion(grid, 0.0)).ravel()
    elapsed = time.perf_counter() - t0
    ok = mae <= 0.05 and sig.min() >= 0.15 and sig.max() <= 0.25 and elapsed < 300
    verdict(8, ok, f"drift MAE {mae:.4f}, diffusion [{sig.min():.3f}, {sig.max():.3f}], {elapsed:.0f}s")
    assert ok


# 9 ------------------------------------------------------------------------

def test_criterion_09_pathway_stability(verdict):
    rng = np.random.default_rng(9)
    traj = NodeTrajectorySet(rng.normal(size=(6, 3, 2)))
    const_zero = bool(np.all(pathway_stability(FunctionSde(lambda x, t: -x, lambda x, t: 0.3), traj) == 0.0))

    x = np.array([0.0, 1.0, 3.0, 2.0]).reshape(4, 1, 1)
    ps = pathway_stability(FunctionSde(lambda x, t: 0.0, lambda x, t: x), NodeTrajectorySet(x))
    hand = abs(ps[0] - (1 + 4 + 1) / 4) <= 1e-12

    sq = FunctionSde(lambda x, t: 0.0, lambda x, t: x ** 2)
    adj = np.ones((3, 3)) - np.eye(3)
    gps_zero = np.array_equal(graph_pathway_stability(sq, traj, adj, 0.0), pathway_stability(sq, traj))

    dir_ok = 0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        a = np.triu(rng.uniform(-1, 1, size=(n, n)), 1)
        a = a + a.T
        z = rng.normal(size=(n, 3))
        ref = sum(a[i, j] * np.sum((z[j] - z[i]) ** 2) for i in range(n) for j in range(i + 1, n))
        dir_ok += abs(dirichlet_energy(z, a) - ref) <= 1e-10 * max(1.0, abs(ref))
    ok = const_zero and hand and gps_zero and dir_ok == 50
    verdict(9, ok, f"constant PS=0 {const_zero}, hand toy {hand}, GPS(0)=PS {gps_zero}, Dirichlet {dir_ok}/50")
    assert ok


# 10 -----------------------------------------------------------------------

def _bifurcation(seed, null):
    pre, post = default_switch_drifts(8)
    if null:
        post = pre
    paths, _ = generate_regime_switch(4, pre, post, 0.15, 50, 23, seed, dim=8)
    traj = NodeTrajectorySet(paths)
    model, _ = fit_sde(traj, SdeConfig(seed=seed, epochs=500, hidden=16))
    return detect_bifurcation(model, traj, Thresholds(seed=seed, horizon=10))


def test_criterion_10_bifurcation_detection(verdict):
    switch = [_bifurcation(seed, null=False) for seed in SEEDS]
    null = [_bifurcation(seed, null=True) for seed in SEEDS]
    hits = sum(r.t_star is not None and abs(r.t_star - 4) <= 1 and "new-steady-state" in r.conditions
               for r in switch)
    quiet = sum(r.t_star is None for r in null)
    zero = sum(r.t_star == 0 or any(n.t_star == 0 for n in r.nodes) for r in switch + null)
    ok = hits >= 8 and quiet >= 9 and zero == 0
    found = [r.t_star for r in switch]
    verdict(10, ok, f"switch detected at 4+-1 on {hits}/10 {found}, null quiet {quiet}/10, t*=0 reports {zero}")
    assert ok


# 11 -----------------------------------------------------------------------

def test_criterion_11_graph_reduction_and_flag(verdict):
    rng = np.random.default_rng(11)
    x = np.empty((20, 6, 1))
    x[0] = rng.normal(size=(6, 1))
    for t in range(1, 20):
        x[t] = 0.7 * x[t - 1] + 0.2 * rng.standard_normal((6, 1))
    traj = NodeTrajectorySet(x)
    same = 0
    for coupling in COUPLINGS:
        cfg = SdeConfig(hidden=6, epochs=30, coupling=coupling, seed=5)
        _, plain = fit_sde(traj, cfg)
        _, graph = fit_graph_sde(traj, np.zeros((6, 6)), cfg)
        same += plain.loss == graph.loss

    flag_ok = 0
    for k in range(50):
        a = np.triu(rng.uniform(0, 1, size=(4, 4)), 1)
        if k % 2:
            a[0, int(rng.integers(1, 4))] = -rng.uniform(0.01, 1)
        a = a + a.T
        flag_ok += negative_edge_flag(a) == bool(k % 2)
    drift = lambda z, t: -0.5 * z  # noqa: E731
    small = NodeTrajectorySet(0.1 * rng.standard_normal((8, 3, 8)))
    neg = np.array([[0, -0.1, 0], [-0.1, 0, 0], [0, 0, 0.0]])
    pos = np.abs(neg)
    th = Thresholds(n_samples=32, horizon=5)
    fired = "neighborhood-influence" in detect_graph_bifurcation(
        FunctionSde(drift, lambda z, t: 0.05, neg, "gradient"), small, neg, th).conditions
    quiet = "neighborhood-influence" not in detect_graph_bifurcation(
        FunctionSde(drift, lambda z, t: 0.05, pos, "gradient"), small, pos, th).conditions
    ok = same == len(COUPLINGS) and flag_ok == 50 and fired and quiet
    verdict(11, ok, f"A=0 loss identical {same}/{len(COUPLINGS)} couplings, flag {flag_ok}/50, "
                    f"fires on negative edge {fired}, quiet otherwise {quiet}")
    assert ok


# 12 -----------------------------------------------------------------------

def _tree_identical(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b, ignore=[MANIFEST])
    stack = [cmp]
    while stack:
        c = stack.pop()
        if c.left_only or c.right_only or c.funny_files:
            return False
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        if mismatch or errors:
            return False
        stack.extend(c.subdirs.values())
    return True


def test_criterion_12_end_to_end_determinism(verdict, tmp_path):
    times = []
    for name in ("a", "b"):
        cfg = PipelineConfig()
        cfg.seed = 0
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            manifest = run_pipeline(cfg, tmp_path / name)
        times.append(time.perf_counter() - t0)
        assert manifest["status"] == "ok"
    same = _tree_identical(tmp_path / "a", tmp_path / "b")
    ok = same and max(times) < 300
    verdict(12, ok, f"byte-identical {same}, run times {times[0]:.0f}s and {times[1]:.0f}s")
    assert ok
