"""Points of no return along observed node trajectories.

Conditions checked at every step t > 0 of every node:

1. stability loss: ||psi(x(t), t)|| <= eps_grad while the potential J rises;
2. new steady state: time-frozen dynamics started at x(t) end more than C
   away on average and the distance does not come back over the second half
   of the horizon;
3. variance explosion: the sliding-window variance of the diffusion-change
   series exceeds delta in every window from t on;
4. (graph only) some edge weight is negative.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..numerics.linalg import sym_eig
from .model import NodeTrajectorySet, simulate_paths
from .stability import diffusion_changes

CONDITIONS = {
    1: "stability-loss",
    2: "new-steady-state",
    3: "variance-explosion",
    4: "neighborhood-influence",
}


@dataclass
class Thresholds:
    C: float = 1.0
    delta: float = 0.1
    eps_grad: float = 0.05
    window: int = 3
    n_samples: int = 256
    horizon: int = 10
    monotone_tol: float = 0.05
    substep: float = 0.1
    diffusion_floor: float = 1e-4
    seed: int = 0


def potential_profile(model, path, dt: float = 1.0, node: int | None = None, full_state=None):
    """Line-integral potential along one node's observed path.

    ``path`` is (T, d).  Returns (J, dJ/dt, drift norms) where J(t) =
    -sum_{s<t} psi(x(s), s) . (x(s+1) - x(s)).  For node-conditioned or
    coupled models pass ``full_state`` (T, N, d) and ``node``.
    """
    path = np.asarray(path, dtype=float)
    T = path.shape[0]
    t = (np.arange(T) * dt).reshape(-1, 1)
    if full_state is not None:
        psi = np.asarray(model.drift(full_state, t))[:, node]
    else:
        psi = np.asarray(model.drift(path[:, None, :], t))[:, 0]
    steps = np.diff(path, axis=0)
    inc = -np.sum(psi[:-1] * steps, axis=1)
    J = np.concatenate([[0.0], np.cumsum(inc)])
    dJ = np.gradient(J, dt) if T > 1 else np.zeros(1)
    return J, dJ, np.linalg.norm(psi, axis=1)


@dataclass
class NodeBifurcation:
    t_star: int | None
    conditions: list[str]
    first: dict = field(default_factory=dict)


@dataclass
class BifurcationReport:
    node_ids: list[str]
    nodes: list[NodeBifurcation]
    t_star: int | None
    conditions: list[str]
    thresholds: dict
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "t_star": self.t_star,
            "conditions": self.conditions,
            "thresholds": self.thresholds,
            "nodes": [{"node": nid, "t_star": n.t_star, "conditions": n.conditions, "first": n.first}
                      for nid, n in zip(self.node_ids, self.nodes)],
            "diagnostics": self.diagnostics,
        }

    def to_tsv(self) -> str:
        lines = ["node\tt_star\tconditions"]
        for nid, n in zip(self.node_ids, self.nodes):
            ts = "" if n.t_star is None else str(n.t_star)
            lines.append(f"{nid}\t{ts}\t{','.join(n.conditions)}")
        return "\n".join(lines) + "\n"


def _state(traj: NodeTrajectorySet) -> np.ndarray:
    return traj.values if traj.values.ndim == 3 else traj.values[:, 0]


def _condition1(model, traj, th):
    v = _state(traj)
    T, N, _ = v.shape
    hits = np.zeros((T, N), dtype=bool)
    J = np.zeros((T, N))
    norms = np.zeros((T, N))
    for i in range(N):
        J[:, i], dJ, norms[:, i] = potential_profile(model, v[:, i], traj.dt, i, v)
        hits[:, i] = (norms[:, i] <= th.eps_grad) & (dJ > 0)
    return hits, J, norms


def _monotone_tail(trace, tol):
    half = trace[len(trace) // 2:]
    return bool(np.all(np.diff(half) >= -tol))


def _condition2(model, traj, th, stop_after=None):
    """Frozen-dynamics escape test.

    ``stop_after`` (N,) holds, per node, the earliest step already flagged by
    another condition; steps after it are not simulated for that node.
    """
    v = _state(traj)
    T, N, _ = v.shape
    hits = np.zeros((T, N), dtype=bool)
    dist = np.full((T, N), np.nan)
    done = np.full(N, T) if stop_after is None else np.asarray(stop_after).copy()
    for t in range(1, T):
        active = np.flatnonzero(done >= t)
        if active.size == 0:
            break
        paths = simulate_paths(model, v[t], t, th.horizon, th.n_samples, th.seed * 100003 + t, traj.dt,
                               th.substep, freeze_time=True)
        with np.errstate(over="ignore", invalid="ignore"):
            d = np.linalg.norm(paths - v[t][None, None], axis=-1).mean(axis=1)  # (H+1, N)
        for i in active:
            tr = d[:, i]
            if not np.all(np.isfinite(tr)):
                hits[t, i] = True
                dist[t, i] = np.inf
            else:
                dist[t, i] = tr[-1]
                hits[t, i] = tr[-1] > th.C and _monotone_tail(tr, th.monotone_tol)
            if hits[t, i]:
                done[i] = t
    return hits, dist


def _earliest(*hit_sets):
    T, N = hit_sets[0].shape
    out = np.full(N, T)
    for h in hit_sets:
        for i in range(N):
            ts = np.flatnonzero(h[1:, i])
            if ts.size:
                out[i] = min(out[i], ts[0] + 1)
    return out


def _condition3(model, traj, th):
    s = diffusion_changes(model, traj)  # (T-1, N)
    T = traj.n_steps
    n_win = s.shape[0] - th.window + 1
    var = np.stack([s[k:k + th.window].var(axis=0) for k in range(n_win)])  # (n_win, N)
    above = var > th.delta
    hits = np.zeros((T, s.shape[1]), dtype=bool)
    for t in range(1, min(T, n_win)):
        hits[t] = np.all(above[t:], axis=0)
    return hits, var


def _assemble(traj, hit_sets, thresholds, diagnostics, extra_all=None):
    T = traj.n_steps
    N = traj.n_nodes
    nodes = []
    for i in range(N):
        t_star, conds, first = None, [], {}
        for c, hits in hit_sets.items():
            ts = np.flatnonzero(hits[1:, i]) + 1
            if ts.size:
                first[CONDITIONS[c]] = int(ts[0])
        if extra_all is not None:
            first[CONDITIONS[extra_all[0]]] = extra_all[1]
        if first:
            t_star = min(first.values())
            conds = [name for name, ts in first.items() if ts == t_star]
        nodes.append(NodeBifurcation(t_star, conds, first))
    found = [n.t_star for n in nodes if n.t_star is not None]
    t_star = min(found) if found else None
    conds = sorted({c for n in nodes if n.t_star == t_star for c in n.conditions}) if found else []
    node_ids = traj.node_ids or [str(i) for i in range(N)]
    return BifurcationReport(node_ids, nodes, t_star, conds, thresholds, diagnostics)


def _check_length(traj, th):
    if traj.n_steps < th.window + 2:
        raise ValueError(f"trajectory of {traj.n_steps} steps is shorter than window + 2 = {th.window + 2}")


def detect_bifurcation(model, traj: NodeTrajectorySet, thresholds: Thresholds | None = None) -> BifurcationReport:
    th = thresholds or Thresholds()
    _check_length(traj, th)
    h1, J, norms = _condition1(model, traj, th)
    h3, var = _condition3(model, traj, th)
    h2, dist = _condition2(model, traj, th, _earliest(h1, h3))
    diag = {"J": J.T.tolist(), "drift_norm": norms.T.tolist(), "terminal_distance": dist.T.tolist(),
            "window_variance": var.T.tolist()}
    return _assemble(traj, {1: h1, 2: h2, 3: h3}, asdict(th), diag)


def negative_edge_flag(a) -> bool:
    return bool(np.any(np.asarray(a) < 0))


def detect_graph_bifurcation(model, traj: NodeTrajectorySet, a, thresholds: Thresholds | None = None
                             ) -> BifurcationReport:
    """Conditions 1-3 with the coupled drift, plus the negative-edge condition at t = 1."""
    th = thresholds or Thresholds()
    _check_length(traj, th)
    a = np.asarray(a, dtype=float)
    h1, J, norms = _condition1(model, traj, th)
    h3, var = _condition3(model, traj, th)
    eig, _ = sym_eig(0.5 * (a + a.T))
    flag = negative_edge_flag(a)
    h2, dist = _condition2(model, traj, th, np.minimum(_earliest(h1, h3), 1 if flag else traj.n_steps))
    diag = {"J": J.T.tolist(), "drift_norm": norms.T.tolist(), "terminal_distance": dist.T.tolist(),
            "window_variance": var.T.tolist(), "negative_edge": flag,
            "min_adjacency_eigenvalue": float(eig[0]), "negative_eigenvalues": int(np.sum(eig < -1e-12))}
    extra = (4, 1) if flag else None
    return _assemble(traj, {1: h1, 2: h2, 3: h3}, asdict(th), diag, extra)
