"""Pathway stability from the fitted diffusion field and mean-square classification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import NodeTrajectorySet, simulate_paths


def _times(traj: NodeTrajectorySet):
    return np.arange(traj.n_steps) * traj.dt


def diffusion_along(model, traj: NodeTrajectorySet) -> np.ndarray:
    """xi(x(t), t) at every observed step, shape (T, N, d)."""
    v = traj.values if traj.values.ndim == 3 else traj.values[:, 0]
    t = _times(traj).reshape(-1, 1)
    return np.asarray(model.diffusion(v, t))


def diffusion_changes(model, traj: NodeTrajectorySet) -> np.ndarray:
    """s(t) = ||xi(x(t+1), t+1) - xi(x(t), t)||^2 per node, shape (T-1, N)."""
    xi = diffusion_along(model, traj)
    diff = xi[1:] - xi[:-1]
    return np.sum(diff * diff, axis=-1)


def pathway_stability(model, traj: NodeTrajectorySet) -> np.ndarray:
    """PS per node: summed squared diffusion changes divided by the trajectory length T."""
    return diffusion_changes(model, traj).sum(axis=0) / traj.n_steps


def dirichlet_energy(x, a) -> float:
    """sum over unordered edges of A_ij ||x_j - x_i||^2."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    a = np.asarray(a, dtype=float)
    if a.shape[0] != a.shape[1] or np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, np.abs(a).max()):
        raise ValueError("adjacency must be symmetric")
    sq = np.sum(x * x, axis=1)
    d2 = np.clip(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0, None)
    iu = np.triu_indices(a.shape[0], 1)
    return float(np.sum(a[iu] * d2[iu]))


def node_dirichlet(x, a) -> np.ndarray:
    """Per-node incident term sum_j A_ij ||x_j - x_i||^2."""
    x = np.asarray(x, dtype=float)
    diff = x[None, :, :] - x[:, None, :]
    return np.sum(np.asarray(a, dtype=float) * np.sum(diff * diff, axis=-1), axis=1)


def graph_pathway_stability(model, traj: NodeTrajectorySet, a, lam: float = 1.0,
                            placement: str = "time-average") -> np.ndarray:
    """PS plus lambda times the node's incident Dirichlet term.

    ``placement='time-average'`` averages the incident term over all steps;
    ``'final'`` uses the last step only.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ps = pathway_stability(model, traj)
    if lam == 0:
        return ps
    v = traj.values if traj.values.ndim == 3 else traj.values[:, 0]
    if placement == "time-average":
        energy = np.mean([node_dirichlet(v[t], a) for t in range(v.shape[0])], axis=0)
    elif placement == "final":
        energy = node_dirichlet(v[-1], a)
    else:
        raise ValueError(f"unknown Dirichlet placement {placement!r}")
    return ps + lam * energy


@dataclass
class NodeStability:
    ps: float
    classification: str
    c1: float
    c2: float
    ratio_bounded: bool
    trace: list[float] = field(default_factory=list)
    gps: float | None = None
    diagnostic: str = ""


@dataclass
class StabilityReport:
    node_ids: list[str]
    nodes: list[NodeStability]
    settings: dict = field(default_factory=dict)
    dirichlet_trace: list[float] | None = None

    def as_dict(self):
        return {
            "settings": self.settings,
            "dirichlet_trace": self.dirichlet_trace,
            "nodes": [
                {"node": nid, "ps": n.ps, "gps": n.gps, "classification": n.classification, "c1": n.c1,
                 "c2": n.c2, "ratio_bounded": n.ratio_bounded, "diagnostic": n.diagnostic,
                 "diffusion_trace": n.trace}
                for nid, n in zip(self.node_ids, self.nodes)
            ],
        }

    def to_tsv(self) -> str:
        lines = ["node\tps\tgps\tclassification\tc1\tc2"]
        for nid, n in zip(self.node_ids, self.nodes):
            gps = "" if n.gps is None else repr(float(n.gps))
            lines.append(f"{nid}\t{float(n.ps)!r}\t{gps}\t{n.classification}\t{float(n.c1)!r}\t{float(n.c2)!r}")
        return "\n".join(lines) + "\n"


def classify_trace(trace, eps_stable: float = 1e-3, growth: float = 10.0) -> tuple[str, str]:
    trace = np.asarray(trace, dtype=float)
    if not np.all(np.isfinite(trace)):
        return "unstable", "simulation overflow"
    tail = trace[-max(1, len(trace) // 4):]
    if tail.mean() < eps_stable:
        return "stable", "diffusion trace vanishes"
    if trace.max() >= growth * max(trace[0], 1e-300):
        return "unstable", "diffusion trace grew at least tenfold"
    return "inconclusive", "diffusion trace bounded away from zero"


def classify_stability(model, traj: NodeTrajectorySet, horizon: int | None = None, n_samples: int = 256,
                       seed: int = 0, eps_stable: float = 1e-3, growth: float = 10.0,
                       substep: float = 0.1):
    """Simulate from x(0) and classify each node by the E||xi||^2 trace.

    Returns (labels, diagnostics, c1, c2, traces), where c1/c2 are min/max of
    ||psi||^2 / tr(xi xi^T) over the simulated states.
    """
    horizon = horizon or traj.n_steps
    v = traj.values if traj.values.ndim == 3 else traj.values[:, 0]
    paths = simulate_paths(model, v[0], 0, horizon, n_samples, seed, traj.dt, substep)
    n_nodes = v.shape[1]
    traces = np.empty((horizon + 1, n_nodes))
    ratios = []
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon + 1):
            t = k * traj.dt
            xi = np.asarray(model.diffusion(paths[k], t))
            psi = np.asarray(model.drift(paths[k], t))
            sx = np.sum(xi * xi, axis=-1)
            traces[k] = sx.mean(axis=0)
            ratios.append(np.sum(psi * psi, axis=-1) / sx)
    ratios = np.stack(ratios)  # (horizon+1, samples, N)
    labels, diags, c1, c2 = [], [], [], []
    for i in range(n_nodes):
        lab, why = classify_trace(traces[:, i], eps_stable, growth)
        labels.append(lab)
        diags.append(why)
        r = ratios[:, :, i]
        r = r[np.isfinite(r)]
        c1.append(float(r.min()) if r.size else float("nan"))
        c2.append(float(r.max()) if r.size else float("nan"))
    return labels, diags, np.array(c1), np.array(c2), traces


def stability_report(model, traj: NodeTrajectorySet, adjacency=None, lam: float = 1.0,
                     placement: str = "time-average", horizon: int | None = None, n_samples: int = 256,
                     seed: int = 0, eps_stable: float = 1e-3, growth: float = 10.0) -> StabilityReport:
    ps = pathway_stability(model, traj)
    labels, diags, c1, c2, traces = classify_stability(model, traj, horizon, n_samples, seed, eps_stable, growth)
    gps = None
    dtrace = None
    if adjacency is not None:
        gps = graph_pathway_stability(model, traj, adjacency, lam, placement)
        v = traj.values if traj.values.ndim == 3 else traj.values[:, 0]
        dtrace = [dirichlet_energy(v[t], adjacency) for t in range(v.shape[0])]
    nodes = []
    for i in range(traj.n_nodes):
        bounded = bool(np.isfinite(c2[i]) and c1[i] > 0 and c2[i] < 1e12)
        nodes.append(NodeStability(float(ps[i]), labels[i], float(c1[i]), float(c2[i]), bounded,
                                   [float(v) for v in traces[:, i]], None if gps is None else float(gps[i]),
                                   diags[i]))
    settings = {"eps_stable": eps_stable, "growth_factor": growth, "horizon": horizon or traj.n_steps,
                "n_samples": n_samples, "seed": seed, "lambda": lam if adjacency is not None else None,
                "dirichlet_placement": placement if adjacency is not None else None, "T": traj.n_steps}
    node_ids = traj.node_ids or [str(i) for i in range(traj.n_nodes)]
    return StabilityReport(node_ids, nodes, settings, dtrace)
