"""Neural SDE dx = psi(x, t) dt + xi(x, t) dB with diagonal diffusion.

Drift and diffusion are small tanh MLPs shared by all nodes.  Inputs are
standardized with statistics stored on the model, and outputs are scaled by
the typical increment size so training works in unit-free coordinates.  The
graph-interacted variant adds sum_j A_ij phi(x_j, t) to the drift of node i.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..numerics import autodiff as ad
from ..numerics.linalg import fix_signs
from ..numerics.optim import Adam, glorot
from ..numerics.rng import make_rng

log = logging.getLogger(__name__)

COUPLINGS = ("identity", "gradient", "learned")


class SdeTrainingError(RuntimeError):
    pass


@dataclass
class NodeTrajectorySet:
    """Per-node feature sequences along pseudotime.

    ``values`` is (T, N, d) for one system or (T, R, N, d) for R independent
    realizations of it.
    """

    values: np.ndarray
    dt: float = 1.0
    node_ids: list[str] = field(default_factory=list)
    projection: dict | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim not in (3, 4):
            raise ValueError(f"trajectories must be (T, N, d) or (T, R, N, d), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectories contain non-finite values")

    @property
    def stacked(self) -> np.ndarray:
        """Always (T, R, N, d)."""
        return self.values if self.values.ndim == 4 else self.values[:, None]

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[-2]

    @property
    def dim(self) -> int:
        return self.values.shape[-1]


def principal_directions(rows, k: int):
    """Mean and top-``k`` principal directions (columns) of the given rows.

    Uses LAPACK ``eigh`` on the smaller Gram matrix; the covariance here can be
    hundreds of columns wide, which is slow for the Jacobi solver.
    """
    rows = np.asarray(rows, dtype=float)
    mu = rows.mean(axis=0)
    c = rows - mu
    n, d = c.shape
    if n < d:
        vals, vecs = np.linalg.eigh(c @ c.T)
        vecs = vecs[:, ::-1][:, :k]
        comps = c.T @ vecs
        norms = np.linalg.norm(comps, axis=0)
        comps = np.where(norms > 1e-12, comps / np.where(norms > 0, norms, 1.0), 0.0)
    else:
        vals, vecs = np.linalg.eigh(c.T @ c)
        comps = vecs[:, ::-1][:, :k]
    return mu, fix_signs(comps)


def extract_node_trajectories(dataset, indices, reduce_dim: int | None = None) -> NodeTrajectorySet:
    """Node features along a trajectory, optionally projected on dataset-level principal axes."""
    idx = list(indices)
    x = dataset.features[idx]
    proj = None
    if reduce_dim is not None:
        d = x.shape[-1]
        if reduce_dim > d:
            raise ValueError(f"reduce_dim {reduce_dim} exceeds feature dimension {d}")
        rows = dataset.features.reshape(-1, d)
        mu, comps = principal_directions(rows, reduce_dim)
        x = (x - mu) @ comps
        proj = {"mean": mu, "components": comps, "source": "all graphs, all nodes"}
    return NodeTrajectorySet(x, 1.0, list(dataset.pathway_ids), proj)


@dataclass
class SdeConfig:
    hidden: int = 16
    depth: int = 2
    lr: float = 1e-2
    weight_decay: float = 0.0
    epochs: int = 500
    diffusion_floor: float = 1e-4
    node_embedding: int = 0
    time_input: bool = True
    coupling: str = "identity"
    seed: int = 0


def _mlp_params(rng, n_in, hidden, depth, n_out, prefix):
    p = {}
    sizes = [n_in] + [hidden] * depth
    for k in range(depth):
        p[f"{prefix}W{k}"] = glorot(rng, sizes[k], sizes[k + 1])
        p[f"{prefix}b{k}"] = np.zeros(sizes[k + 1])
    p[f"{prefix}Wout"] = glorot(rng, sizes[-1], n_out)
    p[f"{prefix}bout"] = np.zeros(n_out)
    return p


def _mlp(params, prefix, depth, u):
    h = u
    for k in range(depth):
        h = ad.tanh(ad.matmul(h, params[f"{prefix}W{k}"]) + params[f"{prefix}b{k}"])
    return ad.matmul(h, params[f"{prefix}Wout"]) + params[f"{prefix}bout"]


class SdeModel:
    """Learned drift and diffusion fields, optionally coupled over a graph."""

    def __init__(self, dim: int, n_nodes: int, config: SdeConfig | None = None, adjacency=None):
        cfg = config or SdeConfig()
        if cfg.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {cfg.coupling!r}; choose from {COUPLINGS}")
        self.config = cfg
        self.dim = dim
        self.n_nodes = n_nodes
        self.adjacency = None if adjacency is None else np.asarray(adjacency, dtype=float)
        if self.adjacency is not None and self.adjacency.shape != (n_nodes, n_nodes):
            raise ValueError(f"adjacency {self.adjacency.shape} does not match {n_nodes} nodes")
        self.x_mean = np.zeros(dim)
        self.x_scale = np.ones(dim)
        self.t_scale = 1.0
        self.drift_scale = np.ones(dim)
        self.diffusion_scale = np.ones(dim)
        n_in = dim + int(cfg.time_input) + cfg.node_embedding
        self.params = {}
        self.params.update(_mlp_params(make_rng(cfg.seed, "sde-drift"), n_in, cfg.hidden, cfg.depth, dim, "psi_"))
        self.params.update(_mlp_params(make_rng(cfg.seed, "sde-diffusion"), n_in, cfg.hidden, cfg.depth, dim,
                                       "xi_"))
        if cfg.node_embedding:
            self.params["embed"] = 0.1 * make_rng(cfg.seed, "sde-embedding").standard_normal(
                (n_nodes, cfg.node_embedding))
        if self.adjacency is not None and cfg.coupling == "learned":
            self.params.update(_mlp_params(make_rng(cfg.seed, "sde-coupling"), dim + int(cfg.time_input), cfg.hidden, 1, dim,
                                           "phi_"))

    # --- field evaluation (works with plain arrays or tape variables) --------

    def _inputs(self, params, x, t, embed=True):
        x = np.asarray(x, dtype=float)
        xs = (x - self.x_mean) / self.x_scale
        tt = np.broadcast_to(np.asarray(t, dtype=float) / self.t_scale, x.shape[:-1])[..., None]
        parts = [xs, tt] if self.config.time_input else [xs]
        if embed and self.config.node_embedding:
            e = params["embed"]
            shape = x.shape[:-1] + (self.config.node_embedding,)
            parts.append(ad.mul(np.ones(shape), e))
        return ad.concat(parts, axis=-1)

    def self_drift(self, x, t, params=None):
        p = self.params if params is None else params
        u = self._inputs(p, x, t)
        return ad.mul(_mlp(p, "psi_", self.config.depth, u), self.drift_scale)

    def interaction(self, x, t, params=None):
        """sum_j A_ij phi(x_j, t) for every node; zeros without a graph."""
        if self.adjacency is None:
            return np.zeros(np.shape(x))
        p = self.params if params is None else params
        a = self.adjacency
        x = np.asarray(x, dtype=float)
        if self.config.coupling == "identity":
            return np.matmul(a, x)
        if self.config.coupling == "gradient":
            return np.matmul(a, x) - a.sum(axis=1)[:, None] * x
        u = self._inputs(p, x, t, embed=False)
        phi = ad.mul(_mlp(p, "phi_", 1, u), self.drift_scale)
        return ad.matmul(a, phi)

    def drift(self, x, t, params=None):
        return ad.add(self.self_drift(x, t, params), self.interaction(x, t, params))

    def diffusion(self, x, t, params=None):
        p = self.params if params is None else params
        u = self._inputs(p, x, t)
        raw = _mlp(p, "xi_", self.config.depth, u)
        return ad.add(ad.mul(ad.softplus(raw), self.diffusion_scale), self.config.diffusion_floor)

    # --- normalization -------------------------------------------------------

    def set_normalization(self, traj: NodeTrajectorySet):
        v = traj.stacked
        flat = v.reshape(-1, v.shape[-1])
        self.x_mean = flat.mean(axis=0)
        self.x_scale = np.maximum(flat.std(axis=0), 1e-8)
        # time enters in units of one step so the fields can change between steps
        self.t_scale = traj.dt
        inc = np.diff(v, axis=0).reshape(-1, v.shape[-1])
        step = np.maximum(inc.std(axis=0), 1e-8)
        self.drift_scale = step / traj.dt
        self.diffusion_scale = step / np.sqrt(traj.dt)

    def describe(self) -> dict:
        return {
            "dim": self.dim, "n_nodes": self.n_nodes, "config": asdict(self.config),
            "graph": self.adjacency is not None,
            "n_params": int(sum(v.size for v in self.params.values())),
        }


@dataclass
class SdeFitLog:
    loss: list[float] = field(default_factory=list)
    seed: int = 0
    converged: bool = False

    def as_dict(self):
        return asdict(self)


def transition_nll(model: SdeModel, params, traj: NodeTrajectorySet):
    """Mean Euler-Maruyama Gaussian negative log-likelihood of observed steps."""
    v = traj.stacked
    x = v[:-1]
    dx = v[1:] - v[:-1]
    dt = traj.dt
    times = (np.arange(v.shape[0] - 1) * dt).reshape(-1, 1, 1)
    mu = model.drift(x, times, params)
    sig = model.diffusion(x, times, params)
    var = ad.square(sig) * dt
    resid = dx - mu * dt
    terms = ad.square(resid) / var + ad.log(var)
    return 0.5 * ad.mean(terms) + 0.5 * np.log(2 * np.pi)


def _train(model: SdeModel, traj: NodeTrajectorySet) -> SdeFitLog:
    cfg = model.config
    if traj.n_steps < 3:
        raise ValueError(f"need at least 3 steps, got {traj.n_steps}")
    model.set_normalization(traj)
    opt = Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    record = SdeFitLog(seed=cfg.seed)
    for _ in range(cfg.epochs):
        tape = ad.Tape()
        params = {k: tape.var(v, name=k) for k, v in model.params.items()}
        loss = transition_nll(model, params, traj)
        lv = float(ad.value(loss))
        if not np.isfinite(lv):
            raise SdeTrainingError(f"non-finite SDE loss at epoch {len(record.loss)} (seed {cfg.seed})")
        grads = tape.gradient(loss, list(params.values()))
        tape.reset()
        opt.step(dict(zip(params.keys(), grads)))
        record.loss.append(lv)
    tail = record.loss[-50:]
    record.converged = len(tail) > 1 and abs(tail[0] - tail[-1]) < 1e-3 * max(1.0, abs(tail[-1]))
    return record


def fit_sde(traj: NodeTrajectorySet, config: SdeConfig | None = None):
    """Shared drift/diffusion model fitted by maximum Euler-Maruyama likelihood."""
    model = SdeModel(traj.dim, traj.n_nodes, config)
    return model, _train(model, traj)


def fit_graph_sde(traj: NodeTrajectorySet, adjacency, config: SdeConfig | None = None):
    """As :func:`fit_sde` with the drift of node i extended by sum_j A_ij phi(x_j, t)."""
    model = SdeModel(traj.dim, traj.n_nodes, config, adjacency)
    return model, _train(model, traj)


class FunctionSde:
    """Hand-specified fields with the same interface as :class:`SdeModel`."""

    def __init__(self, drift, diffusion, adjacency=None, coupling="identity"):
        self._drift = drift
        self._diffusion = diffusion
        self.adjacency = None if adjacency is None else np.asarray(adjacency, dtype=float)
        self.coupling = coupling

    def self_drift(self, x, t, params=None):
        return np.broadcast_to(np.asarray(self._drift(np.asarray(x, dtype=float), t), dtype=float),
                               np.shape(x))

    def interaction(self, x, t, params=None):
        if self.adjacency is None:
            return np.zeros(np.shape(x))
        a = self.adjacency
        if self.coupling == "gradient":
            return np.matmul(a, x) - a.sum(axis=1)[:, None] * x
        return np.matmul(a, x)

    def drift(self, x, t, params=None):
        return self.self_drift(x, t) + self.interaction(x, t)

    def diffusion(self, x, t, params=None):
        return np.broadcast_to(np.asarray(self._diffusion(np.asarray(x, dtype=float), t), dtype=float),
                               np.shape(x))


def simulate_paths(model, x0, t0: float, horizon: int, n_samples: int, seed: int, dt: float = 1.0,
                   substep: float = 0.1, freeze_time: bool = False) -> np.ndarray:
    """Euler-Maruyama sample paths recorded at every whole step.

    ``x0`` is (N, d) or (d,); ``t0`` and ``horizon`` are in steps of ``dt``
    and the integrator uses ``substep * dt``.  With ``freeze_time`` the fields
    are evaluated at t0 throughout.  Returns (horizon + 1, n_samples, N, d).
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[None]
    n_sub = max(1, int(round(1.0 / substep)))
    h = dt / n_sub
    rng = make_rng(seed, "simulate")
    x = np.broadcast_to(x0, (n_samples,) + x0.shape).copy()
    out = np.empty((horizon + 1,) + x.shape)
    out[0] = x
    sq = np.sqrt(h)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            for j in range(n_sub):
                t = t0 * dt if freeze_time else t0 * dt + k * dt + j * h
                mu = np.asarray(model.drift(x, t))
                sig = np.asarray(model.diffusion(x, t))
                x = x + mu * h + sig * sq * rng.standard_normal(x.shape)
            out[k + 1] = x
    return out
