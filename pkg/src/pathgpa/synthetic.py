"""Synthetic datasets with planted ground truth.

The expression generator places every subject at a latent time in [0, 1].
Member genes of the planted pathways follow the latent time closely and
drive severity.  Optionally a share of the remaining genes follows a weaker
copy of the same progression program; by default the rest is noise.

The trajectory generators simulate linear-drift SDEs with exact transition
densities so they share no discretization error with the fitted models.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graphs import ExpressionTable, Pathway, PathwayCatalog, write_archive
from .numerics.rng import make_rng

log = logging.getLogger(__name__)

GROUND_TRUTH_FILE = "ground_truth.json"
SCENARIOS = ("ou", "regime-switch", "growth")


@dataclass
class SynthesisConfig:
    n_subjects: int = 24
    n_genes: int = 500
    n_pathways: int = 20
    size_range: tuple[int, int] = (8, 30)
    overlap: float = 0.2
    planted: tuple[int, ...] = (1, 4)
    severity_noise: float = 0.02
    trend_fraction: float = 0.0
    trend_strength: float = 0.6
    gene_noise: float = 0.05
    background_level: float = 3.0
    signal_level: float = 3.0
    n_stages: int = 4
    stage_gap: float = 0.5
    scenario: str = "ou"
    switch_step: int = 4
    seed: int = 0

    def validate(self):
        if self.n_subjects < 4:
            raise ValueError("need at least 4 subjects")
        if self.n_pathways < 1:
            raise ValueError("need at least one pathway")
        lo, hi = self.size_range
        if lo < 2 or hi < lo:
            raise ValueError(f"invalid pathway size range {self.size_range}; sizes must be >= 2")
        if any(p < 0 or p >= self.n_pathways for p in self.planted):
            raise ValueError(f"planted indices {self.planted} out of range for {self.n_pathways} pathways")
        if len(set(self.planted)) != len(self.planted):
            raise ValueError("planted indices must be distinct")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must lie in [0, 1)")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not 0 < self.switch_step < self.n_subjects:
            raise ValueError("switch_step must lie strictly inside the subject range")
        if not 1 <= self.n_stages <= self.n_subjects:
            raise ValueError("invalid stage count")
        private = [max(lo, int(round(lo * (1 - self.overlap)))) for _ in self.planted]
        if sum(private) + 2 > self.n_genes:
            raise ValueError(
                f"{self.n_genes} genes cannot hold the private members of {len(self.planted)} planted pathways"
            )
        min_needed = lo * self.n_pathways * (1 - self.overlap)
        if min_needed > self.n_genes:
            raise ValueError(
                f"infeasible: {self.n_pathways} pathways of at least {lo} genes with overlap "
                f"{self.overlap} need about {int(min_needed)} genes, only {self.n_genes} available"
            )


@dataclass
class GroundTruth:
    latent_time: dict[str, float]
    planted: list[int]
    stages: dict[str, int]
    switch_step: int | None
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**d)


def _latent_times(cfg: SynthesisConfig, rng):
    """Stage-clustered latent times in [0, 1] and the stage of each subject."""
    m, k = cfg.n_subjects, cfg.n_stages
    stages = np.sort(np.arange(m) * k // m)
    width = 1.0 / k
    # each stage occupies the middle (1 - gap) share of its slot
    inner = width * (1.0 - cfg.stage_gap)
    tau = np.empty(m)
    for s in range(k):
        idx = np.flatnonzero(stages == s)
        lo = s * width + 0.5 * (width - inner)
        tau[idx] = np.sort(lo + inner * rng.uniform(size=idx.size))
    tau = (tau - tau.min()) / (tau.max() - tau.min())
    return tau, stages


def _profile(cfg: SynthesisConfig, tau):
    """Progression program f(tau) in [0, 1] for the chosen scenario."""
    if cfg.scenario == "regime-switch":
        t0 = cfg.switch_step / (cfg.n_subjects - 1)
        ramp = np.clip((tau - t0) / max(1e-9, 1.0 - t0), 0.0, None)
        return 1.0 - np.exp(-4.0 * ramp)
    return tau.copy()


def _catalog(cfg: SynthesisConfig, rng, genes):
    lo, hi = cfg.size_range
    sizes = rng.integers(lo, hi + 1, size=cfg.n_pathways)
    n_private_planted = [int(sizes[p] - round(sizes[p] * cfg.overlap)) for p in cfg.planted]
    n_reserved = sum(n_private_planted)
    reserved = list(genes[:n_reserved])
    pool = list(genes[n_reserved:])
    rng.shuffle(pool)
    # shared genes form the overlap pool; the rest are handed out privately first
    n_shared = max(2, int(round(cfg.overlap * len(pool))))
    shared, private = pool[:n_shared], pool[n_shared:]
    members: list[list[str]] = []
    cursor = 0
    taken = 0
    for i in range(cfg.n_pathways):
        size = int(sizes[i])
        n_over = int(round(size * cfg.overlap))
        if i in cfg.planted:
            k = cfg.planted.index(i)
            own = reserved[taken:taken + n_private_planted[k]]
            taken += n_private_planted[k]
        else:
            n_own = size - n_over
            own = [private[(cursor + j) % len(private)] for j in range(n_own)] if private else []
            cursor += n_own
        over = list(rng.choice(shared, size=min(n_over, len(shared)), replace=False)) if n_over else []
        mem = list(dict.fromkeys(own + over))
        while len(mem) < 2:
            mem.append(shared[len(mem) % len(shared)])
            mem = list(dict.fromkeys(mem))
        members.append(mem)
    pathways = [
        Pathway(f"P{i + 1:03d}", f"synthetic pathway {i + 1}", tuple(mem)) for i, mem in enumerate(members)
    ]
    signal = set(reserved)
    return PathwayCatalog(pathways), signal


def generate_dataset(cfg: SynthesisConfig, out_dir=None):
    """Build (table, catalog, severity, ground truth); write an archive if asked."""
    cfg.validate()
    rng = make_rng(cfg.seed, "dataset")
    m = cfg.n_subjects
    genes = [f"G{g + 1:05d}" for g in range(cfg.n_genes)]
    subjects = [f"S{i + 1:03d}" for i in range(m)]
    catalog, signal = _catalog(cfg, rng, genes)

    tau_sorted, stage_sorted = _latent_times(cfg, rng)
    perm = rng.permutation(m)  # subject order in the files is unrelated to time
    tau = np.empty(m)
    stages = np.empty(m, dtype=int)
    tau[perm] = tau_sorted
    stages[perm] = stage_sorted
    prog = _profile(cfg, tau)

    base = np.exp(rng.normal(np.log(cfg.background_level), 0.5, size=cfg.n_genes))
    trend = np.zeros(cfg.n_genes)
    others = [g for g in range(cfg.n_genes) if genes[g] not in signal]
    n_trend = int(round(cfg.trend_fraction * len(others)))
    trend_idx = rng.choice(others, size=n_trend, replace=False)
    trend[trend_idx] = cfg.trend_strength * rng.choice([-0.5, 1.0], size=n_trend)
    sig_idx = np.array([genes.index(g) for g in sorted(signal)], dtype=int)
    trend[sig_idx] = 1.5
    base[sig_idx] *= cfg.signal_level / cfg.background_level

    noise_sd = np.full(cfg.n_genes, cfg.gene_noise)
    noise_sd[sig_idx] = 0.0
    if cfg.scenario == "growth":
        scale = (0.2 + 2.0 * tau)[None, :]
    else:
        scale = np.ones((1, m))
    noise = rng.standard_normal((cfg.n_genes, m)) * noise_sd[:, None] * scale
    values = base[:, None] * np.exp(trend[:, None] * prog[None, :] + noise)
    table = ExpressionTable(genes, subjects, values)

    # severity: fixed monotone map of the planted-pathway aggregate expression
    row = {g: k for k, g in enumerate(genes)}
    planted_rows = [np.array([row[g] for g in catalog.pathways[p].members]) for p in cfg.planted]

    def aggregate(vals):
        return np.mean([vals[r].mean(axis=0) for r in planted_rows], axis=0)

    agg = aggregate(values)
    a0 = aggregate(base[:, None] * np.exp(trend[:, None] * 0.0))
    a1 = aggregate(base[:, None] * np.exp(trend[:, None] * 1.0))
    sev_rng = make_rng(cfg.seed, "severity")
    y = (agg - a0) / (a1 - a0) + cfg.severity_noise * sev_rng.standard_normal(m)
    severity = {s: float(v) for s, v in zip(subjects, y)}

    truth = GroundTruth(
        latent_time={s: float(t) for s, t in zip(subjects, tau)},
        planted=list(cfg.planted),
        stages={s: int(k) for s, k in zip(subjects, stages)},
        switch_step=cfg.switch_step if cfg.scenario == "regime-switch" else None,
        config=_config_record(cfg),
    )
    _check_recoverable(table, catalog, y, cfg)
    if out_dir is not None:
        write_archive(out_dir, table, catalog, severity)
        Path(out_dir, GROUND_TRUTH_FILE).write_text(truth.to_json() + "\n", encoding="utf-8")
    return table, catalog, severity, truth


def _config_record(cfg: SynthesisConfig) -> dict:
    d = asdict(cfg)
    d["size_range"] = list(cfg.size_range)
    d["planted"] = list(cfg.planted)
    return d


def _check_recoverable(table, catalog, y, cfg):
    """Log whether planted pathways lead the severity-correlation ranking."""
    corr = []
    for p in catalog.pathways:
        rows = [table.row_of(g) for g in p.members]
        agg = table.values[rows].mean(axis=0)
        c = np.corrcoef(agg, y)[0, 1] if np.std(agg) > 0 else 0.0
        corr.append(abs(c))
    order = np.argsort(-np.array(corr), kind="stable")
    top = set(order[: len(cfg.planted)].tolist())
    if top != set(cfg.planted):
        log.warning("planted pathways do not lead the severity correlation ranking (top=%s)", sorted(top))
    return np.array(corr)


def full_scale_config(seed: int = 0) -> SynthesisConfig:
    """Full-size dataset shape: 23 subjects, 343 pathways, 9703 genes."""
    return SynthesisConfig(
        n_subjects=23, n_genes=9703, n_pathways=343, size_range=(2, 120), overlap=0.3,
        planted=(78, 150), seed=seed,
    )


# --- SDE trajectory oracles --------------------------------------------------


@dataclass(frozen=True)
class LinearDrift:
    """psi(x) = rate * (target - x); rate < 0 repels from the target."""

    rate: float
    target: float = 0.0


def _exact_step(x, drift: LinearDrift, sigma, dt, z):
    k = drift.rate
    if abs(k) < 1e-12:
        return x + sigma * np.sqrt(dt) * z
    decay = np.exp(-k * dt)
    var = sigma**2 * (1.0 - np.exp(-2.0 * k * dt)) / (2.0 * k)
    return drift.target + (x - drift.target) * decay + np.sqrt(var) * z


def generate_ou_paths(theta, sigma, n_paths, T, seed, dt=1.0, x0=None, dim=1):
    """Ornstein-Uhlenbeck paths dx = -theta x dt + sigma dB, exactly sampled.

    Returns an array of shape (T, n_paths, dim).  ``x0`` defaults to draws
    from the stationary law (or zero when sigma is 0).
    """
    if theta <= 0 or sigma < 0:
        raise ValueError("need theta > 0 and sigma >= 0")
    rng = make_rng(seed, "ou")
    if x0 is None:
        sd = sigma / np.sqrt(2.0 * theta)
        x = sd * rng.standard_normal((n_paths, dim))
    else:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, dim)).copy()
    drift = LinearDrift(theta, 0.0)
    out = np.empty((T, n_paths, dim))
    out[0] = x
    for t in range(1, T):
        x = _exact_step(x, drift, sigma, dt, rng.standard_normal((n_paths, dim)))
        out[t] = x
    return out


def default_switch_drifts(dim: int = 1, distance: float = 3.0):
    pre = LinearDrift(0.5, 0.0)
    post = LinearDrift(0.5, distance / np.sqrt(dim))
    return pre, post


def generate_regime_switch(t_star, pre_drift: LinearDrift, post_drift: LinearDrift, sigma, n_paths, T,
                           seed, dim=1, dt=1.0):
    """Paths whose drift switches from ``pre_drift`` to ``post_drift`` at ``t_star``.

    Transitions out of steps ``t < t_star`` follow the pre-switch drift, the
    rest the post-switch drift.  Paths start from the pre-switch stationary
    law.  Returns ``(paths, t_star)`` with paths of shape (T, n_paths, dim).
    """
    if not 0 < t_star < T:
        raise ValueError(f"t_star must satisfy 0 < t_star < T, got {t_star}")
    if t_star == T - 1:
        warnings.warn("switch at the last step leaves no post-switch tail to observe", stacklevel=2)
    rng = make_rng(seed, "regime-switch")
    k = pre_drift.rate
    sd = sigma / np.sqrt(2.0 * k) if k > 0 else sigma
    x = pre_drift.target + sd * rng.standard_normal((n_paths, dim))
    out = np.empty((T, n_paths, dim))
    out[0] = x
    for t in range(1, T):
        drift = pre_drift if t - 1 < t_star else post_drift
        x = _exact_step(x, drift, sigma, dt, rng.standard_normal((n_paths, dim)))
        out[t] = x
    return out, t_star
