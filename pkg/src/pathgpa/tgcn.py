"""Temporal GCN along a pseudotime trajectory and stage-transition sensitivity.

Each prediction uses a window of two consecutive steps.  The recurrent state
starts at zero before the lag step, so y(t) depends on (A(t), X(t), A(t-1),
X(t-1)) only.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .graphs import normalize_adjacency
from .numerics import autodiff as ad
from .numerics.optim import Adam, glorot
from .numerics.rng import make_rng
from .regression import TrainingError, rank_pathways

log = logging.getLogger(__name__)


@dataclass
class TgcnConfig:
    hidden: int = 96
    lr: float = 0.01
    weight_decay: float = 1e-3
    epochs: int = 200
    runs: int = 10
    train_frac: float = 0.7
    adjacency_exponent: float = -0.5
    seed: int = 0


@dataclass
class TemporalSequence:
    """Graphs ordered by pseudotime: normalized adjacency, features, severity."""

    a_hat: np.ndarray   # (T, N, N)
    x: np.ndarray       # (T, N, d)
    y: np.ndarray       # (T,)
    subject_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.a_hat = np.asarray(self.a_hat, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        t, n, _ = self.x.shape
        if self.a_hat.shape != (t, n, n) or self.y.shape != (t,):
            raise ValueError(f"inconsistent sequence shapes {self.a_hat.shape}, {self.x.shape}, {self.y.shape}")

    def __len__(self):
        return self.y.shape[0]

    @classmethod
    def from_trajectory(cls, dataset, indices, adjacency_exponent=-0.5):
        idx = list(indices)
        a_hat = normalize_adjacency(dataset.weights[idx], adjacency_exponent)
        return cls(a_hat, dataset.features[idx], dataset.severity[idx], [dataset.subject_ids[i] for i in idx])


class TgcnModel:
    """Graph convolution followed by a graph recurrent unit and a linear readout."""

    GATE_KEYS = ("W", "W_q", "P_q", "W_r", "P_r", "W_h", "P_h")

    def __init__(self, n_features: int, hidden: int = 96, rng=None):
        rng = rng if rng is not None else make_rng(0)
        h, d = hidden, n_features
        self.n_features = d
        self.hidden = h
        self.params = {
            "W": glorot(rng, d, h),
            "W_q": glorot(rng, h, h),
            "P_q": glorot(rng, d, h),
            "W_r": glorot(rng, h, h),
            "P_r": glorot(rng, d, h),
            "W_h": glorot(rng, h, h),
            "P_h": glorot(rng, h, h),
            "w_out": glorot(rng, h, 1),
            "b_out": np.zeros(1),
        }

    @staticmethod
    def cell(params, a_cur, x_cur, a_prev=None, h_prev=None, force_q=None):
        """One recurrence step; returns (H, Q, R, H_tilde).

        ``a_prev``/``h_prev`` of None mean a zero previous state.  ``force_q``
        replaces the update gate with a constant for testing.
        """
        g = ad.matmul(a_cur, ad.matmul(x_cur, params["W"]))
        zq = ad.matmul(x_cur, params["P_q"])
        zr = ad.matmul(x_cur, params["P_r"])
        cand = ad.matmul(g, params["P_h"])
        if h_prev is not None:
            ah = ad.matmul(a_prev, h_prev)
            zq = zq + ad.matmul(ah, params["W_q"])
            zr = zr + ad.matmul(ah, params["W_r"])
        q = ad.sigmoid(zq)
        r = ad.sigmoid(zr)
        if h_prev is not None:
            cand = cand + ad.matmul(a_prev, ad.matmul(r * h_prev, params["W_h"]))
        h_tilde = ad.tanh(cand)
        if force_q is not None:
            q = np.full(ad.value(q).shape, float(force_q))
        if h_prev is None:
            h = q * h_tilde
        else:
            h = (1.0 - q) * h_prev + q * h_tilde
        return h, q, r, h_tilde

    def forward(self, params, a_cur, x_cur, a_prev, x_prev):
        """Batched prediction of y(t) from the window (t-1, t)."""
        h_prev, _, _, _ = self.cell(params, a_prev, x_prev)
        h, _, _, _ = self.cell(params, a_cur, x_cur, a_prev, h_prev)
        pooled = ad.mean(h, axis=-2)
        out = ad.matmul(pooled, params["w_out"]) + params["b_out"]
        return ad.reshape(out, ad.value(out).shape[:-1])

    def _check(self, *xs):
        for x in xs:
            if np.shape(x)[-1] != self.n_features:
                raise ValueError(f"feature dimension {np.shape(x)[-1]} does not match model ({self.n_features})")

    def forecast(self, a_cur, x_cur, a_prev, x_prev) -> float:
        """y(t) for one window; adjacency arguments are already normalized."""
        self._check(x_cur, x_prev)
        shapes = {np.shape(a_cur), np.shape(a_prev)}
        n = np.shape(x_cur)[0]
        if shapes != {(n, n)} or np.shape(x_prev)[0] != n:
            raise ValueError("adjacency and feature shapes do not match")
        out = self.forward(self.params, np.asarray(a_cur)[None], np.asarray(x_cur)[None],
                           np.asarray(a_prev)[None], np.asarray(x_prev)[None])
        return float(out[0])

    def window_gradients(self, a_cur, x_cur, a_prev, x_prev):
        """(d y/d X(t), d y/d X(t-1)) for one window, each (N, d)."""
        tape = ad.Tape()
        xc = tape.var(np.asarray(x_cur, dtype=float)[None], name="X_t")
        xp = tape.var(np.asarray(x_prev, dtype=float)[None], name="X_prev")
        params = {k: tape.var(v, name=k) for k, v in self.params.items()}
        out = self.forward(params, np.asarray(a_cur)[None], xc, np.asarray(a_prev)[None], xp)
        gc, gp = tape.gradient(ad.sum_(out), [xc, xp])
        return gc[0], gp[0]


@dataclass
class TgcnLog:
    train_mse: list[list[float]] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)
    aborted: list[int] = field(default_factory=list)
    run_seeds: list[int] = field(default_factory=list)
    selected_run: int = -1
    split: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def temporal_split(n_windows: int, train_frac: float):
    """Prefix split: first share trains, the rest is halved into validation and test."""
    n_train = max(1, int(round(train_frac * n_windows)))
    n_train = min(n_train, n_windows - 1) if n_windows > 1 else n_windows
    rest = n_windows - n_train
    n_val = rest // 2
    idx = np.arange(n_windows)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


def train_tgcn(seq: TemporalSequence, config: TgcnConfig | None = None):
    """Fit ``config.runs`` models on lag-1 windows; keep the best on validation."""
    cfg = config or TgcnConfig()
    if len(seq) < 4:
        raise ValueError(f"trajectory must have at least 4 steps, got {len(seq)}")
    a_cur, x_cur, a_prev, x_prev = seq.a_hat[1:], seq.x[1:], seq.a_hat[:-1], seq.x[:-1]
    y = seq.y[1:]
    train, val, test = temporal_split(len(y), cfg.train_frac)
    record = TgcnLog(split={"train": train.tolist(), "val": val.tolist(), "test": test.tolist()})
    best, best_val = None, np.inf
    for run in range(cfg.runs):
        run_seed = cfg.seed * 1000 + run
        rng = make_rng(run_seed, "tgcn")
        model = TgcnModel(seq.x.shape[-1], cfg.hidden, rng)
        opt = Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        losses = []
        ok = True
        for _ in range(cfg.epochs):
            tape = ad.Tape()
            params = {k: tape.var(v, name=k) for k, v in model.params.items()}
            pred = model.forward(params, a_cur[train], x_cur[train], a_prev[train], x_prev[train])
            loss = ad.mean(ad.square(pred - y[train]))
            lv = float(ad.value(loss))
            if not np.isfinite(lv):
                ok = False
                break
            grads = tape.gradient(loss, list(params.values()))
            tape.reset()
            opt.step(dict(zip(params.keys(), grads)))
            losses.append(lv)
        record.run_seeds.append(run_seed)
        record.train_mse.append(losses)
        if not ok:
            log.warning("tgcn run %d (seed %d) aborted: non-finite loss", run, run_seed)
            record.aborted.append(run_seed)
            record.val_mse.append(float("nan"))
            record.test_mse.append(float("nan"))
            continue
        pred = model.forward(model.params, a_cur, x_cur, a_prev, x_prev)
        sel = val if val.size else train
        v = float(np.mean((pred[sel] - y[sel]) ** 2))
        record.val_mse.append(v)
        record.test_mse.append(float(np.mean((pred[test] - y[test]) ** 2)) if test.size else float("nan"))
        if v < best_val:
            best, best_val = model, v
            record.selected_run = run
    if best is None:
        raise TrainingError(f"all {cfg.runs} tgcn runs aborted (seeds {record.aborted})")
    return best, record


@dataclass
class TransitionSensitivity:
    pairs: list[tuple[int, int]]
    current: list[np.ndarray]
    lag: list[np.ndarray]
    pathway_ids: list[str] = field(default_factory=list)
    pathway_names: list[str] = field(default_factory=list)

    def ranking(self, k: int, which: str = "lag") -> list[int]:
        scores = self.lag[k] if which == "lag" else self.current[k]
        return rank_pathways(scores)

    def as_dict(self, top: int = 5):
        out = []
        for k, (t0, t1) in enumerate(self.pairs):
            entry = {"pair": [t0, t1]}
            for which in ("lag", "current"):
                scores = self.lag[k] if which == "lag" else self.current[k]
                order = rank_pathways(scores)
                entry[which] = {
                    "scores": [float(s) for s in scores],
                    "top": [{"rank": r + 1, "index": i,
                             "pathway_id": self.pathway_ids[i] if self.pathway_ids else str(i),
                             "score": float(scores[i])} for r, i in enumerate(order[:top])],
                }
            out.append(entry)
        return {"pairs": out}


def transition_sensitivity(model: TgcnModel, seq: TemporalSequence, pairs, pathway_ids=None,
                           pathway_names=None) -> TransitionSensitivity:
    """Per-node gradient norms of y(t+1) w.r.t. X(t+1) and X(t) at each stage boundary."""
    cur, lag = [], []
    for t0, t1 in pairs:
        if t1 != t0 + 1 or not 0 <= t0 < len(seq) - 1:
            raise ValueError(f"invalid transition pair ({t0}, {t1})")
        gc, gp = model.window_gradients(seq.a_hat[t1], seq.x[t1], seq.a_hat[t0], seq.x[t0])
        cur.append(np.sqrt(np.sum(gc * gc, axis=1)))
        lag.append(np.sqrt(np.sum(gp * gp, axis=1)))
    return TransitionSensitivity([tuple(p) for p in pairs], cur, lag, list(pathway_ids or []),
                                 list(pathway_names or []))
