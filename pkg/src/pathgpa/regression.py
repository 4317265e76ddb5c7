"""Graph-level regression with a two-layer GCN and node sensitivity ranking."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .graphs import GraphDataset, normalize_adjacency
from .numerics import autodiff as ad
from .numerics.optim import Adam, glorot
from .numerics.rng import make_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class RegressorConfig:
    hidden: int = 64
    dropout: float = 0.5
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 200
    runs: int = 10
    train_frac: float = 0.7
    test_frac: float = 0.2
    adjacency_exponent: float = -0.5
    seed: int = 0


def split_indices(n: int, train_frac: float, test_frac: float, rng):
    """Shuffled (train, validation, test) index arrays; validation is the remainder."""
    perm = rng.permutation(n)
    n_train = max(1, int(round(train_frac * n)))
    n_test = max(1, int(round(test_frac * n)))
    if n_train + n_test >= n:
        n_test = max(1, n - n_train - 1)
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:n_train + n_test])
    val = np.sort(perm[n_train + n_test:])
    return train, val, test


class GcnRegressor:
    """f(A, X) = w . MeanPool(GCN(GCN(X, A), A)) + b with ReLU after each layer."""

    def __init__(self, n_features: int, hidden: int = 64, dropout: float = 0.5, rng=None,
                 adjacency_exponent: float = -0.5):
        rng = rng if rng is not None else make_rng(0)
        self.n_features = n_features
        self.hidden = hidden
        self.dropout = dropout
        self.adjacency_exponent = adjacency_exponent
        self.params = {
            "W1": glorot(rng, n_features, hidden),
            "b1": np.zeros(hidden),
            "W2": glorot(rng, hidden, hidden),
            "b2": np.zeros(hidden),
            "w_out": glorot(rng, hidden, 1),
            "b_out": np.zeros(1),
        }

    def normalized(self, weights) -> np.ndarray:
        return normalize_adjacency(weights, self.adjacency_exponent)

    def forward(self, params, a_hat, x, drop_rng=None):
        """Predictions for a batch: a_hat (B,N,N), x (B,N,d) -> (B,)."""
        h = ad.relu(ad.matmul(a_hat, ad.matmul(x, params["W1"])) + params["b1"])
        h = self._dropout(h, drop_rng)
        h = ad.relu(ad.matmul(a_hat, ad.matmul(h, params["W2"])) + params["b2"])
        h = self._dropout(h, drop_rng)
        pooled = ad.mean(h, axis=-2)
        out = ad.matmul(pooled, params["w_out"]) + params["b_out"]
        return ad.reshape(out, ad.value(out).shape[:-1])

    def _dropout(self, h, drop_rng):
        if drop_rng is None or self.dropout <= 0:
            return h
        keep = 1.0 - self.dropout
        mask = (drop_rng.uniform(size=ad.value(h).shape) < keep) / keep
        return h * mask

    def _check(self, x):
        if x.shape[-1] != self.n_features:
            raise ValueError(f"feature dimension {x.shape[-1]} does not match model ({self.n_features})")

    def predict_batch(self, weights, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        w = np.asarray(weights, dtype=float)
        self._check(x)
        if w.shape[-1] != x.shape[-2] or w.shape[-2] != x.shape[-2]:
            raise ValueError(f"adjacency {w.shape} does not match {x.shape[-2]} nodes")
        return self.forward(self.params, self.normalized(w), x)

    def predict(self, graph) -> float:
        return float(self.predict_batch(graph.weights[None], graph.features[None])[0])

    def input_gradient(self, weights, features) -> np.ndarray:
        """d yhat / d X for one graph (N x d), dropout off."""
        self._check(np.asarray(features))
        tape = ad.Tape()
        x = tape.var(features, name="X")
        a_hat = self.normalized(weights)[None]
        params = {k: tape.var(v, name=k) for k, v in self.params.items()}
        out = self.forward(params, a_hat, ad.reshape(x, (1,) + x.shape))
        return tape.gradient(ad.sum_(out), [x])[0]


@dataclass
class TrainingLog:
    train_mse: list[list[float]] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)
    aborted: list[int] = field(default_factory=list)
    run_seeds: list[int] = field(default_factory=list)
    selected_run: int = -1
    splits: list[dict] = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def _mse(pred, y):
    return float(np.mean((np.asarray(pred) - y) ** 2))


def train_regressor(dataset: GraphDataset, config: RegressorConfig | None = None):
    """Train ``config.runs`` models and return the one with the best validation MSE."""
    cfg = config or RegressorConfig()
    if len(dataset) < 5:
        raise ValueError(f"need at least 5 graphs, got {len(dataset)}")
    x_all = dataset.features
    y_all = dataset.severity
    d = x_all.shape[-1]
    probe = GcnRegressor(d, cfg.hidden, cfg.dropout, make_rng(0), cfg.adjacency_exponent)
    a_all = probe.normalized(dataset.weights)
    record = TrainingLog()
    best, best_val = None, np.inf
    for run in range(cfg.runs):
        run_seed = cfg.seed * 1000 + run
        rng = make_rng(run_seed, "regressor")
        train, val, test = split_indices(len(dataset), cfg.train_frac, cfg.test_frac, rng)
        model = GcnRegressor(d, cfg.hidden, cfg.dropout, rng, cfg.adjacency_exponent)
        opt = Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        losses = []
        ok = True
        for _ in range(cfg.epochs):
            tape = ad.Tape()
            params = {k: tape.var(v, name=k) for k, v in model.params.items()}
            pred = model.forward(params, a_all[train], x_all[train], drop_rng=rng)
            loss = ad.mean(ad.square(pred - y_all[train]))
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
        record.splits.append({"train": train.tolist(), "val": val.tolist(), "test": test.tolist()})
        if not ok:
            log.warning("regressor run %d (seed %d) aborted: non-finite loss", run, run_seed)
            record.aborted.append(run_seed)
            record.val_mse.append(float("nan"))
            record.test_mse.append(float("nan"))
            continue
        pred = model.forward(model.params, a_all, x_all)
        val_idx = val if val.size else train
        v = _mse(pred[val_idx], y_all[val_idx])
        record.val_mse.append(v)
        record.test_mse.append(_mse(pred[test], y_all[test]))
        if v < best_val:
            best, best_val = model, v
            record.selected_run = run
    if best is None:
        raise TrainingError(f"all {cfg.runs} regressor runs aborted (seeds {record.aborted})")
    return best, record


@dataclass
class SensitivityRanking:
    scores: np.ndarray
    order: list[int]
    pathway_ids: list[str]
    pathway_names: list[str]
    metadata: dict = field(default_factory=dict)

    def top(self, k: int = 5):
        return [(r + 1, self.pathway_ids[i], self.pathway_names[i], float(self.scores[i]))
                for r, i in enumerate(self.order[:k])]

    def to_tsv(self) -> str:
        lines = ["rank\tpathway_id\tname\tscore"]
        for r, i in enumerate(self.order):
            lines.append(f"{r + 1}\t{self.pathway_ids[i]}\t{self.pathway_names[i]}\t{float(self.scores[i])!r}")
        return "\n".join(lines) + "\n"

    def as_dict(self):
        return {
            "scores": [float(s) for s in self.scores],
            "order": list(self.order),
            "pathway_ids": self.pathway_ids,
            "top5": [{"rank": r, "pathway_id": p, "name": n, "score": s} for r, p, n, s in self.top(5)],
            "metadata": self.metadata,
        }


def rank_pathways(scores) -> list[int]:
    """Indices by descending score; ties keep ascending index order."""
    scores = np.asarray(scores, dtype=float)
    return [int(i) for i in np.lexsort((np.arange(scores.size), -scores))]


def sensitivity_scores(model: GcnRegressor, dataset: GraphDataset, metadata=None) -> SensitivityRanking:
    """Sum over graphs of the per-node Euclidean norm of d yhat_i / d x_s."""
    n = dataset.graphs[0].n_nodes
    total = np.zeros(n)
    for g in dataset.graphs:
        grad = model.input_gradient(g.weights, g.features)
        total += np.sqrt(np.sum(grad * grad, axis=1))
    meta = {"graphs_used": "all", "n_graphs": len(dataset)}
    meta.update(metadata or {})
    return SensitivityRanking(total, rank_pathways(total), dataset.pathway_ids, dataset.pathway_names, meta)
