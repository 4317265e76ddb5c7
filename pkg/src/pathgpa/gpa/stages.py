"""Disease stages as components of a full-covariance Gaussian mixture."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..numerics.rng import make_rng

log = logging.getLogger(__name__)

JITTER = 1e-6


class MixtureError(ArithmeticError):
    pass


@dataclass
class StageAssignment:
    labels: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: list[float]
    n_components: int
    regularized: bool = False
    converged: bool = True
    bic: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "labels": [int(v) for v in self.labels],
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihood": list(self.log_likelihood),
            "n_components": self.n_components,
            "regularized": self.regularized,
            "converged": self.converged,
            "bic": {str(k): v for k, v in self.bic.items()},
        }


def _log_gauss(x, mean, cov):
    """Row-wise log density; raises LinAlgError if cov is not positive definite."""
    chol = np.linalg.cholesky(cov)
    diff = np.linalg.solve(chol, (x - mean).T)
    maha = np.sum(diff * diff, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (x.shape[1] * np.log(2 * np.pi) + logdet + maha)


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
    centers = np.array(centers)
    for _ in range(20):
        lab = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
        new = np.array([x[lab == j].mean(axis=0) if np.any(lab == j) else centers[j] for j in range(k)])
        if np.allclose(new, centers):
            break
        centers = new
    return lab


def _m_step(x, resp, jitter):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = resp.T @ x / nk[:, None]
    d = x.shape[1]
    covs = np.empty((resp.shape[1], d, d))
    for j in range(resp.shape[1]):
        diff = x - means[j]
        covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j] + jitter * np.eye(d)
    return weights, means, covs


def _e_step(x, weights, means, covs):
    logp = np.column_stack([np.log(weights[j]) + _log_gauss(x, means[j], covs[j]) for j in range(len(weights))])
    top = logp.max(axis=1, keepdims=True)
    norm = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
    return np.exp(logp - norm[:, None]), float(norm.sum())


def _em(x, k, init_labels, jitter, tol, max_iter):
    resp = np.eye(k)[init_labels]
    weights, means, covs = _m_step(x, resp, jitter)
    trace = []
    converged = False
    prev = None
    for _ in range(max_iter):
        resp, ll = _e_step(x, weights, means, covs)
        if prev is not None and ll < prev[0] - 1e-9 * max(1.0, abs(prev[0])):
            # regularized updates are not exact maximizers; keep the better iterate
            weights, means, covs = prev[1]
            converged = True
            break
        trace.append(ll)
        if prev is not None and ll - prev[0] < tol:
            converged = True
            break
        prev = (ll, (weights, means, covs))
        weights, means, covs = _m_step(x, resp, jitter)
    resp, _ = _e_step(x, weights, means, covs)
    return weights, means, covs, resp, trace, converged


def _fit_k(x, k, seed, n_init, tol, max_iter):
    """Best of ``n_init`` seeded restarts.

    Fits where a component holds fewer than d + 1 points (an unsupported full
    covariance) rank below every supported fit.
    """
    n, d = x.shape
    min_support = d + 1 if n >= k * (d + 1) else 1
    best = None
    for attempt in range(n_init):
        rng = make_rng(seed, "gmm", k, attempt)
        init = _kmeanspp(x, k, rng)
        for jitter in (0.0, JITTER):
            try:
                res = _em(x, k, init, jitter, tol, max_iter)
            except np.linalg.LinAlgError:
                if jitter:
                    raise MixtureError(f"covariance singular even with jitter {JITTER} (K={k})") from None
                continue
            if jitter == 0.0 and _degenerate(res[2]):
                continue
            ll = res[4][-1] if res[4] else -np.inf
            support = np.bincount(np.argmax(res[3], axis=1), minlength=k).min()
            key = (bool(support >= min_support), ll)
            if best is None or key > best[0]:
                best = (key, res, bool(jitter))
            break
    if best is None:
        raise MixtureError(f"no valid fit for K={k}")
    (_, ll), res, reg = best
    return ll, res, reg


def _degenerate(covs):
    for c in covs:
        ev = np.linalg.eigvalsh(c)
        if ev[0] <= 1e-10 * max(1.0, ev[-1]):
            return True
    return False


def _relabel(labels, means, order_dim):
    """Renumber components by ascending mean of ``order_dim``."""
    order = np.argsort(means[:, order_dim], kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[labels], order


def bic(ll, k, n, d):
    n_params = (k - 1) + k * d + k * d * (d + 1) / 2
    return -2.0 * ll + n_params * np.log(n)


def fit_stages(z, k="auto", seed: int = 0, n_init: int = 5, tol: float = 1e-7, max_iter: int = 500,
               k_range=(2, 6)) -> StageAssignment:
    """Gaussian-mixture staging; ``k='auto'`` picks K by minimum BIC over ``k_range``."""
    x = np.asarray(z, dtype=float)
    n, d = x.shape
    bics = {}
    if k == "auto":
        cands = [c for c in range(k_range[0], k_range[1] + 1) if c + 1 <= n]
        if not cands:
            raise ValueError(f"too few points ({n}) for automatic K")
        fits = {}
        for c in cands:
            try:
                fits[c] = _fit_k(x, c, seed, n_init, tol, max_iter)
            except MixtureError as err:
                log.warning("skipping K=%d: %s", c, err)
                continue
            bics[c] = float(bic(fits[c][0], c, n, d))
        if not bics:
            raise MixtureError("no candidate K produced a valid mixture")
        k = min(bics, key=lambda c: (bics[c], c))
        ll, res, reg = fits[k]
    else:
        k = int(k)
        if n < k + 1:
            raise ValueError(f"need at least {k + 1} points for K={k}, got {n}")
        if k == 1:
            return _single(x)
        ll, res, reg = _fit_k(x, k, seed, n_init, tol, max_iter)
    weights, means, covs, resp, trace, converged = res
    labels = np.argmax(resp, axis=1)
    labels, order = _relabel(labels, means, d - 1)
    return StageAssignment(labels, weights[order], means[order], covs[order], trace, k, reg, converged, bics)


def _single(x):
    mean = x.mean(axis=0)
    diff = x - mean
    cov = diff.T @ diff / x.shape[0]
    reg = _degenerate(cov[None])
    if reg:
        cov = cov + JITTER * np.eye(x.shape[1])
    ll = float(_log_gauss(x, mean, cov).sum())
    return StageAssignment(np.zeros(x.shape[0], dtype=int), np.ones(1), mean[None], cov[None], [ll], 1, reg)

