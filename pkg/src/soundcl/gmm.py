"""Diagonal-covariance Gaussian mixtures fitted by EM on latent embeddings.

Seeding is k-means++-style (means drawn from the data, squared-distance
weighted). Mean log-likelihood is asserted non-decreasing on every
iteration; a component that collapses (no responsibility mass, or variance
pinned to the floor in every dimension) is re-seeded from a random data
point and the monotonicity clock restarts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6


@dataclass
class GmmModel:
    weights: np.ndarray    # (K,) on the simplex
    means: np.ndarray      # (K, D)
    variances: np.ndarray  # (K, D), >= VARIANCE_FLOOR
    fit_stats: tuple[int, float] = (0, float("nan"))

    @property
    def n_components(self) -> int:
        return len(self.weights)


def _log_joint(X: np.ndarray, weights, means, variances) -> np.ndarray:
    """log w_k + log N(x_i; m_k, diag v_k), shape (N, K)."""
    d = X.shape[1]
    diff = X[:, None, :] - means[None, :, :]            # N,K,D
    quad = (diff * diff / variances[None, :, :]).sum(axis=2)
    log_det = np.log(variances).sum(axis=1)
    log_norm = -0.5 * (d * np.log(2.0 * np.pi) + log_det)
    return np.log(weights)[None, :] + log_norm[None, :] - 0.5 * quad


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def responsibilities(gmm: GmmModel, X: np.ndarray) -> np.ndarray:
    """E-step posterior over components; rows sum to 1."""
    lj = _log_joint(X, gmm.weights, gmm.means, gmm.variances)
    return np.exp(lj - _logsumexp(lj, axis=1)[:, None])


def log_likelihood(gmm: GmmModel, X: np.ndarray) -> float:
    """Mean per-point log-likelihood, log-sum-exp stabilized."""
    X = np.asarray(X, dtype=np.float64)
    lj = _log_joint(X, gmm.weights, gmm.means, gmm.variances)
    return float(_logsumexp(lj, axis=1).mean())


def _seed_means(X: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++-style seeding: spread initial means across the data."""
    n = X.shape[0]
    means = np.empty((k, X.shape[1]))
    means[0] = X[rng.integers(n)]
    closest = ((X - means[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            means[i] = X[rng.integers(n)]
        else:
            means[i] = X[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, ((X - means[i]) ** 2).sum(axis=1))
    return means


def fit_em(embeddings: np.ndarray, k: int, max_iter: int = 200,
           tol: float = 1e-6, rng=None) -> GmmModel:
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise ValueError(f"need at least one component, got k={k}")
    if n < k:
        raise ValueError(f"cannot fit {k} components to {n} points")
    rng = rng if rng is not None else np.random.default_rng(0)

    data_var = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    means = _seed_means(X, k, rng)
    variances = np.tile(data_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    prev_ll = -np.inf
    final_ll = -np.inf
    iteration = 0
    for iteration in range(1, max_iter + 1):
        lj = _log_joint(X, weights, means, variances)
        per_point = _logsumexp(lj, axis=1)
        ll = float(per_point.mean())
        if ll < prev_ll - 1e-9:
            raise AssertionError(
                f"EM log-likelihood decreased: {prev_ll} -> {ll} at "
                f"iteration {iteration}"
            )
        final_ll = ll
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll

        resp = np.exp(lj - per_point[:, None])
        mass = resp.sum(axis=0)                      # (K,)
        reseeded = False
        for comp in range(k):
            if mass[comp] < n * 1e-12:
                log.info("reseeding collapsed component %d (mass %.3g)",
                         comp, mass[comp])
                means[comp] = X[rng.integers(n)]
                variances[comp] = data_var
                weights[comp] = 1.0 / n
                reseeded = True
        if reseeded:
            weights = weights / weights.sum()
            prev_ll = -np.inf
            continue

        weights = mass / n
        means = (resp.T @ X) / mass[:, None]
        sq = resp.T @ (X * X)
        variances = sq / mass[:, None] - means ** 2
        floored = variances < VARIANCE_FLOOR
        variances = np.maximum(variances, VARIANCE_FLOOR)
        for comp in range(k):
            if floored[comp].all():
                log.info("reseeding variance-collapsed component %d", comp)
                means[comp] = X[rng.integers(n)]
                variances[comp] = data_var
                prev_ll = -np.inf

    return GmmModel(weights=weights, means=means, variances=variances,
                    fit_stats=(iteration, final_ll))


def sample(gmm: GmmModel, n: int, rng) -> np.ndarray:
    """Draw n points: component per mixture weights, then diagonal Gaussian."""
    comps = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    noise = rng.standard_normal((n, gmm.means.shape[1]))
    return gmm.means[comps] + np.sqrt(gmm.variances[comps]) * noise


# ---- checkpoint embedding ---------------------------------------------------

GMM_VERSION = 1


def gmm_arrays(gmm: GmmModel) -> dict[str, np.ndarray]:
    return {
        "gmm/weights": gmm.weights,
        "gmm/means": gmm.means,
        "gmm/variances": gmm.variances,
    }


def gmm_from_arrays(arrays: dict[str, np.ndarray]) -> GmmModel:
    return GmmModel(weights=arrays["gmm/weights"].copy(),
                    means=arrays["gmm/means"].copy(),
                    variances=arrays["gmm/variances"].copy())
