"""Gaussian KDE proxy for the target feature distribution.

The density at feature ``f`` is

    p(f) = 1 / (M * sigma * sqrt(2 pi)) * sum_i exp(-||f - y_i||^2 / sigma^2)

over the M stored target features y_i.  Logs are evaluated with
log-sum-exp so far-away queries stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .knn_index import BallTree, FeatureSet, knn_query
from .numcore import Rng

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KdeEstimator:
    fs: FeatureSet
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not isinstance(self.fs, FeatureSet):
            object.__setattr__(self, "fs", FeatureSet(self.fs))

    @property
    def log_norm(self) -> float:
        """log(1 / (M sigma sqrt(2 pi)))."""
        return -(math.log(self.fs.M) + math.log(self.sigma) + LOG_SQRT_2PI)


def _as_query(est: KdeEstimator, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.shape[0] != est.fs.dim:
        raise ValueError(f"feature has dimension {f.shape[0]}, estimator has {est.fs.dim}")
    return f


def kde_log_density(est: KdeEstimator, f) -> float:
    f = _as_query(est, f)
    d = est.fs.points - f
    sq = np.einsum("ij,ij->i", d, d)
    return est.log_norm + float(logsumexp(-sq / est.sigma**2))


def kde_topk_log_density(est: KdeEstimator, f, k: int, tree: BallTree) -> float:
    """KDE restricted to the k nearest stored features; normaliser keeps M."""
    f = _as_query(est, f)
    if k == est.fs.M:
        return kde_log_density(est, f)
    dists = np.array([d for _, d in knn_query(tree, f, k)])
    return est.log_norm + float(logsumexp(-dists**2 / est.sigma**2))


def jensen_bound_gap(est: KdeEstimator, f, k: int, tree: BallTree) -> float:
    """Upper bound minus value for the proxy cross-entropy at one point.

    With sigma = 1 and r_i the i-th nearest feature,

        -log p_k(f) <= log(M sqrt(2 pi) / k) + (1/k) sum_i ||f - r_i||^2

    and the returned difference (right minus left) is never negative.
    """
    if est.sigma != 1.0:
        raise ValueError("the bound is only established for sigma == 1")
    f = _as_query(est, f)
    sq = np.array([d for _, d in knn_query(tree, f, k)]) ** 2
    lhs = -(est.log_norm + float(logsumexp(-sq)))
    rhs = math.log(est.fs.M) + LOG_SQRT_2PI - math.log(k) + float(sq.mean())
    return rhs - lhs


def cross_entropy_mc(gen_fn, est: KdeEstimator, n_z: int, rng: Rng, latent_dim: int) -> float:
    """Monte-Carlo estimate of E_z[-log p(gen_fn(z))] with z ~ U[-1, 1]^d.

    ``gen_fn`` maps a (n_z, d) latent batch to (n_z, s) features.
    """
    if n_z < 1:
        raise ValueError("n_z must be >= 1")
    z = rng.uniform((n_z, latent_dim), -1.0, 1.0)
    feats = np.asarray(gen_fn(z), dtype=np.float64).reshape(n_z, -1)
    return float(np.mean([-kde_log_density(est, f) for f in feats]))
