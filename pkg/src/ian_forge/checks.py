"""Numerical self-checks shared by the command line and the test suite."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .density import KdeEstimator, jensen_bound_gap
from .knn_index import FeatureSet, build_balltree
from .models import (
    classifier_disc_spec,
    comparator_features,
    generator_forward,
    generator_spec,
    init_params,
    make_comparator,
)
from .numcore import Rng, Tensor, finite_diff_grad, grad, relative_error
from .training import GanNets, TrainConfig, _gen_adv_loss, knn_term

GRAD_TOL = 1e-5
GAP_TOL = -1e-9


def _away_from_zero(rng: Rng, shape, margin: float = 0.1) -> np.ndarray:
    """Uniform entries with |x| >= margin, so kinked ops stay differentiable."""
    u = rng.uniform(shape, margin, 1.0)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * u


def _op_cases(rng: Rng):
    """(name, builder, input arrays); builder maps Tensors to a scalar Tensor."""
    a, b = rng.normal((3, 4)), rng.normal((3, 4))
    w, bias = rng.normal((4, 5)), rng.normal((5,))
    k = _away_from_zero(rng, (3, 4))
    p = rng.uniform((6,), 0.05, 0.95)
    labels = rng.integers(5, 3)
    weights = rng.normal((3, 5))

    def scal(t):
        return nc.sum_(nc.mul(t, Tensor(np.linspace(0.5, 1.5, t.data.size).reshape(t.shape))))

    return [
        ("matmul", lambda x, y: scal(nc.matmul(x, y)), [a, w]),
        ("add", lambda x, y: scal(nc.add(x, y)), [a, b]),
        ("sub", lambda x, y: scal(nc.sub(x, y)), [a, b]),
        ("mul", lambda x, y: scal(nc.mul(x, y)), [a, b]),
        ("linear", lambda x, y, c: scal(nc.linear(x, y, c)), [a, w, bias]),
        ("tanh", lambda x: scal(nc.tanh(x)), [a]),
        ("sigmoid", lambda x: scal(nc.sigmoid(x)), [a]),
        ("leaky_relu", lambda x: scal(nc.leaky_relu(x)), [k]),
        ("relu", lambda x: scal(nc.relu(x)), [k]),
        ("identity", lambda x: scal(nc.identity(x)), [a]),
        ("mean", lambda x: nc.mean(nc.mul(x, x)), [a]),
        ("mean_axis", lambda x: scal(nc.mean(x, axis=0)), [a]),
        ("sum", lambda x: nc.sum_(nc.mul(x, x)), [a]),
        ("bce", lambda x: nc.bce(x, 1.0) + nc.bce(x, 0.0), [p]),
        ("bce_with_logits", lambda x: nc.bce_with_logits(x, 1.0) + nc.bce_with_logits(x, 0.0), [a]),
        ("softmax_cross_entropy", lambda x: nc.softmax_cross_entropy(nc.mul(x, Tensor(weights)), labels),
         [rng.normal((3, 5))]),
        ("squared_l2", lambda x, y: nc.mean(nc.squared_l2(x, y)), [a, b]),
        ("l1", lambda x: nc.mean(nc.l1(x, Tensor(np.zeros((3, 4))))), [k]),
    ]


def _check(build, arrays, h: float) -> float:
    tensors = [Tensor(x.copy(), True) for x in arrays]
    analytic = grad(build(*tensors), tensors)
    worst = 0.0
    for i, t in enumerate(tensors):
        def loss(v, i=i):
            args = [Tensor(v) if j == i else Tensor(arrays[j]) for j in range(len(arrays))]
            return build(*args).item()

        numeric = finite_diff_grad(loss, arrays[i].copy(), h)
        worst = max(worst, relative_error(analytic[i], numeric))
    return worst


def kgan_generator_loss(nets: GanNets, z, t_hi, t_lo, cfg: TrainConfig):
    """Full generator objective (adversarial plus KNN terms) at fixed targets."""
    fake = generator_forward(nets.G, z)
    feats = comparator_features(nets.C, fake)
    term, _, _ = knn_term(cfg, feats.f_hi, feats.f_lo, t_hi, t_lo)
    return _gen_adv_loss(nets, fake) + term


def _kgan_case(rng: Rng, mu: float, h: float) -> float:
    cfg = TrainConfig(mu_hi=mu, mu_lo=mu, latent_dim=3)
    G = init_params(generator_spec(3, 6, hidden=8, layers=1), int(rng.integers(2**31, 1)[0]), "G")
    D = init_params(classifier_disc_spec(6, hidden=8, layers=1), int(rng.integers(2**31, 1)[0]), "D",
                    "classifier")
    C = make_comparator(6, int(rng.integers(2**31, 1)[0]), s_lo=5, s_hi=4)
    nets = GanNets(G, D, C)
    z = rng.uniform((4, 3), -1.0, 1.0)
    feats = comparator_features(C, generator_forward(G, z))
    t_hi = feats.f_hi.data + rng.normal(feats.f_hi.shape)
    t_lo = feats.f_lo.data + rng.normal(feats.f_lo.shape)
    params = G.trainable()
    analytic = grad(kgan_generator_loss(nets, z, t_hi, t_lo, cfg), params)
    worst = 0.0
    for name, p in params.items():
        base = p.data.copy()

        def loss(v, p=p):
            p.data = v
            return kgan_generator_loss(nets, z, t_hi, t_lo, cfg).item()

        numeric = finite_diff_grad(loss, base.copy(), h)
        p.data = base
        worst = max(worst, relative_error(analytic[name], numeric))
    return worst


def run_grad_checks(seed: int, h: float = 1e-5) -> list[tuple[str, float]]:
    """Relative error of every primitive op and the KNN-regularised G loss."""
    rng = Rng(seed)
    results = [(name, _check(build, arrays, h)) for name, build, arrays in _op_cases(rng.spawn(1))]
    results.append(("kgan_generator_loss", _kgan_case(rng.spawn(2), 0.001, h)))
    results.append(("kgan_generator_loss_mu1", _kgan_case(rng.spawn(3), 1.0, h)))
    return results


def bound_gaps(features: np.ndarray, queries: np.ndarray, k: int, leaf_size: int = 16) -> np.ndarray:
    """Jensen gap (sigma = 1) of every query row against ``features``."""
    fs = FeatureSet(features)
    est = KdeEstimator(fs, 1.0)
    tree = build_balltree(fs, leaf_size)
    return np.array([jensen_bound_gap(est, q, k, tree) for q in np.atleast_2d(queries)])
