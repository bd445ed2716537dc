"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np

from ian_forge.cascade import TraversalPlan, manifold_traverse
from ian_forge.checks import GRAD_TOL, run_grad_checks
from ian_forge.data import generate
from ian_forge.density import KdeEstimator, jensen_bound_gap
from ian_forge.knn_index import FeatureSet, brute_force_knn, build_balltree, knn_query
from ian_forge.metrics import evaluate, nn_distances, nn_pixel_error, noise_baseline_J
from ian_forge.models import (
    autoencoder_disc_specs,
    comparator_features,
    generator_forward,
    init_params,
    mlp_forward,
    translator_forward,
)
from ian_forge.numcore import Rng, Tensor, grad, mul, relative_error, squared_l2, sub, sum_
from ian_forge.training import (
    DatasetSampler,
    TrainConfig,
    build_targets,
    gan_step,
    kgan_step,
    make_cycle,
    make_gan,
    make_comparator,
    train_loop,
    train_translator,
)

from conftest import PAIRED_SEEDS


def test_criterion_01_jensen_bound(criterion):
    t0 = time.perf_counter()
    r = Rng(101)
    worst = math.inf
    for i in range(1000):
        k = (1, 4, 8)[i % 3]
        M = int(r.integers(40, 1)[0]) + k
        dim = int(r.integers(6, 1)[0]) + 1
        fs = FeatureSet(r.normal((M, dim)))
        est = KdeEstimator(fs, 1.0)
        q = r.normal((dim,)) * float(r.uniform((1,), 0.1, 3.0)[0])
        worst = min(worst, jensen_bound_gap(est, q, k, build_balltree(fs)))
    # equality cases: a single stored feature, and k equidistant neighbours
    single = FeatureSet(np.array([[0.3, -0.7]]))
    eq1 = jensen_bound_gap(KdeEstimator(single), np.array([1.1, 0.4]), 1, build_balltree(single))
    ring = FeatureSet(np.vstack([np.eye(4), -np.eye(4), 3 * np.ones((5, 4))]))
    eq2 = jensen_bound_gap(KdeEstimator(ring), np.zeros(4), 8, build_balltree(ring))
    elapsed = time.perf_counter() - t0
    ok = worst >= -1e-9 and abs(eq1) < 1e-9 and abs(eq2) < 1e-9 and elapsed < 10
    criterion(1, ok, f"min gap {worst:.3e}, equality |gap| {abs(eq1):.1e}/{abs(eq2):.1e}, {elapsed:.2f}s")


def test_criterion_02_mean_of_k(criterion):
    r = Rng(202)
    worst = 0.0
    for _ in range(100):
        K = int(r.integers(8, 1)[0]) + 1
        dim = int(r.integers(10, 1)[0]) + 1
        f0, d = r.normal((dim,)), r.normal((K, dim))
        f = Tensor(f0.copy(), True)
        diff = sub(f, Tensor(d))
        g_sum = grad(sum_(mul(diff, diff)), [f])[0]
        f2 = Tensor(f0.copy(), True)
        g_mean = grad(squared_l2(f2, Tensor(d.mean(axis=0))), [f2])[0]
        worst = max(worst, relative_error(g_sum, K * g_mean))
    criterion(2, worst < 1e-10, f"worst relative error {worst:.2e} over 100 instances")


def test_criterion_03_balltree_oracle(criterion):
    t0 = time.perf_counter()
    r = Rng(303)
    fs = FeatureSet(r.normal((500, 8)))
    tree = build_balltree(fs)
    queries = r.normal((100, 8))
    identical = all(knn_query(tree, q, k) == brute_force_knn(fs, q, k) for k in (1, 4, 8) for q in queries)
    contained = all(
        np.all(np.linalg.norm(tree.node_points(n) - tree.centroid[n], axis=1) <= tree.radius[n] + 1e-9)
        for n in range(tree.n_nodes))
    covered = sorted(np.concatenate(tree.leaves()).tolist()) == list(range(fs.M))
    elapsed = time.perf_counter() - t0
    criterion(3, identical and contained and covered and elapsed < 5,
              f"bit-identical={identical}, containment={contained}, {tree.n_nodes} nodes, {elapsed:.2f}s")


def test_criterion_04_gradient_checks(criterion):
    results = run_grad_checks(0)
    name, worst = max(results, key=lambda t: t[1])
    has_kgan = any(n.startswith("kgan_generator_loss") for n, _ in results)
    criterion(4, worst < GRAD_TOL and has_kgan and len(results) >= 19,
              f"{len(results)} checks, worst {name} rel err {worst:.2e}")


def test_criterion_05_mu_zero_degeneration(criterion):
    X, _ = generate("blobs", 64, 0)
    Y, _ = generate("shifted", 40, 1)
    cfg = TrainConfig(mu_hi=0.0, mu_lo=0.0, batch=16, seed=5)
    a, b = make_gan(cfg, 2), make_gan(cfg, 2)
    a.C = make_comparator(2, 7)
    targets = build_targets(a.C, Y)
    same = True
    for step in range(4):
        batch = X[step * 16:(step + 1) * 16]
        ra = kgan_step(cfg, a, batch, targets, Rng(step))
        rb = gan_step(cfg, b, batch, Rng(step))
        same &= (ra.loss_d, ra.loss_g) == (rb.loss_d, rb.loss_g)
        same &= all(np.array_equal(a.G.arrays()[k], b.G.arrays()[k]) for k in a.G.arrays())
        same &= all(np.array_equal(a.D.arrays()[k], b.D.arrays()[k]) for k in a.D.arrays())
    criterion(5, same, "kgan_step(mu=0) vs gan_step over 4 shared-seed steps")


def test_criterion_06_ring_training(criterion):
    t0 = time.perf_counter()
    X, _ = generate("ring", 1000, 0)
    res = train_loop(TrainConfig.for_model("vanilla", steps=3000, seed=1), X)
    samples = generator_forward(res.nets.G, Rng(1).uniform((1000, 8), -1, 1)).data
    J = noise_baseline_J(X, 1000, Rng(2))
    err = float(nn_pixel_error(samples, X, J).mean())
    elapsed = time.perf_counter() - t0
    criterion(6, err < 0.25 and elapsed < 120, f"mean err {err:.4f} (J={J:.4f}), {elapsed:.1f}s")


def test_criterion_07_regularizer_effect(criterion, paired_runs, proxy_classifier, disks_crosses):
    X, Y = disks_crosses
    C = paired_runs["C"]
    fy = comparator_features(C, Y).f_hi.data
    wins, score = 0, {"vanilla": [], "kgan": []}
    for pair in paired_runs["runs"]:
        dist = {}
        for model in ("vanilla", "kgan"):
            s = pair[model]["samples"]
            dist[model] = nn_distances(comparator_features(C, s).f_hi.data, fy).mean()
            score[model].append(evaluate(s, X, Y, proxy_classifier, n_noise=200).score_y)
        wins += dist["kgan"] < dist["vanilla"]
    sy = {m: float(np.mean(v)) for m, v in score.items()}
    ok = len(PAIRED_SEEDS) == 10 and wins >= 8 and sy["kgan"] > sy["vanilla"]
    criterion(7, ok, f"K-GAN closer in {wins}/10 pairs; mean score_y K-GAN {sy['kgan']:.3f} "
                     f"vs GAN {sy['vanilla']:.3f}")


def test_criterion_08_cycle_consistency(criterion):
    X, _ = generate("blobs", 1000, 0)
    Y, _ = generate("shifted", 1000, 1)
    cfg = TrainConfig(lambda_cyc=10.0, steps=2000, seed=1)
    nets = make_cycle(cfg, 2, 2)
    train_translator(cfg, nets, DatasetSampler(X), Y)
    fresh, _ = generate("blobs", 1000, 99)
    back = translator_forward(nets.B, translator_forward(nets.A, fresh)).data
    cyc = float(np.abs(back - fresh).sum(axis=1).mean())
    criterion(8, cyc < 0.05, f"mean |B(A(x)) - x|_1 = {cyc:.4f} on 1000 held-out points")


def test_criterion_09_metric_calibration(criterion):
    X, _ = generate("ring", 1000, 0)
    J = noise_baseline_J(X, 1000, Rng(1))
    train_err = nn_pixel_error(X, X, J)
    noise_err = float(nn_pixel_error(Rng(2).uniform((1000, 2), -1, 1), X, J).mean())
    ok = np.all(train_err == 0.0) and 0.9 <= noise_err <= 1.1
    criterion(9, bool(ok), f"training err max {train_err.max()}, noise err {noise_err:.4f}")


def test_criterion_10_traversal_contract(criterion):
    D = init_params(autoencoder_disc_specs(6, 4, hidden=16), 3, "D", "autoencoder")
    trs = [make_cycle(TrainConfig(hidden=8, layers=1), 6, 6, seed=s).A for s in (1, 2)]
    r = Rng(10)
    x_a, x_b = r.normal((6,)), r.normal((6,))
    ends = manifold_traverse(TraversalPlan(x_a, x_b, 2), D)
    expected = mlp_forward(D, mlp_forward(D, np.stack([x_a, x_b]), "enc").data, "dec").data
    exact = np.array_equal(ends[0], expected)
    grid = manifold_traverse(TraversalPlan(x_a, x_b, 7, trs), D)
    shape_ok = grid.shape == (3, 7, 6)
    flat = manifold_traverse(TraversalPlan(x_a, x_a.copy(), 5, trs), D)
    constant = all(np.allclose(row, row[0], rtol=0, atol=1e-14) for row in flat)
    criterion(10, exact and shape_ok and constant,
              f"endpoints exact={exact}, grid {grid.shape}, constant columns={constant}")


def test_criterion_11_cli_determinism(criterion, tmp_path):
    from test_cli import pipeline

    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    pipeline(a)
    pipeline(b)
    names = sorted(p.name for p in a.iterdir())
    differing = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    same_set = names == sorted(p.name for p in b.iterdir())
    criterion(11, same_set and not differing,
              f"{len(names)} artifacts (checkpoints, CSVs, PGMs), differing: {differing or 'none'}")


def test_criterion_12_utilization(criterion, disks_crosses):
    X, Y = disks_crosses
    util = {}
    for k in (4, 1):
        res = train_loop(TrainConfig.for_model("kgan", k=k, steps=300, seed=1, latent_dim=32), X, Y)
        logged = [row["utilization"] for row in res.log]
        assert logged[-1] == res.utilization and all(np.diff(logged) >= 0)
        util[k] = res.utilization
    criterion(12, util[4] > util[1], f"card(chi)/M: K=4 {util[4]:.3f}, K=1 {util[1]:.3f}")
