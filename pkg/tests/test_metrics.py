import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ian_forge.data import generate
from ian_forge.metrics import (
    EvalReport,
    class_probabilities,
    config_hash,
    evaluate,
    nn_distances,
    nn_pixel_error,
    noise_baseline_J,
    proxy_class_score,
)
from ian_forge.models import make_comparator, mlp_forward
from ian_forge.numcore import Rng, softmax

from conftest import PAIRED_SEEDS


def test_nn_distances_against_loop():
    r = Rng(0)
    s, t = r.normal((13, 3)), r.normal((29, 3))
    expected = [min(math.dist(a, b) for b in t) for a in s]
    assert np.allclose(nn_distances(s, t), expected, rtol=1e-12)


def test_J_of_origin_on_the_line():
    # U[-1, 1] noise against {0}: E|u| = 1/2, sd(|u|) = 1/sqrt(12)
    n = 20000
    J = noise_baseline_J(np.zeros((1, 1)), n, Rng(7))
    assert abs(J - 0.5) < 3 * (1 / math.sqrt(12)) / math.sqrt(n)


def test_J_with_single_noise_draw():
    train = np.array([[0.25, 0.0]])
    J = noise_baseline_J(train, 1, Rng(11))
    u = Rng(11).uniform((1, 2), -1, 1)[0]
    assert J == pytest.approx(math.dist(u, train[0]), rel=1e-15)


def test_training_sample_has_zero_error():
    X, _ = generate("ring", 200, 0)
    J = noise_baseline_J(X, 500, Rng(1))
    assert nn_pixel_error(X[17], X, J) == 0.0


def test_noise_error_is_about_one():
    X, _ = generate("ring", 500, 0)
    J = noise_baseline_J(X, 2000, Rng(1))
    err = nn_pixel_error(Rng(2).uniform((2000, 2), -1, 1), X, J)
    assert abs(err.mean() - 1.0) < 0.1


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.1, 3.0))
def test_midpoint_error(delta, J):
    train = np.array([[-delta, 0.0], [delta, 0.0]])
    assert nn_pixel_error(np.zeros(2), train, J) == pytest.approx(delta / J, rel=1e-12)


@pytest.mark.parametrize("J", [0.0, -1.0, float("nan")])
def test_nonpositive_J_rejected(J):
    with pytest.raises(ValueError):
        nn_pixel_error(np.zeros(2), np.ones((1, 2)), J)


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        noise_baseline_J(np.zeros((1, 2)), 0, Rng(0))
    with pytest.raises(ValueError):
        nn_distances(np.zeros((1, 2)), np.zeros((0, 2)))


def test_proxy_classifier_recognises_fresh_samples(proxy_classifier):
    disks, _ = generate("disks", 500, 5)
    crosses, _ = generate("crosses", 500, 6)
    assert proxy_class_score(proxy_classifier, disks, 0) > 0.9
    assert proxy_class_score(proxy_classifier, crosses, 1) > 0.9


def test_proxy_classifier_is_undecided_on_noise(proxy_classifier):
    noise = Rng(3).uniform((1000, 256), -1, 1)
    assert abs(proxy_class_score(proxy_classifier, noise, 0) - 0.5) < 0.15


def test_single_sample_score_is_its_softmax():
    C = make_comparator(3, 0, n_classes=2)
    x = np.array([0.3, -0.2, 0.9])
    p = softmax(mlp_forward(C, x[None, :]).data)[0]
    assert proxy_class_score(C, x, 1) == pytest.approx(p[1], rel=1e-15)
    assert class_probabilities(C, x).sum() == pytest.approx(1.0, abs=1e-15)


def test_class_id_range():
    C = make_comparator(3, 0, n_classes=2)
    with pytest.raises(ValueError):
        proxy_class_score(C, np.zeros(3), 2)


def test_evaluate_fields_and_average():
    X, _ = generate("blobs", 100, 0)
    Y, _ = generate("shifted", 100, 1)
    C = make_comparator(2, 0, n_classes=2)
    rep = evaluate(X[:20], X, Y, C, n_noise=200, seed=4, cfg_hash="abc")
    assert rep.err_x == 0.0 and rep.err_y > 0
    assert rep.score_avg == pytest.approx((rep.score_x + rep.score_y) / 2, abs=0)
    assert rep.score_x + rep.score_y == pytest.approx(1.0, abs=1e-12)
    assert list(rep.row()) == ["score_x", "score_y", "score_avg", "err_x", "err_y", "err_avg",
                               "n_samples", "config_hash"]
    assert rep == evaluate(X[:20], X, Y, C, n_noise=200, seed=4, cfg_hash="abc")


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (2,), elements=st.floats(-3, 3)))
def test_error_is_translation_invariant(shift):
    r = Rng(9)
    train, samples = r.normal((30, 2)), r.normal((10, 2))
    a = nn_distances(samples, train)
    b = nn_distances(samples + shift, train + shift)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_report_validation():
    with pytest.raises(ValueError):
        EvalReport(-0.1, 0, 0.5, 0.5, 0.5, 1)
    with pytest.raises(ValueError):
        EvalReport(0, 0, 1.5, 0.5, 1.0, 1)


def test_config_hash_is_stable():
    assert config_hash("[train]\nk = 4\n") == config_hash("[train]\nk = 4\n")
    assert len(config_hash("")) == 16


def test_kgan_samples_score_higher_on_the_target_class(paired_runs, proxy_classifier, disks_crosses):
    X, Y = disks_crosses
    means = {}
    for model in ("vanilla", "kgan"):
        scores = [evaluate(pair[model]["samples"], X, Y, proxy_classifier, n_noise=200).score_y
                  for pair in paired_runs["runs"]]
        means[model] = float(np.mean(scores))
    assert len(paired_runs["runs"]) == len(PAIRED_SEEDS)
    assert means["kgan"] > means["vanilla"]
