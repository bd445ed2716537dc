"""Sample quality metrics: normalised nearest-neighbour error and proxy class score."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .models import NetworkParams, mlp_forward
from .numcore import Rng, softmax

EVAL_COLUMNS = ("score_x", "score_y", "score_avg", "err_x", "err_y", "err_avg", "n_samples", "config_hash")


def nn_distances(samples: np.ndarray, train_set: np.ndarray) -> np.ndarray:
    """Euclidean distance from each sample row to its nearest training row."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    train = np.atleast_2d(np.asarray(train_set, dtype=np.float64))
    if train.shape[0] == 0:
        raise ValueError("training set is empty")
    if samples.shape[1] != train.shape[1]:
        raise ValueError(f"sample dim {samples.shape[1]} != training dim {train.shape[1]}")
    # keep the (chunk, N, dim) difference block around 4M floats
    chunk = max(1, 4_000_000 // train.size)
    out = np.empty(len(samples))
    for s in range(0, len(samples), chunk):
        block = samples[s:s + chunk]
        d = block[:, None, :] - train[None, :, :]
        out[s:s + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", d, d).min(axis=1))
    return out


def noise_baseline_J(train_set: np.ndarray, n_noise: int, rng: Rng) -> float:
    """Mean distance from U[-1, 1] noise to its nearest training example."""
    if n_noise < 1:
        raise ValueError("n_noise must be >= 1")
    train = np.atleast_2d(np.asarray(train_set, dtype=np.float64))
    if train.size == 0:
        raise ValueError("training set is empty")
    noise = rng.uniform((n_noise, train.shape[1]), -1.0, 1.0)
    return float(nn_distances(noise, train).mean())


def nn_pixel_error(sample, train_set: np.ndarray, J: float):
    """err(x) = ||x - NN(x)||_2 / J; vectorised over rows of ``sample``."""
    if not J > 0:
        raise ValueError(f"J must be positive, got {J}")
    s = np.asarray(sample, dtype=np.float64)
    d = nn_distances(s, train_set) / J
    return float(d[0]) if s.ndim == 1 else d


def class_probabilities(classifier: NetworkParams, samples) -> np.ndarray:
    return softmax(mlp_forward(classifier, np.atleast_2d(np.asarray(samples, dtype=np.float64))).data)


def proxy_class_score(classifier: NetworkParams, samples, class_id: int) -> float:
    n_classes = classifier.out_dim
    if not 0 <= class_id < n_classes:
        raise ValueError(f"class_id {class_id} outside [0, {n_classes})")
    return float(class_probabilities(classifier, samples)[:, class_id].mean())


@dataclass
class EvalReport:
    err_x: float
    err_y: float
    score_x: float
    score_y: float
    score_avg: float
    n_samples: int
    config_hash: str = ""

    def __post_init__(self):
        if self.err_x < 0 or self.err_y < 0:
            raise ValueError("err values must be >= 0")
        for s in (self.score_x, self.score_y, self.score_avg):
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score {s} outside [0, 1]")

    @property
    def err_avg(self) -> float:
        return (self.err_x + self.err_y) / 2.0

    def row(self) -> dict:
        d = asdict(self)
        d["err_avg"] = self.err_avg
        return {c: d[c] for c in EVAL_COLUMNS}


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def evaluate(samples, x_set, y_set, classifier: NetworkParams, class_x: int = 0, class_y: int = 1,
             J_x: float | None = None, J_y: float | None = None, n_noise: int = 1000,
             seed: int = 0, cfg_hash: str = "") -> EvalReport:
    """Score and error of ``samples`` against both domains.

    Missing noise baselines are computed from a seeded stream, so the
    report is a pure function of its arguments.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    rng = Rng(seed)
    if J_x is None:
        J_x = noise_baseline_J(x_set, n_noise, rng.spawn(1))
    if J_y is None:
        J_y = noise_baseline_J(y_set, n_noise, rng.spawn(2))
    err_x = float(np.mean(nn_pixel_error(samples, x_set, J_x)))
    err_y = float(np.mean(nn_pixel_error(samples, y_set, J_y)))
    probs = class_probabilities(classifier, samples)
    score_x = float(probs[:, class_x].mean())
    score_y = float(probs[:, class_y].mean())
    return EvalReport(err_x, err_y, score_x, score_y, (score_x + score_y) / 2.0, len(samples), cfg_hash)
