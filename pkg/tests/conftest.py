import numpy as np
import pytest

from ian_forge.data import generate
from ian_forge.numcore import Rng


@pytest.fixture
def rng():
    return Rng(20240601)


@pytest.fixture(scope="session")
def disks_crosses():
    """The image-mode pair used by the regulariser fixtures."""
    X, _ = generate("disks", 500, 0)
    Y, _ = generate("crosses", 200, 1)
    return X, Y


def random_points(seed: int, n: int, dim: int) -> np.ndarray:
    return Rng(seed).normal((n, dim))


# Reference-run protocol for the regulariser-effect fixtures (image mode).
PAIRED_SEEDS = range(1, 11)
PAIRED_STEPS = 300
PAIRED_BATCH = 32
EVAL_Z_SEED = 999
EVAL_N = 500


@pytest.fixture(scope="session")
def proxy_classifier():
    """Proxy classifier: class 0 = disks, class 1 = crosses (CLI defaults)."""
    from ian_forge.training import TrainConfig, pretrain_comparator

    X, _ = generate("disks", 2000, 10)
    Y, _ = generate("crosses", 2000, 11)
    return pretrain_comparator(TrainConfig(), [X, Y], steps=2000)


@pytest.fixture(scope="session")
def paired_runs(disks_crosses):
    """Vanilla GAN and K-GAN trained on the same seeds, defaults K=4, mu=0.001/0.0001."""
    from ian_forge.models import generator_forward, make_comparator
    from ian_forge.training import TrainConfig, train_loop

    X, Y = disks_crosses
    C = make_comparator(X.shape[1], 1234)
    runs = []
    for seed in PAIRED_SEEDS:
        pair = {}
        for model in ("vanilla", "kgan"):
            cfg = TrainConfig.for_model(model, steps=PAIRED_STEPS, seed=seed, latent_dim=32, batch=PAIRED_BATCH)
            result = train_loop(cfg, X, Y, comparator=C)
            z = Rng(EVAL_Z_SEED).uniform((EVAL_N, cfg.latent_dim), -1.0, 1.0)
            pair[model] = {"samples": generator_forward(result.nets.G, z).data, "result": result}
        runs.append(pair)
    return {"C": C, "runs": runs}


# ------------------------------------------------------ acceptance summary

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion.

    Usage: ``criterion(n, ok, detail)``; the line is printed immediately and
    again in the terminal summary, and ``ok`` is then asserted.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
