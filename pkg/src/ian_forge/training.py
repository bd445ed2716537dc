"""Adam and the adversarial training procedures.

* ``gan_step``: one discriminator update followed by one non-saturating
  generator update.
* ``kgan_step``: the same, with the generator loss augmented by the KNN
  feature-matching term  mu_hi ||f_hi - t_hi||^2 + mu_lo ||f_lo - t_lo||^2
  where t is the mean of the k nearest target features of each generated
  sample, searched once per step and held constant during the update.
* ``cyclegan_step``: two discriminators then two translators with an L1
  cycle term weighted by lambda.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .knn_index import (
    BallTree,
    FeatureSet,
    UtilizationTracker,
    build_balltree,
    knn_query_batch,
    mean_of,
    utilization,
)
from .models import (
    NetworkParams,
    autoencoder_disc_specs,
    autoencoder_forward,
    classifier_disc_spec,
    comparator_features,
    disc_logits,
    generator_forward,
    generator_spec,
    init_params,
    make_comparator,
    mlp_forward,
    translator_forward,
)
from .numcore import (
    NonFiniteError,
    Rng,
    Tensor,
    bce_with_logits,
    grad,
    l1,
    mean,
    relu,
    softmax_cross_entropy,
    squared_l2,
)

log = logging.getLogger(__name__)

MODELS = ("vanilla", "kgan", "mx", "perceptual")


@dataclass
class TrainConfig:
    k: int = 4
    mu_hi: float = 0.001
    mu_lo: float = 0.0001
    lambda_cyc: float = 10.0
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 64
    steps: int = 3000
    seed: int = 1
    knn_mode: str = "nearest"
    mix_datasets: bool = False
    disc_variant: str = "classifier"
    latent_dim: int = 8
    hidden: int = 64
    layers: int = 2
    ae_margin: float = 0.5
    clip_norm: float = 10.0
    leaf_size: int = 16
    comparator_seed: int = 1234
    comparator_gain: float = 5.0
    s_lo: int = 32
    s_hi: int = 16
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mu_hi < 0 or self.mu_lo < 0:
            raise ValueError("mu must be >= 0")
        if self.lambda_cyc < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.knn_mode not in ("nearest", "random"):
            raise ValueError(f"knn_mode must be nearest|random, got {self.knn_mode!r}")
        if self.disc_variant not in ("classifier", "autoencoder"):
            raise ValueError(f"disc_variant must be classifier|autoencoder, got {self.disc_variant!r}")
        if self.batch < 1 or self.steps < 0:
            raise ValueError("batch must be >= 1 and steps >= 0")

    @classmethod
    def for_model(cls, model: str, **kw) -> "TrainConfig":
        """Config for one of the named model families."""
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        if model in ("vanilla", "mx"):
            kw["mu_hi"] = 0.0
            kw["mu_lo"] = 0.0
        if model == "mx":
            kw["mix_datasets"] = True
        if model == "perceptual":
            kw["knn_mode"] = "random"
        return cls(**kw)


# ------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_update(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray],
                cfg: TrainConfig) -> dict[str, Tensor]:
    """One bias-corrected Adam step, in place on ``params``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adam: non-finite gradient for {name!r}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"adam: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float, who: str = "") -> dict[str, np.ndarray]:
    if max_norm <= 0:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        log.debug("clipping %s gradients: norm %.3g > %.3g", who, norm, max_norm)
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def _update(net: NetworkParams, opt: AdamState, loss: Tensor, cfg: TrainConfig) -> None:
    params = net.trainable()
    grads = clip_global_norm(grad(loss, params), cfg.clip_norm, net.name)
    adam_update(opt, params, grads, cfg)


# ------------------------------------------------------------ containers

@dataclass
class StepReport:
    loss_d: float = 0.0
    loss_g: float = 0.0
    loss_knn_hi: float = 0.0
    loss_knn_lo: float = 0.0
    loss_cyc: float = 0.0
    utilization: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not np.isfinite(v):
                raise NonFiniteError(f"{f.name} is not finite ({v})")


LOG_COLUMNS = ("step", "loss_d", "loss_g", "loss_knn_hi", "loss_knn_lo", "loss_cyc", "utilization")


@dataclass
class GanNets:
    G: NetworkParams
    D: NetworkParams
    C: NetworkParams | None = None
    opt_G: AdamState = field(default_factory=AdamState)
    opt_D: AdamState = field(default_factory=AdamState)

    @property
    def variant(self) -> str:
        return "autoencoder" if "enc" in self.D.parts else "classifier"


@dataclass
class CycleNets:
    A: NetworkParams
    B: NetworkParams
    DX: NetworkParams
    DY: NetworkParams
    opt_A: AdamState = field(default_factory=AdamState)
    opt_B: AdamState = field(default_factory=AdamState)
    opt_DX: AdamState = field(default_factory=AdamState)
    opt_DY: AdamState = field(default_factory=AdamState)


@dataclass
class KnnTargets:
    """Per-layer feature sets, their trees and utilization trackers."""

    fs_lo: FeatureSet
    fs_hi: FeatureSet
    tree_lo: BallTree
    tree_hi: BallTree
    tracker_lo: UtilizationTracker
    tracker_hi: UtilizationTracker

    @classmethod
    def from_features(cls, f_lo: np.ndarray, f_hi: np.ndarray, leaf_size: int = 16) -> "KnnTargets":
        fs_lo, fs_hi = FeatureSet(f_lo), FeatureSet(f_hi)
        return cls(fs_lo, fs_hi, build_balltree(fs_lo, leaf_size), build_balltree(fs_hi, leaf_size),
                   UtilizationTracker(fs_lo.M), UtilizationTracker(fs_hi.M))

    def utilization(self) -> float:
        """Utilization of the high-level layer's feature set."""
        return utilization(self.tracker_hi)


def make_gan(cfg: TrainConfig, data_dim: int, seed: int | None = None) -> GanNets:
    seed = cfg.seed if seed is None else seed
    G = init_params(generator_spec(cfg.latent_dim, data_dim, cfg.hidden, cfg.layers),
                    seed * 2 + 1, "G", "generator")
    if cfg.disc_variant == "classifier":
        D = init_params(classifier_disc_spec(data_dim, cfg.hidden, cfg.layers), seed * 2 + 2, "D", "classifier")
    else:
        D = init_params(autoencoder_disc_specs(data_dim, cfg.latent_dim, cfg.hidden), seed * 2 + 2, "D",
                        "autoencoder")
    return GanNets(G, D)


# -------------------------------------------------------------- GAN steps

def _disc_loss(nets: GanNets, cfg: TrainConfig, real: np.ndarray, fake: np.ndarray) -> Tensor:
    if nets.variant == "classifier":
        return bce_with_logits(disc_logits(nets.D, real), 1.0) + bce_with_logits(disc_logits(nets.D, fake), 0.0)
    # energy-based margin loss: low energy on real, at least `margin` on fake
    e_real = autoencoder_forward(nets.D, real).energy
    e_fake = autoencoder_forward(nets.D, fake).energy
    return mean(e_real) + mean(relu(cfg.ae_margin - e_fake))


def _gen_adv_loss(nets: GanNets, fake: Tensor) -> Tensor:
    if nets.variant == "classifier":
        return bce_with_logits(disc_logits(nets.D, fake), 1.0)
    return mean(autoencoder_forward(nets.D, fake).energy)


Regularizer = Callable[[Tensor], "tuple[Tensor | None, float, float]"]


def _adversarial_step(cfg: TrainConfig, nets: GanNets, x_batch: np.ndarray, rng: Rng,
                      regularizer: Regularizer | None = None) -> StepReport:
    x_batch = np.asarray(x_batch, dtype=np.float64)
    n = len(x_batch)
    z = rng.uniform((n, cfg.latent_dim), -1.0, 1.0)
    fake = generator_forward(nets.G, z).data
    loss_d = _disc_loss(nets, cfg, x_batch, fake)
    _update(nets.D, nets.opt_D, loss_d, cfg)

    z = rng.uniform((n, cfg.latent_dim), -1.0, 1.0)
    fake = generator_forward(nets.G, z)
    loss_adv = _gen_adv_loss(nets, fake)
    total, k_hi, k_lo = loss_adv, 0.0, 0.0
    if regularizer is not None:
        term, k_hi, k_lo = regularizer(fake)
        if term is not None:
            total = loss_adv + term
    _update(nets.G, nets.opt_G, total, cfg)
    return StepReport(loss_d.item(), loss_adv.item(), k_hi, k_lo, 0.0)


def gan_step(cfg: TrainConfig, nets: GanNets, x_batch, rng: Rng) -> StepReport:
    return _adversarial_step(cfg, nets, x_batch, rng)


def knn_targets(cfg: TrainConfig, f: np.ndarray, fs: FeatureSet, tree: BallTree,
                tracker: UtilizationTracker, rng: Rng) -> np.ndarray:
    """Per-row regression targets: mean of k selected stored features."""
    if cfg.k > fs.M:
        raise ValueError(f"k={cfg.k} exceeds the {fs.M} stored target features")
    if cfg.knn_mode == "nearest":
        hits = knn_query_batch(tree, f, cfg.k, cfg.threads)
        selections = [[i for i, _ in h] for h in hits]
    else:
        selections = [rng.sample_without_replacement(fs.M, cfg.k) for _ in range(len(f))]
    for sel in selections:
        tracker.record(sel)
    return np.stack([mean_of(fs, sel) for sel in selections])


def knn_term(cfg: TrainConfig, f_hi: Tensor, f_lo: Tensor, t_hi: np.ndarray, t_lo: np.ndarray):
    """Weighted batch-mean squared distance to fixed targets, per layer."""
    hi = mean(squared_l2(f_hi, Tensor(t_hi))) * cfg.mu_hi
    lo = mean(squared_l2(f_lo, Tensor(t_lo))) * cfg.mu_lo
    return hi + lo, hi.item(), lo.item()


def kgan_step(cfg: TrainConfig, nets: GanNets, x_batch, targets: KnnTargets, rng: Rng) -> StepReport:
    """GAN step whose generator loss carries the KNN feature-matching term."""
    if nets.C is None:
        raise ValueError("kgan_step needs a comparator network")

    def regularize(fake: Tensor):
        feats = comparator_features(nets.C, fake)
        t_hi = knn_targets(cfg, feats.f_hi.data, targets.fs_hi, targets.tree_hi, targets.tracker_hi, rng)
        t_lo = knn_targets(cfg, feats.f_lo.data, targets.fs_lo, targets.tree_lo, targets.tracker_lo, rng)
        return knn_term(cfg, feats.f_hi, feats.f_lo, t_hi, t_lo)

    report = _adversarial_step(cfg, nets, x_batch, rng, regularize)
    report.utilization = targets.utilization()
    return report


# --------------------------------------------------------------- CycleGAN

def make_cycle(cfg: TrainConfig, x_dim: int, y_dim: int, seed: int | None = None) -> CycleNets:
    from .models import MlpSpec

    seed = cfg.seed if seed is None else seed
    spec_a = MlpSpec.uniform([x_dim] + [cfg.hidden] * cfg.layers + [y_dim], output="tanh")
    spec_b = MlpSpec.uniform([y_dim] + [cfg.hidden] * cfg.layers + [x_dim], output="tanh")
    return CycleNets(
        init_params(spec_a, seed * 4 + 1, "A", "translator"),
        init_params(spec_b, seed * 4 + 2, "B", "translator"),
        init_params(classifier_disc_spec(x_dim, cfg.hidden, cfg.layers), seed * 4 + 3, "DX", "classifier"),
        init_params(classifier_disc_spec(y_dim, cfg.hidden, cfg.layers), seed * 4 + 4, "DY", "classifier"),
    )


def cycle_loss(nets: CycleNets, x, y) -> Tensor:
    """E|B(A(x)) - x|_1 + E|A(B(y)) - y|_1."""
    x, y = Tensor(np.asarray(x, dtype=np.float64)), Tensor(np.asarray(y, dtype=np.float64))
    back_x = translator_forward(nets.B, translator_forward(nets.A, x))
    back_y = translator_forward(nets.A, translator_forward(nets.B, y))
    return mean(l1(back_x, x)) + mean(l1(back_y, y))


def cyclegan_step(cfg: TrainConfig, nets: CycleNets, x_batch, y_batch, rng: Rng | None = None) -> StepReport:
    x = np.asarray(x_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    fake_y = translator_forward(nets.A, x).data
    fake_x = translator_forward(nets.B, y).data
    loss_dy = bce_with_logits(disc_logits(nets.DY, y), 1.0) + bce_with_logits(disc_logits(nets.DY, fake_y), 0.0)
    loss_dx = bce_with_logits(disc_logits(nets.DX, x), 1.0) + bce_with_logits(disc_logits(nets.DX, fake_x), 0.0)
    _update(nets.DY, nets.opt_DY, loss_dy, cfg)
    _update(nets.DX, nets.opt_DX, loss_dx, cfg)

    xt, yt = Tensor(x), Tensor(y)
    ax = translator_forward(nets.A, xt)
    by = translator_forward(nets.B, yt)
    adv = bce_with_logits(disc_logits(nets.DY, ax), 1.0) + bce_with_logits(disc_logits(nets.DX, by), 1.0)
    cyc = mean(l1(translator_forward(nets.B, ax), xt)) + mean(l1(translator_forward(nets.A, by), yt))
    loss = adv + cyc * cfg.lambda_cyc
    params = {**{f"A:{k}": t for k, t in nets.A.trainable().items()},
              **{f"B:{k}": t for k, t in nets.B.trainable().items()}}
    grads = grad(loss, params)
    for net, opt in ((nets.A, nets.opt_A), (nets.B, nets.opt_B)):
        pre = f"{net.name}:"
        g = clip_global_norm({k[len(pre):]: v for k, v in grads.items() if k.startswith(pre)},
                             cfg.clip_norm, net.name)
        adam_update(opt, net.trainable(), g, cfg)
    return StepReport(loss_dx.item() + loss_dy.item(), adv.item(), 0.0, 0.0, cyc.item())


# ------------------------------------------------------------------ loops

def draw_batch(rng: Rng, data: np.ndarray, batch: int) -> np.ndarray:
    return data[rng.integers(len(data), batch)]


class DatasetSampler:
    """Batches drawn with replacement from a fixed data set."""

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.dim = self.data.shape[1]

    def __call__(self, rng: Rng, batch: int) -> np.ndarray:
        return draw_batch(rng, self.data, batch)


class GeneratorSampler:
    """Batches G(z) with z ~ U[-1, 1]^d."""

    def __init__(self, G: NetworkParams):
        self.G = G
        self.dim = G.out_dim

    def __call__(self, rng: Rng, batch: int) -> np.ndarray:
        z = rng.uniform((batch, self.G.in_dim), -1.0, 1.0)
        return generator_forward(self.G, z).data


def train_translator(cfg: TrainConfig, nets: CycleNets, x_source, y_set: np.ndarray,
                     steps: int | None = None, rng: Rng | None = None,
                     on_step: Callable[[int, StepReport], None] | None = None) -> CycleNets:
    """Run ``steps`` cyclegan steps; x batches come from ``x_source(rng, batch)``."""
    steps = cfg.steps if steps is None else steps
    rng = Rng(cfg.seed) if rng is None else rng
    if getattr(x_source, "dim", nets.A.in_dim) != nets.A.in_dim:
        raise ValueError(f"sampler emits dimension {x_source.dim}, translator expects {nets.A.in_dim}")
    y_set = np.asarray(y_set, dtype=np.float64)
    for step in range(steps):
        x = x_source(rng, cfg.batch)
        y = draw_batch(rng, y_set, cfg.batch)
        report = cyclegan_step(cfg, nets, x, y, rng)
        if on_step:
            on_step(step, report)
    return nets


def fine_tune_translator(cfg: TrainConfig, nets: CycleNets, sampler, y_set: np.ndarray,
                         steps: int | None = None, rng: Rng | None = None, on_step=None) -> CycleNets:
    """Continue translator training with x drawn from a first-stage sampler.

    ``sampler`` is a trained generator (NetworkParams) or any callable
    ``(rng, batch) -> array``.
    """
    if isinstance(sampler, NetworkParams):
        sampler = GeneratorSampler(sampler)
    return train_translator(cfg, nets, sampler, y_set, steps, rng, on_step)


@dataclass
class TrainResult:
    nets: GanNets
    log: list[dict]
    targets: KnnTargets | None = None

    @property
    def utilization(self) -> float | None:
        return None if self.targets is None else self.targets.utilization()


def build_targets(C: NetworkParams, y_set: np.ndarray, leaf_size: int = 16) -> KnnTargets:
    feats = comparator_features(C, np.asarray(y_set, dtype=np.float64))
    return KnnTargets.from_features(feats.f_lo.data, feats.f_hi.data, leaf_size)


def train_loop(cfg: TrainConfig, x_set: np.ndarray, y_set: np.ndarray | None = None,
               comparator: NetworkParams | None = None, nets: GanNets | None = None,
               on_step: Callable[[int, GanNets, StepReport], None] | None = None) -> TrainResult:
    """Train a sampling GAN; a pure function of (cfg, data, comparator)."""
    x_set = np.asarray(x_set, dtype=np.float64)
    train_set = x_set
    if cfg.mix_datasets:
        if y_set is None:
            raise ValueError("mix_datasets needs a Y set")
        train_set = np.concatenate([x_set, np.asarray(y_set, dtype=np.float64)])
    nets = make_gan(cfg, x_set.shape[1]) if nets is None else nets
    regularized = cfg.mu_hi > 0 or cfg.mu_lo > 0 or cfg.knn_mode == "random"
    targets = None
    if regularized:
        if y_set is None:
            raise ValueError("K-GAN training needs a Y set")
        if nets.C is None:
            nets.C = comparator if comparator is not None else make_comparator(
                x_set.shape[1], cfg.comparator_seed, cfg.s_lo, cfg.s_hi, gain=cfg.comparator_gain)
        targets = build_targets(nets.C, y_set, cfg.leaf_size)
    rng = Rng(cfg.seed)
    rows = []
    for step in range(cfg.steps):
        x = draw_batch(rng, train_set, cfg.batch)
        if targets is None:
            report = gan_step(cfg, nets, x, rng)
        else:
            report = kgan_step(cfg, nets, x, targets, rng)
        rows.append({"step": step, **{f.name: getattr(report, f.name) for f in fields(report)}})
        if on_step:
            on_step(step, nets, report)
    if targets is not None:
        log.info("final utilization card(chi)/M = %.4f", targets.utilization())
    return TrainResult(nets, rows, targets)


# ------------------------------------------------------- proxy classifier

def pretrain_comparator(cfg: TrainConfig, class_sets: list[np.ndarray], steps: int = 400,
                        seed: int | None = None) -> NetworkParams:
    """Train the comparator MLP plus a class head to tell ``class_sets`` apart.

    Class ``i`` is the i-th array.  The result carries trainable tensors;
    freeze it before using its hidden layers as comparator features.
    """
    if len(class_sets) < 2:
        raise ValueError("need at least two classes")
    sets = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in class_sets]
    dim = sets[0].shape[1]
    if any(s.shape[1] != dim for s in sets):
        raise ValueError("class sets differ in dimension")
    seed = cfg.comparator_seed if seed is None else seed
    C = make_comparator(dim, seed, cfg.s_lo, cfg.s_hi, n_classes=len(sets), gain=1.0)
    opt = AdamState()
    rng = Rng(seed).spawn(7)
    per_class = max(1, cfg.batch // len(sets))
    labels = np.repeat(np.arange(len(sets)), per_class)
    for _ in range(steps):
        x = np.concatenate([draw_batch(rng, s, per_class) for s in sets])
        _update(C, opt, softmax_cross_entropy(mlp_forward(C, x), labels), cfg)
    return C
