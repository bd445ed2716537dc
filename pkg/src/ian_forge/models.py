"""MLP networks: generator, discriminators, translators and the comparator."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numcore import ACTIVATIONS, Rng, Tensor, as_tensor, l1, linear, mean, sigmoid

ACTIVATION_CODES = {"linear": 0, "tanh": 1, "sigmoid": 2, "leaky_relu": 3, "relu": 4}
KINDS = ("generator", "classifier", "autoencoder", "translator", "comparator")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        acts = tuple(self.activations)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"need >= 2 positive layer widths, got {widths}")
        if len(acts) != len(widths) - 1:
            raise ValueError(f"{len(widths) - 1} activations expected, got {len(acts)}")
        unknown = set(acts) - set(ACTIVATIONS)
        if unknown:
            raise ValueError(f"unknown activations {sorted(unknown)}")

    @classmethod
    def uniform(cls, widths, hidden: str = "leaky_relu", output: str = "linear") -> "MlpSpec":
        n = len(widths) - 1
        return cls(tuple(widths), (hidden,) * (n - 1) + (output,))

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]


@dataclass
class NetworkParams:
    """Named tensors for one network.

    ``parts`` maps a sub-network name to its spec; tensors are keyed
    ``"<part>.<layer>.W"`` / ``"<part>.<layer>.b"``.  Plain MLPs use the
    single part ``"net"``; autoencoder discriminators use ``"enc"`` and
    ``"dec"``.
    """

    name: str
    kind: str
    parts: dict[str, MlpSpec]
    tensors: dict[str, Tensor] = field(default_factory=dict)
    seed: int = 0
    feature_layers: tuple[int, ...] = ()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.tensors.items() if t.requires_grad}

    def freeze(self) -> "NetworkParams":
        for t in self.tensors.values():
            t.requires_grad = False
        return self

    def copy(self) -> "NetworkParams":
        tensors = {k: Tensor(t.data.copy(), t.requires_grad) for k, t in self.tensors.items()}
        return NetworkParams(self.name, self.kind, dict(self.parts), tensors, self.seed,
                             self.feature_layers)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.tensors):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.tensors[k].data).tobytes())
        return h.hexdigest()

    @property
    def in_dim(self) -> int:
        return self.parts["enc" if "enc" in self.parts else "net"].n_in

    @property
    def out_dim(self) -> int:
        return self.parts["dec" if "dec" in self.parts else "net"].n_out


def init_params(spec: MlpSpec | dict[str, MlpSpec], seed: int, name: str = "net",
                kind: str = "generator", feature_layers: tuple[int, ...] = ()) -> NetworkParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    if kind not in KINDS:
        raise ValueError(f"unknown network kind {kind!r}")
    parts = spec if isinstance(spec, dict) else {"net": spec}
    rng = Rng(seed)
    tensors: dict[str, Tensor] = {}
    for part, s in parts.items():
        for i, (fan_in, fan_out) in enumerate(zip(s.widths[:-1], s.widths[1:])):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[f"{part}.{i}.W"] = Tensor(rng.uniform((fan_in, fan_out), -a, a), True)
            tensors[f"{part}.{i}.b"] = Tensor(np.zeros(fan_out), True)
    return NetworkParams(name, kind, dict(parts), tensors, seed, tuple(feature_layers))


def mlp_forward(params: NetworkParams, x, part: str = "net", keep_hidden: bool = False):
    spec = params.parts[part]
    h = as_tensor(x)
    if h.data.ndim == 1:
        h = Tensor(h.data[None, :]) if not h.requires_grad else _unsqueeze(h)
    if h.shape[-1] != spec.n_in:
        raise ValueError(f"{params.name}/{part}: input width {h.shape[-1]}, expected {spec.n_in}")
    hidden = []
    for i, act in enumerate(spec.activations):
        h = ACTIVATIONS[act](linear(h, params.tensors[f"{part}.{i}.W"], params.tensors[f"{part}.{i}.b"]))
        hidden.append(h)
    return (h, hidden) if keep_hidden else h


def _unsqueeze(t: Tensor) -> Tensor:
    return Tensor(t.data[None, :], True, op="reshape", parents=(t,),
                  backward=lambda g: (g.reshape(t.shape),))


# ---------------------------------------------------------------- networks

def generator_spec(latent_dim: int, data_dim: int, hidden: int = 64, layers: int = 2) -> MlpSpec:
    return MlpSpec.uniform([latent_dim] + [hidden] * layers + [data_dim], output="tanh")


def classifier_disc_spec(data_dim: int, hidden: int = 64, layers: int = 2) -> MlpSpec:
    return MlpSpec.uniform([data_dim] + [hidden] * layers + [1], output="linear")


def autoencoder_disc_specs(data_dim: int, code_dim: int, hidden: int = 64) -> dict[str, MlpSpec]:
    return {
        "enc": MlpSpec.uniform([data_dim, hidden, code_dim], output="tanh"),
        "dec": MlpSpec.uniform([code_dim, hidden, data_dim], output="tanh"),
    }


def comparator_spec(data_dim: int, s_lo: int = 32, s_hi: int = 16, n_classes: int = 0) -> MlpSpec:
    widths = [data_dim, s_lo, s_hi] + ([n_classes] if n_classes else [])
    acts = ["leaky_relu", "leaky_relu"] + (["linear"] if n_classes else [])
    return MlpSpec(tuple(widths), tuple(acts))


def make_comparator(data_dim: int, seed: int, s_lo: int = 32, s_hi: int = 16,
                    n_classes: int = 0, gain: float = 5.0) -> NetworkParams:
    """Seeded random-weight comparator; frozen unless it has a class head.

    Hidden layers are bias-free leaky-ReLU maps, hence positively
    homogeneous: ``gain`` multiplies every weight matrix, scaling the two
    feature layers by gain and gain**2 without changing their neighbour
    structure.
    """
    C = init_params(comparator_spec(data_dim, s_lo, s_hi, n_classes), seed, "C", "comparator",
                    feature_layers=(0, 1))
    for name, t in C.tensors.items():
        if name.endswith(".W"):
            t.data *= gain
    return C.freeze() if not n_classes else C


def generator_forward(params: NetworkParams, z) -> Tensor:
    """Map latent rows to data space (tanh-bounded)."""
    return mlp_forward(params, z)


def disc_logits(params: NetworkParams, x) -> Tensor:
    """Raw classifier logits, shape (batch,)."""
    out = mlp_forward(params, x)
    return _flatten_col(out)


def _flatten_col(t: Tensor) -> Tensor:
    return Tensor(t.data[:, 0], t.requires_grad, op="reshape", parents=(t,),
                  backward=lambda g: (g.reshape(t.shape),))


@dataclass
class AutoencoderOutput:
    energy: Tensor          # per-sample mean |x - dec(enc(x))|
    code: Tensor
    reconstruction: Tensor


def autoencoder_forward(params: NetworkParams, x) -> AutoencoderOutput:
    x = as_tensor(x)
    code = mlp_forward(params, x, "enc")
    rec = mlp_forward(params, code, "dec")
    xr = x if x.data.ndim == 2 else Tensor(x.data[None, :])
    energy = mean_rows(l1(rec, xr), xr.shape[1])
    return AutoencoderOutput(energy, code, rec)


def mean_rows(row_sums: Tensor, width: int) -> Tensor:
    return row_sums * (1.0 / width)


def discriminator_forward(params: NetworkParams, x, variant: str = "classifier"):
    """Classifier: probability in (0, 1).  Autoencoder: AutoencoderOutput."""
    if variant == "classifier":
        if params.kind != "classifier":
            raise ValueError(f"{params.name} is a {params.kind}, not a classifier discriminator")
        return sigmoid(disc_logits(params, x))
    if variant == "autoencoder":
        if "enc" not in params.parts:
            raise ValueError(f"{params.name} has no encoder/decoder")
        return autoencoder_forward(params, x)
    raise ValueError(f"unknown discriminator variant {variant!r}")


@dataclass
class ComparatorFeatures:
    f_lo: Tensor
    f_hi: Tensor


def comparator_features(C: NetworkParams, x) -> ComparatorFeatures:
    """Activations of the comparator's two designated hidden layers.

    Comparator weights must be frozen; gradients still flow into ``x``.
    """
    if any(t.requires_grad for t in C.tensors.values()):
        raise ValueError("comparator parameters must be frozen")
    _, hidden = mlp_forward(C, x, keep_hidden=True)
    lo, hi = C.feature_layers
    return ComparatorFeatures(hidden[lo], hidden[hi])


def translator_forward(params: NetworkParams, x) -> Tensor:
    return mlp_forward(params, x)


def identity_translator(dim: int, name: str = "A") -> NetworkParams:
    """Single linear layer initialised to the exact identity map."""
    p = init_params(MlpSpec((dim, dim), ("linear",)), 0, name, "translator")
    p.tensors["net.0.W"].data[...] = np.eye(dim)
    return p
