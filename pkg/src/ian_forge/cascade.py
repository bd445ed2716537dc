"""Sampler -> translator cascades and latent traversal across domains."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import NetworkParams, generator_forward, mlp_forward, translator_forward


@dataclass
class IanPipeline:
    sampler: NetworkParams
    translator: NetworkParams
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sampler.out_dim != self.translator.in_dim:
            raise ValueError(
                f"sampler emits dimension {self.sampler.out_dim}, "
                f"translator expects {self.translator.in_dim}"
            )

    @property
    def latent_dim(self) -> int:
        return self.sampler.in_dim


def ian_sample(pipe: IanPipeline, z) -> np.ndarray:
    """A(G(z)) for a single latent vector or a batch of rows."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if z2.shape[1] != pipe.latent_dim:
        raise ValueError(f"latent has dimension {z2.shape[1]}, sampler expects {pipe.latent_dim}")
    out = translator_forward(pipe.translator, generator_forward(pipe.sampler, z2)).data
    return out[0] if single else out


@dataclass
class TraversalPlan:
    x_a: np.ndarray
    x_b: np.ndarray
    n_points: int
    translators: list[NetworkParams] = field(default_factory=list)

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("a traversal needs at least 2 points")


def convex_codes(z_a: np.ndarray, z_b: np.ndarray, n: int) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) / (n - 1)
    return (1.0 - t)[:, None] * z_a[None, :] + t[:, None] * z_b[None, :]


def manifold_traverse(plan: TraversalPlan, ae_disc: NetworkParams) -> np.ndarray:
    """Grid of shape (1 + #translators, N, data_dim).

    Row 0 decodes the convex combinations of the two encoded endpoints; row
    j > 0 is translator j applied to row 0.
    """
    if "enc" not in ae_disc.parts or "dec" not in ae_disc.parts:
        raise ValueError(f"{ae_disc.name} is not an autoencoder discriminator")
    ends = np.stack([np.asarray(plan.x_a, dtype=np.float64), np.asarray(plan.x_b, dtype=np.float64)])
    codes = mlp_forward(ae_disc, ends, "enc").data
    z = convex_codes(codes[0], codes[1], plan.n_points)
    decoded = mlp_forward(ae_disc, z, "dec").data
    rows = [decoded] + [translator_forward(tr, decoded).data for tr in plan.translators]
    return np.stack(rows)
