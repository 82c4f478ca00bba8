"""Structured latent input: continuous content codes paired with a
categorical class factor, plus the positive/negative bookkeeping the
contrastive objective needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError


@dataclass
class LatentBatch:
    """Paired content codes and one-hot class factors for one minibatch."""

    z: np.ndarray            # N x D_z, float32, draws from N(0, sigma^2 I)
    c_index: np.ndarray      # N ints in [0, K)
    c_onehot: np.ndarray     # N x K, 0/1 float32
    sigma: float             # spread the z rows were drawn with
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def k(self) -> int:
        return self.c_onehot.shape[1]


def _onehot(c_index: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((c_index.shape[0], k), dtype=np.float32)
    out[np.arange(c_index.shape[0]), c_index] = 1.0
    return out


def sample_latent(n: int, d_z: int, k: int, sigma: float,
                  pi: Optional[np.ndarray], rng: np.random.Generator,
                  seed: Optional[int] = None) -> LatentBatch:
    """Draw n independent (z, c) pairs: z ~ N(0, sigma^2 I), c ~ multinomial(pi)."""
    if n < 1 or d_z < 1 or k < 2:
        raise ValidationError(f"need n >= 1, d_z >= 1, k >= 2; got {n}, {d_z}, {k}")
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    if pi is None:
        pi = np.full(k, 1.0 / k)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (k,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValidationError("pi must be a length-k probability vector")
    z = (sigma * rng.standard_normal((n, d_z))).astype(np.float32)
    c_index = rng.choice(k, size=n, p=pi)
    return LatentBatch(z=z, c_index=c_index, c_onehot=_onehot(c_index, k),
                       sigma=float(sigma), seed=seed)


def resample_positive(latent: LatentBatch, rng: np.random.Generator) -> LatentBatch:
    """Same class factors, fresh content codes: the canonical positive pair."""
    z = (latent.sigma * rng.standard_normal(latent.z.shape)).astype(np.float32)
    return LatentBatch(z=z, c_index=latent.c_index.copy(),
                       c_onehot=latent.c_onehot.copy(), sigma=latent.sigma)


def positive_mask(c_index: np.ndarray,
                  anchor_labels: Optional[np.ndarray] = None,
                  k: Optional[int] = None) -> np.ndarray:
    """0/1 matrix marking, for each of N samples, which of the N generated
    samples plus M real anchors share its class (self excluded).

    Rows index the N samples; columns 0..N-1 are the samples themselves and
    columns N.. are the anchors.  Pass k to validate the label range.
    """
    c_index = np.asarray(c_index)
    n = c_index.shape[0]
    labels = c_index
    if anchor_labels is not None:
        labels = np.concatenate([c_index, np.asarray(anchor_labels)])
    if labels.size and (labels.min() < 0 or (k is not None and labels.max() >= k)):
        raise ValidationError(
            f"labels must lie in [0, {k if k is not None else '...'}), "
            f"got range [{labels.min()}, {labels.max()}]")
    mask = (c_index[:, None] == labels[None, :]).astype(np.uint8)
    mask[np.arange(n), np.arange(n)] = 0
    return mask
