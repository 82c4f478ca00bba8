"""Objective terms: adversarial losses for D and G, the multi-positive
contrastive loss over class-related features (with optional real labeled
anchors), the content-consistency loss, and their weighted combination.

All functions build on the autodiff op set, so calling them under an
active tape yields exact gradients; calling them tape-free just evaluates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DegenerateBatchError, ShapeError, ValidationError
from .latent import positive_mask

NEG_INF_FILL = -1e9  # similarity assigned to masked-out pairs before the softmax


@dataclass
class LossWeights:
    """Trade-off weights for the combined generator objective."""

    beta1: float = 50.0    # contrastive term
    beta2: float = 0.0005  # content-consistency term
    tau: float = 0.07      # contrastive temperature

    def __post_init__(self):
        if not (math.isfinite(self.beta1) and self.beta1 >= 0):
            raise ValidationError(f"beta1 must be finite and >= 0, got {self.beta1}")
        if not (math.isfinite(self.beta2) and self.beta2 >= 0):
            raise ValidationError(f"beta2 must be finite and >= 0, got {self.beta2}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValidationError(f"tau must be finite and > 0, got {self.tau}")


def d_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Binary cross-entropy pushing sigma(real) -> 1 and sigma(fake) -> 0.

    Computed as mean softplus(-real) + mean softplus(fake); never negative.
    """
    for name, t in (("real", real_logits), ("fake", fake_logits)):
        if t.values.size == 0:
            raise ContractError(f"d_loss: empty {name} batch")
    return ad.add(ad.mean(ad.softplus(ad.multiply(real_logits, -1.0))),
                  ad.mean(ad.softplus(fake_logits)))


def g_loss(fake_logits: Tensor, mode: str = "non_saturating") -> Tensor:
    """Generator adversarial loss.

    non_saturating: -mean log sigma(fake), the standard strong-gradient form.
    minimax:         mean log(1 - sigma(fake)), the literal two-player form;
                     same fixed points, weaker gradients early in training.
    """
    if fake_logits.values.size == 0:
        raise ContractError("g_loss: empty batch")
    if mode == "non_saturating":
        return ad.mean(ad.softplus(ad.multiply(fake_logits, -1.0)))
    if mode == "minimax":
        # log(1 - sigma(x)) == -softplus(x)
        return ad.multiply(ad.mean(ad.softplus(fake_logits)), -1.0)
    raise ValidationError(f"unknown g_loss mode {mode!r}")


def _check_unit_rows(f: Tensor, what: str, tol: float = 1e-5) -> None:
    norms = np.linalg.norm(np.asarray(f.values, dtype=np.float64), axis=1)
    worst = float(np.abs(norms - 1.0).max()) if norms.size else 0.0
    if worst > tol:
        raise ValidationError(
            f"{what} rows must be unit-norm within {tol}, worst deviation {worst:.3g}")


def _similarities(f: Tensor, tau: float,
                  anchors: Optional[Tuple[Tensor, np.ndarray]]) -> Tuple[Tensor, int]:
    """Scaled similarity matrix of the batch against batch + anchors."""
    all_f = f
    m = 0
    if anchors is not None:
        anchor_f, anchor_labels = anchors
        if anchor_f.values.shape[1] != f.values.shape[1]:
            raise ShapeError(
                f"anchor feature dim {anchor_f.values.shape[1]} != {f.values.shape[1]}")
        if anchor_f.values.shape[0] != len(anchor_labels):
            raise ShapeError("anchor features and labels disagree in length")
        _check_unit_rows(anchor_f, "anchor feature")
        m = anchor_f.values.shape[0]
        all_f = ad.concatenate([f, anchor_f], axis=0)
    return ad.multiply(ad.matmul(f, all_f, transpose_b=True), 1.0 / tau), m


def contrastive_loss(f: Tensor, labels: np.ndarray, tau: float,
                     anchors: Optional[Tuple[Tensor, np.ndarray]] = None) -> Tensor:
    """Multi-positive contrastive loss over unit feature rows.

    Per sample i with positive set P(i) (same-class others, generated and
    anchor) and candidate set A(i) (all others):

        -(1/|P(i)|) sum_{p in P(i)} log softmax_over_A(i)(sim(i, p))

    averaged over samples that have at least one positive.  Samples without
    a positive still serve as negatives.  With a single positive each and
    the rest of the batch as negatives this is exactly the one-vs-rest
    softmax contrast.
    """
    if tau <= 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    _check_unit_rows(f, "feature")
    labels = np.asarray(labels)
    n = f.values.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")

    anchor_labels = None if anchors is None else np.asarray(anchors[1])
    pos = positive_mask(labels, anchor_labels).astype(f.values.dtype)
    p_counts = pos.sum(axis=1)
    valid = p_counts > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DegenerateBatchError(
            "contrastive batch degenerate: no sample has any positive")

    sims, m = _similarities(f, tau, anchors)
    self_mask = np.zeros((n, n + m), dtype=f.values.dtype)
    self_mask[np.arange(n), np.arange(n)] = NEG_INF_FILL
    log_denom = ad.log_sum_exp(ad.add(sims, Tensor(self_mask)), axis=1)

    inv_counts = np.where(valid, 1.0 / np.maximum(p_counts, 1.0), 0.0)
    pos_mean = ad.multiply(ad.sum_(ad.multiply(sims, Tensor(pos)), axis=1),
                           Tensor(inv_counts.astype(f.values.dtype)))
    per_sample = ad.subtract(log_denom, pos_mean)
    picked = ad.multiply(per_sample, Tensor(valid.astype(f.values.dtype)))
    return ad.multiply(ad.sum_(picked), 1.0 / n_valid)


def ideal_encoder_bound(f: Tensor, labels: np.ndarray, tau: float) -> Tensor:
    """Value the contrastive objective collapses to when every positive pair
    has identical features: mean_i log(e^{1/tau} + sum_neg e^{sim/tau}).

    Diagnostic for the uniformity pressure on cross-class features; equals
    contrastive_loss + 1/tau on single-positive batches with f == f+.
    """
    if tau <= 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    _check_unit_rows(f, "feature")
    labels = np.asarray(labels)
    n = f.values.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")

    sims, _ = _similarities(f, tau, None)
    neg = (labels[:, None] != labels[None, :]).astype(f.values.dtype)
    neg_mask = np.where(neg > 0, 0.0, NEG_INF_FILL).astype(f.values.dtype)
    masked = ad.add(sims, Tensor(neg_mask))
    pos_col = Tensor(np.full((n, 1), 1.0 / tau, dtype=f.values.dtype))
    return ad.mean(ad.log_sum_exp(ad.concatenate([masked, pos_col], axis=1), axis=1))


def content_loss(z: Tensor, e: Tensor) -> Tensor:
    """Mean squared L2 distance between drawn and recovered content codes."""
    if z.values.shape != e.values.shape:
        raise ShapeError(f"content_loss: shapes {z.values.shape} != {e.values.shape}")
    diff = ad.subtract(z, e)
    return ad.mean(ad.sum_(ad.multiply(diff, diff), axis=1))


def total_g_loss(l_gan: Tensor, l_c: Tensor, l_z: Tensor, w: LossWeights) -> Tensor:
    """l_gan + beta1 * l_c + beta2 * l_z."""
    return ad.add(ad.add(l_gan, ad.multiply(l_c, w.beta1)),
                  ad.multiply(l_z, w.beta2))
