"""Alternating three-network training: discriminator step, generator step
with the encoder held fixed, then encoder step with the generator held
fixed.  Also owns stratified selection of the few labeled real anchors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor
from .data import ImageBatch
from .errors import ContractError, TrainingDiverged, ValidationError
from .evaluation import ClusterReport, evaluate
from .latent import LatentBatch, sample_latent
from .losses import (LossWeights, content_loss, contrastive_loss, d_loss,
                     g_loss, total_g_loss)
from .models import (ModelBundle, discriminator_forward, encoder_forward,
                     generator_forward, save_checkpoint)


@dataclass
class TrainConfig:
    """Every scalar the training procedure exposes."""

    d_z: int = 2
    k: int = 3
    d_f: int = 8
    sigma: float = 1.0
    pi: Optional[Sequence[float]] = None
    # weights tuned for the desk-scale shape datasets; see docs/calibration.md
    weights: LossWeights = field(
        default_factory=lambda: LossWeights(beta1=5.0, beta2=0.05, tau=0.2))
    batch_g: int = 64
    batch_d: int = 64
    batch_e: int = 192
    steps: int = 16000
    label_fraction: float = 0.0      # 0 disables real labeled anchors
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    hidden: Sequence[int] = (128, 128)
    g_mode: str = "non_saturating"
    normalize_f: bool = True
    d_updates: int = 1
    snapshot_interval: int = 4000
    eval_runs: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 0 or self.batch_g < 1 or self.batch_d < 1 or self.batch_e < 1:
            raise ValidationError("steps must be >= 0 and batch sizes >= 1")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ValidationError(
                f"label_fraction must be in [0, 1], got {self.label_fraction}")
        if self.weights.beta1 > 0 and self.batch_e < 2 * self.k:
            raise ValidationError(
                f"batch_e must be >= 2*k={2 * self.k} when the contrastive "
                f"loss is active, got {self.batch_e}")
        if self.d_updates < 0:
            raise ValidationError("d_updates must be >= 0")


@dataclass
class AnchorSet:
    """Real labeled images acting as fixed contrastive reference points."""

    images: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.images.shape[0]


@dataclass
class StepRecord:
    step: int
    d_loss: float
    g_gan: float
    l_c: float
    l_z: float
    total: float


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)
    snapshots: list[tuple[int, ClusterReport]] = field(default_factory=list)

    CSV_HEADER = "step,d_loss,g_gan,l_c,l_z,total,acc,nmi,ari"

    def to_csv(self) -> str:
        by_step = {step: report for step, report in self.snapshots}
        lines = [self.CSV_HEADER]
        for r in self.records:
            row = [str(r.step)] + [repr(v) for v in
                                   (r.d_loss, r.g_gan, r.l_c, r.l_z, r.total)]
            report = by_step.get(r.step)
            if report is None:
                row += ["", "", ""]
            else:
                row += [repr(report.acc), repr(report.nmi), repr(report.ari)]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


@dataclass
class Optimizers:
    """One Adam per network; set a slot to None to freeze that network."""

    g: Optional[AdamState]
    d: Optional[AdamState]
    e: Optional[AdamState]

    @classmethod
    def for_bundle(cls, bundle: ModelBundle, cfg: TrainConfig) -> "Optimizers":
        def make(params):
            return AdamState(params, lr=cfg.lr, beta1=cfg.adam_beta1,
                             beta2=cfg.adam_beta2)
        return cls(g=make(bundle.g_params), d=make(bundle.d_params),
                   e=make(bundle.e_params))


def select_anchor_set(dataset: ImageBatch, fraction: float,
                      rng: np.random.Generator) -> AnchorSet:
    """Stratified sample: ceil(fraction * n_class) images from every class."""
    if dataset.labels is None:
        raise ContractError("anchor selection needs a labeled dataset")
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    images, labels = [], []
    for label in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == label)
        take = math.ceil(fraction * members.size)
        picked = rng.choice(members, size=take, replace=False)
        images.append(dataset.images[np.sort(picked)])
        labels.append(np.full(take, label, dtype=np.int64))
    return AnchorSet(images=np.concatenate(images),
                     labels=np.concatenate(labels))


def _anchor_features(bundle: ModelBundle, anchors: Optional[AnchorSet]):
    if anchors is None or anchors.n == 0:
        return None
    out = encoder_forward(bundle, Tensor(anchors.images))
    return (out.f, anchors.labels)


def g_objective(bundle: ModelBundle, latents: LatentBatch,
                cfg: TrainConfig) -> dict:
    """Total generator objective and its pieces on the current tape.

    The generator's contrastive term runs on the generated batch alone;
    labeled anchors only enter the encoder update. Chasing fixed real
    features from the generator side destabilizes training.
    """
    w = cfg.weights
    images = generator_forward(bundle, latents)
    gan = g_loss(discriminator_forward(bundle, images), cfg.g_mode)
    if w.beta1 > 0 or w.beta2 > 0:
        enc = encoder_forward(bundle, images)
        l_c = contrastive_loss(enc.f, latents.c_index, w.tau)
        l_z = content_loss(Tensor(latents.z), enc.e)
        total = total_g_loss(gan, l_c, l_z, w)
    else:
        l_c = Tensor(0.0)
        l_z = Tensor(0.0)
        total = gan
    return {"total": total, "gan": gan, "l_c": l_c, "l_z": l_z}


def e_objective(bundle: ModelBundle, latents: LatentBatch, images: Tensor,
                anchors: Optional[AnchorSet], cfg: TrainConfig) -> dict:
    """Encoder objective on fixed images (the generator stays out of the tape)."""
    w = cfg.weights
    enc = encoder_forward(bundle, images)
    l_c = contrastive_loss(enc.f, latents.c_index, w.tau,
                           anchors=_anchor_features(bundle, anchors))
    l_z = content_loss(Tensor(latents.z), enc.e)
    total = ad.add(ad.multiply(l_c, w.beta1), ad.multiply(l_z, w.beta2))
    return {"total": total, "l_c": l_c, "l_z": l_z}


def _check_finite(term: str, value: float, step: int) -> float:
    if not math.isfinite(value):
        raise TrainingDiverged(term, step, value)
    return value


def train_step(bundle: ModelBundle, opts: Optimizers, real_batch: np.ndarray,
               anchors: Optional[AnchorSet], cfg: TrainConfig,
               rng: np.random.Generator, step: int = 0) -> StepRecord:
    """One alternating update: D, then G with E fixed, then E with G fixed."""
    w = cfg.weights

    d_value = 0.0
    for _ in range(cfg.d_updates):
        latents = sample_latent(cfg.batch_d, cfg.d_z, cfg.k, cfg.sigma, cfg.pi, rng)
        fake = generator_forward(bundle, latents)  # tape-free: D sees constants
        with Tape() as tape:
            loss = d_loss(discriminator_forward(bundle, Tensor(real_batch)),
                          discriminator_forward(bundle, fake))
            d_value = _check_finite("d_loss", loss.item(), step)
            tape.backward(loss)
        if opts.d is not None:
            opts.d.step()

    latents = sample_latent(cfg.batch_g, cfg.d_z, cfg.k, cfg.sigma, cfg.pi, rng)
    with Tape() as tape:
        parts = g_objective(bundle, latents, cfg)
        record = StepRecord(
            step=step,
            d_loss=d_value,
            g_gan=_check_finite("g_gan_loss", parts["gan"].item(), step),
            l_c=_check_finite("contrastive_loss", parts["l_c"].item(), step),
            l_z=_check_finite("content_loss", parts["l_z"].item(), step),
            total=_check_finite("total_g_loss", parts["total"].item(), step),
        )
        tape.backward(parts["total"])
    if opts.g is not None:
        opts.g.step()

    if w.beta1 > 0 or w.beta2 > 0:
        latents_e = sample_latent(cfg.batch_e, cfg.d_z, cfg.k, cfg.sigma, cfg.pi, rng)
        fake_e = generator_forward(bundle, latents_e)  # tape-free: G stays fixed
        with Tape() as tape:
            parts_e = e_objective(bundle, latents_e, fake_e, anchors, cfg)
            _check_finite("encoder_loss", parts_e["total"].item(), step)
            tape.backward(parts_e["total"])
        if opts.e is not None:
            opts.e.step()

    return record


def train(data: ImageBatch, cfg: TrainConfig,
          eval_data: Optional[ImageBatch] = None,
          checkpoint_dir=None,
          on_step: Optional[Callable[[int, int], None]] = None,
          on_snapshot: Optional[Callable[[int, ModelBundle, ClusterReport], None]] = None
          ) -> tuple[ModelBundle, TrainHistory]:
    """Run cfg.steps alternating updates; snapshot the clustering report
    every cfg.snapshot_interval steps when eval_data is given."""
    cfg.validate()
    if data.n == 0:
        raise ContractError("training dataset is empty")

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng = np.random.default_rng(seeds[0])
    step_rng = np.random.default_rng(seeds[1])
    anchor_rng = np.random.default_rng(seeds[2])
    eval_rng = np.random.default_rng(seeds[3])

    bundle = ModelBundle.build(
        p=data.pixels, d_z=cfg.d_z, k=cfg.k, d_f=cfg.d_f,
        hidden=cfg.hidden, normalize_f=cfg.normalize_f, rng=init_rng)
    opts = Optimizers.for_bundle(bundle, cfg)

    anchors = None
    if cfg.label_fraction > 0:
        if data.labels is not None and cfg.label_fraction * data.n < cfg.k:
            raise ValidationError(
                f"label_fraction {cfg.label_fraction} yields fewer than "
                f"{cfg.k} anchors on {data.n} samples")
        anchors = select_anchor_set(data, cfg.label_fraction, anchor_rng)

    history = TrainHistory()
    for step in range(1, cfg.steps + 1):
        idx = step_rng.choice(data.n, size=min(cfg.batch_d, data.n), replace=False)
        record = train_step(bundle, opts, data.images[idx], anchors, cfg,
                            step_rng, step=step)
        history.records.append(record)

        at_snapshot = cfg.snapshot_interval > 0 and step % cfg.snapshot_interval == 0
        if (at_snapshot or step == cfg.steps) and eval_data is not None \
                and eval_data.labels is not None:
            report = evaluate(bundle, eval_data.images, eval_data.labels,
                              k=cfg.k, runs=cfg.eval_runs, rng=eval_rng)
            if not history.snapshots or history.snapshots[-1][0] != step:
                history.snapshots.append((step, report))
                if on_snapshot is not None:
                    on_snapshot(step, bundle, report)
            if checkpoint_dir is not None:
                save_checkpoint(bundle, Path(checkpoint_dir) / f"checkpoint_{step}.ckpt")
        if on_step is not None:
            on_step(step, cfg.steps)

    return bundle, history
