"""cdgan-lab: a desk-scale laboratory for contrastive disentanglement GANs.

Train a generator, discriminator, and contrastive encoder on synthetic
image datasets with a small tape-based autodiff core, then score how well
the encoder's features separate the discrete latent factor by clustering.
"""

__version__ = "0.1.0"

from .autodiff import AdamState, Tape, Tensor, backward
from .data import ImageBatch, gen_shapes, load_idx, save_idx, split
from .errors import (CdganError, ContractError, DegenerateBatchError,
                     FormatError, ShapeError, TrainingDiverged,
                     ValidationError)
from .evaluation import (ClusterReport, ari, clustering_accuracy, evaluate,
                         kmeans, nmi, uniformity_diagnostic)
from .latent import (LatentBatch, positive_mask, resample_positive,
                     sample_latent)
from .losses import (LossWeights, content_loss, contrastive_loss, d_loss,
                     g_loss, ideal_encoder_bound, total_g_loss)
from .models import (ModelBundle, discriminator_forward, encoder_forward,
                     generator_forward, load_checkpoint, save_checkpoint)
from .train import (AnchorSet, TrainConfig, TrainHistory, select_anchor_set,
                    train, train_step)

__all__ = [
    "AdamState", "Tape", "Tensor", "backward",
    "ImageBatch", "gen_shapes", "load_idx", "save_idx", "split",
    "CdganError", "ContractError", "DegenerateBatchError", "FormatError",
    "ShapeError", "TrainingDiverged", "ValidationError",
    "ClusterReport", "ari", "clustering_accuracy", "evaluate", "kmeans",
    "nmi", "uniformity_diagnostic",
    "LatentBatch", "positive_mask", "resample_positive", "sample_latent",
    "LossWeights", "content_loss", "contrastive_loss", "d_loss", "g_loss",
    "ideal_encoder_bound", "total_g_loss",
    "ModelBundle", "discriminator_forward", "encoder_forward",
    "generator_forward", "load_checkpoint", "save_checkpoint",
    "AnchorSet", "TrainConfig", "TrainHistory", "select_anchor_set",
    "train", "train_step",
    "__version__",
]
