"""Regularized Conv+GRU gesture autoencoder.

The subpackage is organised as:

- :mod:`objectives` — latent-space losses (KL, WAE, approximate MRR) and
  the composite training loss, in plain NumPy with analytic gradients;
- :mod:`nets` — the torch encoder/decoder/auth-head modules;
- :mod:`bridge` — autograd glue exposing the NumPy reconstruction losses
  (and torch mirrors of the latent losses) to the training loop;
- :mod:`train` — the Adam training loop with early stopping;
- :mod:`checkpoint` — binary model serialization plus training-curve
  sidecars.
"""

from .objectives import (
    LATENT_DIM,
    REGULARIZERS,
    LatentDistribution,
    LatentLossValue,
    LossWeights,
    TotalLossValue,
    approx_mrr_loss,
    hard_mrr,
    kl_loss,
    total_loss,
    wae_loss,
)
from .nets import (
    ArchConfig,
    ConvGruClassifier,
    GestureAutoencoder,
    decode_latent,
    encode_batch,
    encode_window,
    reparameterize,
)
from .train import EpochRecord, TrainConfig, TrainResult, train, validation_indices
from .checkpoint import load_curves, load_model, save_model

__all__ = [
    "LATENT_DIM",
    "REGULARIZERS",
    "ArchConfig",
    "ConvGruClassifier",
    "EpochRecord",
    "GestureAutoencoder",
    "LatentDistribution",
    "LatentLossValue",
    "LossWeights",
    "TotalLossValue",
    "TrainConfig",
    "TrainResult",
    "approx_mrr_loss",
    "decode_latent",
    "encode_batch",
    "encode_window",
    "hard_mrr",
    "kl_loss",
    "load_curves",
    "load_model",
    "reparameterize",
    "save_model",
    "total_loss",
    "train",
    "validation_indices",
    "wae_loss",
]
