"""Synthetic IMU payment gestures for reducing biometric enrolment burden.

The package covers the full pipeline: dataset ingestion and preprocessing,
differentiable time-series losses, a regularized Conv+GRU autoencoder,
latent-space sampling strategies, a random-forest authenticator, biometric
evaluation metrics, and train-synthetic-test-real experiment harnesses.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, TrainingDivergedError, UserboostError

__all__ = [
    "ConfigError",
    "DataError",
    "TrainingDivergedError",
    "UserboostError",
    "__version__",
]
