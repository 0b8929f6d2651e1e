"""Contrastive masked image/gene-sentence pretraining for spatial
transcriptomics, at desk scale."""

__version__ = "0.1.0"

from .autodiff import Tensor, compute_gradients  # noqa: F401
from .errors import ContractViolation, InputMismatch, NumericError, UnknownTokenError  # noqa: F401
