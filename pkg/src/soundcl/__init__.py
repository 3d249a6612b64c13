"""Continual learning for sound classification: rehearsal buffers and
generative replay (convolutional autoencoder + latent Gaussian mixture)."""

from .tensor import Tensor, conv1d, conv1d_transpose
from .models import AutoencoderModel, ClassifierModel, VaeModel, param_count
from .experiment import ExperimentConfig, run_experiment, summarize

__version__ = "0.1.0"

__all__ = [
    "Tensor", "conv1d", "conv1d_transpose",
    "AutoencoderModel", "ClassifierModel", "VaeModel", "param_count",
    "ExperimentConfig", "run_experiment", "summarize",
    "__version__",
]
