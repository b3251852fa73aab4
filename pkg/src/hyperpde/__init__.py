"""Hypernetwork-generated physics-informed neural operators.

A main MLP solves a parametric PDE; per-layer hypernetworks map the task
sample to truncated Fourier spectra of the main network's weights, which
cuts the trainable parameter count and biases optimization toward the
low-frequency weight structure shared across tasks.
"""

__version__ = "0.1.0"

from .nets import ACTIVATIONS, Architecture, MainNetWeights, get_activation
from .hypernet import (ModelSpec, SpectralCodecConfig, WeightSpectrum,
                       parameter_count, spectrum_to_weights,
                       weights_to_spectrum)
from .training import TrainConfig, finetune, pretrain

__all__ = [
    "__version__", "ACTIVATIONS", "Architecture", "MainNetWeights",
    "get_activation", "ModelSpec", "SpectralCodecConfig", "WeightSpectrum",
    "parameter_count", "spectrum_to_weights", "weights_to_spectrum",
    "TrainConfig", "finetune", "pretrain",
]
