"""Wideband massive-MIMO covariance identification from sparse-ruler training."""

from . import chest, channel, harness, ident, kernels, rulers
from .channel import ArrayConfig, ChannelParams, CovarianceSet
from .ident import IdentResult
from .rulers import Ruler

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig",
    "ChannelParams",
    "CovarianceSet",
    "IdentResult",
    "Ruler",
    "channel",
    "chest",
    "harness",
    "ident",
    "kernels",
    "rulers",
]
