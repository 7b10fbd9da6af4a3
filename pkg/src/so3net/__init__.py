"""SO(3) harmonic analysis and rotation-equivariant networks for fields on the sphere."""

from .errors import (
    BandLimitError,
    ConfigError,
    FileFormatError,
    GridMismatchError,
    NonFiniteLossError,
    OrderMismatchError,
    So3NetError,
)
from .signals import EulerGrid, QuadratureGrid, SpatialSignalSO3, SpectralSignal, SphereField
from .so3fft import FftPlan, ft_direct, ft_fast, ift_direct, ift_fast
from .spectral_ops import Filter, conv_left, cov_right, pool, rotate_spectral, smooth, unpool
from .wigner import wigner_D, wigner_d, wigner_delta
from .nn import ConvLayer, TrainConfig, UNetModel, train

__version__ = "0.1.0"

__all__ = [
    "BandLimitError",
    "ConfigError",
    "ConvLayer",
    "EulerGrid",
    "FftPlan",
    "FileFormatError",
    "Filter",
    "GridMismatchError",
    "NonFiniteLossError",
    "OrderMismatchError",
    "QuadratureGrid",
    "So3NetError",
    "SpatialSignalSO3",
    "SpectralSignal",
    "SphereField",
    "TrainConfig",
    "UNetModel",
    "conv_left",
    "cov_right",
    "ft_direct",
    "ft_fast",
    "ift_direct",
    "ift_fast",
    "pool",
    "rotate_spectral",
    "smooth",
    "train",
    "unpool",
    "wigner_D",
    "wigner_d",
    "wigner_delta",
]
