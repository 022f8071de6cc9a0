"""Desk-scale ultrasound full waveform inversion with untrained-network priors."""

from .errors import (
    ArchitectureError,
    ConfigError,
    GeometryError,
    NumericError,
    StabilityError,
    UnnFwiError,
    UsageError,
)
from .model import (
    AcquisitionGeometry,
    Grid2D,
    ShotGather,
    SimParams,
    SoundSpeedField,
    Wavelet,
    build_ring_geometry,
    max_stable_dt,
    ricker_wavelet,
)

__version__ = "0.1.0"
