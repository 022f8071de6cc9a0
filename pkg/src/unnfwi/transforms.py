"""Maps from the generator's (0, 1) image to a bounded sound-speed field.

Each transform returns the speed values together with the pointwise
derivative dc/dx, so callers can chain gradients without re-evaluating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpeedBand:
    c_min: float
    c_max: float

    def __post_init__(self):
        if not 0 < self.c_min < self.c_max:
            raise ValueError(f"invalid speed band [{self.c_min}, {self.c_max}]")

    @property
    def width(self) -> float:
        return self.c_max - self.c_min

    def normalize(self, c):
        """Inverse of the linear map: speeds to image units."""
        return (np.asarray(c, dtype=np.float64) - self.c_min) / self.width


def transform_linear(x, band: SpeedBand):
    """``c = (c_max - c_min) x + c_min``."""
    x = np.asarray(x, dtype=np.float64)
    c = band.width * x + band.c_min
    return c, np.full_like(x, band.width)


def transform_exp(x, band: SpeedBand):
    """``c = (c_max - c_min)**x + c_min``; its floor at ``x = 0`` is ``c_min + 1``."""
    if band.width <= 1:
        raise ValueError("exponential transform needs c_max - c_min > 1 to be increasing")
    x = np.asarray(x, dtype=np.float64)
    p = band.width**x
    return p + band.c_min, np.log(band.width) * p


def transform_inverse(c, band: SpeedBand, kind: str = "linear"):
    """Image values that map to ``c`` under the chosen transform."""
    c = np.asarray(c, dtype=np.float64)
    if kind == "linear":
        return band.normalize(c)
    if kind == "exp":
        return np.log(np.maximum(c - band.c_min, 1.0)) / np.log(band.width)
    raise ValueError(f"unknown transform {kind!r}")


TRANSFORMS = {"linear": transform_linear, "exp": transform_exp}


def get_transform(kind: str):
    try:
        return TRANSFORMS[kind]
    except KeyError:
        raise ValueError(f"unknown transform {kind!r}; choose from {sorted(TRANSFORMS)}") from None
