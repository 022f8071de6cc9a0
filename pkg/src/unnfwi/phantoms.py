"""Procedural numerical phantoms and grid resampling.

Layouts are described in metres relative to the grid centre, so one
phantom description rasterises consistently on grids of any resolution.
Only the per-pixel fat texture depends on the grid (it is drawn i.i.d.).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Grid2D, SoundSpeedField

WATER = 1480.0
TISSUE_SPEEDS = {
    "water": WATER,
    "skin": 1650.0,
    "fat": 1480.0,
    "gland": 1580.0,
    "vessel": 1600.0,
    "tumor": 1630.0,
}
FAT_RANGE = (1470.0, 1490.0)


@dataclass(frozen=True)
class Ellipse:
    label: str
    center: tuple[float, float]  # metres, relative to the grid centre
    axes: tuple[float, float]  # semi-axes [m]
    angle: float = 0.0  # degrees

    def contains(self, x, y):
        t = np.deg2rad(self.angle)
        dx, dy = x - self.center[0], y - self.center[1]
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        return (u / self.axes[0]) ** 2 + (v / self.axes[1]) ** 2 <= 1.0

    def reach(self) -> float:
        return float(np.hypot(*self.center) + max(self.axes))


@dataclass(frozen=True)
class PhantomSpec:
    """Primitives painted in order over a background, with a tissue speed table."""

    primitives: tuple[Ellipse, ...]
    speeds: dict = field(default_factory=lambda: dict(TISSUE_SPEEDS))
    background: str = "water"
    fat_sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        for p in self.primitives:
            if p.label not in self.speeds:
                raise ValueError(f"no speed for tissue label {p.label!r}")
        if self.background not in self.speeds:
            raise ValueError(f"no speed for background {self.background!r}")


GLAND_AXES = (0.62, 0.45)


def breast_layout(radius: float, skin: float, gland_axes: tuple[float, float] = GLAND_AXES) -> tuple[Ellipse, ...]:
    """Default breast slice scaled to an outer radius ``radius`` [m].

    ``gland_axes`` are the gland semi-axes as fractions of ``radius``.
    """
    r = radius
    return (
        Ellipse("skin", (0.0, 0.0), (r, 0.92 * r)),
        Ellipse("fat", (0.0, 0.0), (r - skin, 0.92 * r - skin)),
        Ellipse("gland", (0.06 * r, -0.04 * r), (gland_axes[0] * r, gland_axes[1] * r), 25.0),
        Ellipse("vessel", (-0.55 * r, 0.38 * r), (0.08 * r, 0.08 * r)),
        Ellipse("vessel", (0.45 * r, 0.5 * r), (0.07 * r, 0.07 * r)),
        Ellipse("tumor", (-0.18 * r, -0.2 * r), (0.15 * r, 0.15 * r)),
    )


def render(spec: PhantomSpec, grid: Grid2D) -> SoundSpeedField:
    half = min(grid.extent) / 2
    for p in spec.primitives:
        if p.reach() > 0.8 * half * 1.0000001:
            raise ValueError(f"primitive {p.label} reaches {p.reach():.4g} m, beyond 80% of the domain half-width")
    x, y = grid.coords()
    x = x - grid.center[0]
    y = y - grid.center[1]
    c = np.full(grid.shape, spec.speeds[spec.background], dtype=np.float64)
    labels = np.full(grid.shape, spec.background, dtype=object)
    for p in spec.primitives:
        inside = p.contains(x, y)
        c[inside] = spec.speeds[p.label]
        labels[inside] = p.label
    fat = labels == "fat"
    if np.any(fat) and spec.fat_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        noise = spec.speeds["fat"] + spec.fat_sigma * rng.standard_normal(grid.shape)
        c[fat] = np.clip(noise, *FAT_RANGE)[fat]
    return SoundSpeedField(grid, c)


def make_breast_phantom(grid: Grid2D, seed: int = 0, radius: float | None = None,
                        skin: float | None = None, fat_sigma: float = 3.0,
                        gland_axes: tuple[float, float] = GLAND_AXES) -> SoundSpeedField:
    """Breast slice with water, skin, textured fat, gland, vessels and a tumour.

    ``radius`` defaults to 40% of the domain half-width; the skin is at
    least two grid cells thick.
    """
    half = min(grid.extent) / 2
    if radius is None:
        radius = 0.4 * half
    if skin is None:
        skin = max(2 * grid.dx, 0.06 * radius)
    if skin >= radius:
        raise ValueError("skin thicker than the breast radius")
    spec = PhantomSpec(breast_layout(radius, skin, gland_axes), fat_sigma=fat_sigma, seed=seed)
    return render(spec, grid)


def tumor_center(radius: float) -> tuple[float, float]:
    """Position of the tumour disk of :func:`breast_layout` (relative to the centre)."""
    return (-0.18 * radius, -0.2 * radius)


def make_bump_phantom(grid: Grid2D, amplitude: float = 0.01, width: float | None = None,
                      background: float = WATER) -> SoundSpeedField:
    """Smooth Gaussian bump of relative height ``amplitude`` on a homogeneous background."""
    if width is None:
        width = 0.15 * min(grid.extent) / 2
    x, y = grid.coords()
    r2 = (x - grid.center[0]) ** 2 + (y - grid.center[1]) ** 2
    return SoundSpeedField(grid, background * (1 + amplitude * np.exp(-r2 / (2 * width**2))))


def make_phantom_analog(grid: Grid2D, radius: float | None = None) -> SoundSpeedField:
    """Elliptical 1540 m/s phantom in water with a small 1580 m/s inclusion."""
    half = min(grid.extent) / 2
    r = 0.45 * half if radius is None else radius
    inclusion = max(1.5e-3, 2 * grid.dx)  # 3 mm diameter, at least a few cells
    speeds = {"water": WATER, "body": 1540.0, "inclusion": 1580.0}
    spec = PhantomSpec(
        (Ellipse("body", (0.0, 0.0), (r, 0.8 * r)), Ellipse("inclusion", (0.3 * r, 0.1 * r), (inclusion, inclusion))),
        speeds=speeds,
        fat_sigma=0.0,
    )
    return render(spec, grid)


def make_disk_phantom(grid: Grid2D, radius: float, speed: float, background: float = WATER) -> SoundSpeedField:
    """Centred disk; exactly symmetric under 180-degree rotation of the grid."""
    i = np.arange(grid.nx) - (grid.nx - 1) / 2
    j = np.arange(grid.ny) - (grid.ny - 1) / 2
    r2 = (i[:, None] ** 2 + j[None, :] ** 2) * grid.dx**2
    return SoundSpeedField(grid, np.where(r2 <= radius**2, speed, background))


def resample_field(field: SoundSpeedField, target: Grid2D) -> SoundSpeedField:
    """Bilinear interpolation onto ``target``, which must span the same region."""
    src = field.grid
    tol = 1e-9 * max(src.extent)
    if (
        abs(src.origin[0] - target.origin[0]) > tol
        or abs(src.origin[1] - target.origin[1]) > tol
        or abs(src.extent[0] - target.extent[0]) > tol
        or abs(src.extent[1] - target.extent[1]) > tol
    ):
        raise ValueError(f"grid extents differ: source {src.extent} at {src.origin}, target {target.extent} at {target.origin}")
    if src == target:
        return SoundSpeedField(target, field.c.copy())
    x, y = target.coords()
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    ix, iy, w = src.bilinear(pts)
    vals = np.sum(field.c[ix, iy] * w, axis=1)
    return SoundSpeedField(target, vals.reshape(target.shape))
