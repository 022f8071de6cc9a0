"""Shared data model: grids, speed fields, ring geometry, wavelets and gathers.

Array convention: a field ``c`` has shape ``(nx, ny)`` and ``c[i, j]`` is the
value at ``x = x0 + i*dx``, ``y = y0 + j*dx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, StabilityError

#: CFL constant of the 2nd-order-in-space leapfrog scheme (exact limit).
CFL_ORDER2 = 1.0
#: CFL constant for the 4th-order Laplacian. The exact limit is sqrt(3/4) ~ 0.866
#: (largest stencil eigenvalue 32/3 instead of 8); 0.857 keeps a small margin.
CFL_ORDER4 = 0.857


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    dx: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise ValueError(f"grid must be at least 16x16, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.nx - 1) * self.dx, (self.ny - 1) * self.dx)

    @property
    def center(self) -> tuple[float, float]:
        ex, ey = self.extent
        return (self.origin[0] + ex / 2, self.origin[1] + ey / 2)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of node coordinates, each of shape ``(nx, ny)``."""
        x = self.origin[0] + self.dx * np.arange(self.nx)
        y = self.origin[1] + self.dx * np.arange(self.ny)
        return np.meshgrid(x, y, indexing="ij")

    @classmethod
    def square(cls, n: int, side: float, center=(0.0, 0.0)) -> "Grid2D":
        """``n x n`` grid whose node span is ``side`` metres, centred on ``center``."""
        dx = side / (n - 1)
        return cls(n, n, dx, (center[0] - side / 2, center[1] - side / 2))

    def to_index(self, points) -> np.ndarray:
        """Fractional grid indices of physical points, shape ``(n, 2)``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (p - np.asarray(self.origin)) / self.dx

    def bilinear(self, points):
        """Bilinear stencil of each point.

        Returns integer corner indices ``ix, iy`` of shape ``(n, 4)`` and the
        matching weights ``w`` of shape ``(n, 4)``, corners ordered
        (0,0), (1,0), (0,1), (1,1).
        """
        fi = self.to_index(points)
        i0 = np.floor(fi[:, 0]).astype(int)
        j0 = np.floor(fi[:, 1]).astype(int)
        i0 = np.clip(i0, 0, self.nx - 2)
        j0 = np.clip(j0, 0, self.ny - 2)
        tx = fi[:, 0] - i0
        ty = fi[:, 1] - j0
        ix = np.stack([i0, i0 + 1, i0, i0 + 1], axis=1)
        iy = np.stack([j0, j0, j0 + 1, j0 + 1], axis=1)
        w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=1)
        return ix, iy, w


@dataclass(frozen=True, eq=False)
class SoundSpeedField:
    grid: Grid2D
    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64)
        if c.shape != self.grid.shape:
            raise ValueError(f"field shape {c.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise ValueError("sound speed must be finite and strictly positive")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @classmethod
    def homogeneous(cls, grid: Grid2D, speed: float) -> "SoundSpeedField":
        return cls(grid, np.full(grid.shape, float(speed)))

    @property
    def c_max(self) -> float:
        return float(self.c.max())

    @property
    def c_min(self) -> float:
        return float(self.c.min())

    def with_values(self, c) -> "SoundSpeedField":
        return SoundSpeedField(self.grid, c)


@dataclass(frozen=True, eq=False)
class AcquisitionGeometry:
    """Ring array: transducer positions, emitters and per-emitter receiver lists."""

    transducers: np.ndarray
    emitter_indices: tuple[int, ...]
    receiver_indices: tuple[tuple[int, ...], ...]
    ring_radius: float
    ring_center: tuple[float, float]

    def __post_init__(self):
        n = len(self.transducers)
        for e, recv in zip(self.emitter_indices, self.receiver_indices):
            if not 0 <= e < n:
                raise ValueError(f"emitter index {e} out of range")
            if e in recv:
                raise ValueError(f"receiver list of emitter {e} contains the emitter")

    @property
    def n_transducers(self) -> int:
        return len(self.transducers)

    @property
    def n_emitters(self) -> int:
        return len(self.emitter_indices)

    def receiver_mask(self, emitter: int) -> np.ndarray:
        k = self.emitter_indices.index(emitter)
        mask = np.zeros(self.n_transducers, dtype=bool)
        mask[list(self.receiver_indices[k])] = True
        return mask

    def receivers_of(self, emitter: int) -> tuple[int, ...]:
        return self.receiver_indices[self.emitter_indices.index(emitter)]

    def subset(self, emitters) -> "AcquisitionGeometry":
        emitters = tuple(int(e) for e in emitters)
        recv = tuple(self.receivers_of(e) for e in emitters)
        return AcquisitionGeometry(self.transducers, emitters, recv, self.ring_radius, self.ring_center)

    def check_fits(self, grid: Grid2D, sponge_width: int = 0):
        """Raise :class:`GeometryError` unless every transducer stencil avoids the sponge."""
        fi = grid.to_index(self.transducers)
        lo = sponge_width
        hi_x = grid.nx - 1 - sponge_width
        hi_y = grid.ny - 1 - sponge_width
        # the bilinear stencil touches floor(i) and floor(i)+1
        ok = (
            (np.floor(fi[:, 0]) >= lo)
            & (np.floor(fi[:, 0]) + 1 <= hi_x)
            & (np.floor(fi[:, 1]) >= lo)
            & (np.floor(fi[:, 1]) + 1 <= hi_y)
        )
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise GeometryError(
                f"transducer {bad} at {tuple(self.transducers[bad])} lies in or beyond the "
                f"sponge region (width {sponge_width} cells)"
            )

    def to_dict(self) -> dict:
        return {
            "n_transducers": self.n_transducers,
            "emitters": list(self.emitter_indices),
            "ring_radius": self.ring_radius,
            "ring_center": list(self.ring_center),
        }


def build_ring_geometry(
    n_transducers: int,
    n_emitters: int,
    radius: float,
    center,
    grid: Grid2D,
    sponge_width: int = 0,
    exclude_nearest: int = 0,
) -> AcquisitionGeometry:
    """Place ``n_transducers`` uniformly on a circle and pick uniformly spaced emitters.

    Transducer ``k`` sits at angle ``2*pi*k/n_transducers``. Each emitter
    records on every other transducer except itself and, optionally, its
    ``exclude_nearest`` closest neighbours.
    """
    if n_emitters > n_transducers:
        raise ValueError(f"n_emitters ({n_emitters}) exceeds n_transducers ({n_transducers})")
    if n_emitters < 1 or n_transducers % n_emitters:
        raise ValueError("n_emitters must divide n_transducers evenly")
    if radius <= 0:
        raise ValueError("ring radius must be positive")
    cx, cy = float(center[0]), float(center[1])
    angles = 2 * np.pi * np.arange(n_transducers) / n_transducers
    pos = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], axis=1)
    pos.setflags(write=False)
    stride = n_transducers // n_emitters
    emitters = tuple(range(0, n_transducers, stride))
    receivers = []
    for e in emitters:
        # ring distance in index units
        d = np.abs((np.arange(n_transducers) - e + n_transducers // 2) % n_transducers - n_transducers // 2)
        keep = d > exclude_nearest
        keep[e] = False
        receivers.append(tuple(int(i) for i in np.flatnonzero(keep)))
    geom = AcquisitionGeometry(pos, emitters, tuple(receivers), float(radius), (cx, cy))
    geom.check_fits(grid, sponge_width)
    return geom


@dataclass(frozen=True, eq=False)
class Wavelet:
    samples: np.ndarray
    dt: float
    f_peak: float

    @property
    def nt(self) -> int:
        return len(self.samples)

    def scaled(self, factor: float) -> "Wavelet":
        return Wavelet(self.samples * factor, self.dt, self.f_peak)


def ricker_wavelet(f_peak: float, dt: float, nt: int, delay: float | None = None) -> Wavelet:
    """Ricker wavelet ``(1 - 2 pi^2 f^2 s^2) exp(-pi^2 f^2 s^2)``, ``s = t - t0``.

    The default delay ``t0 = 1.5 / f_peak`` makes the startup amplitude negligible.
    """
    if not f_peak > 0:
        raise ValueError("f_peak must be positive")
    if not dt < 1 / (10 * f_peak):
        raise ValueError(f"wavelet undersampled: dt={dt:g} must be < 1/(10 f_peak) = {1 / (10 * f_peak):g}")
    t0 = 1.5 / f_peak if delay is None else delay
    s = np.arange(nt) * dt - t0
    a = (np.pi * f_peak * s) ** 2
    w = (1 - 2 * a) * np.exp(-a)
    w.setflags(write=False)
    return Wavelet(w, float(dt), float(f_peak))


@dataclass(frozen=True, eq=False)
class ShotGather:
    emitter_index: int
    traces: np.ndarray
    dt: float
    receiver_indices: tuple[int, ...]

    def __post_init__(self):
        tr = np.asarray(self.traces, dtype=np.float64)
        if tr.ndim != 2 or tr.shape[0] != len(self.receiver_indices):
            raise ValueError(
                f"traces shape {tr.shape} does not match {len(self.receiver_indices)} receivers"
            )
        if not np.all(np.isfinite(tr)):
            raise ValueError("gather contains non-finite values")
        object.__setattr__(self, "traces", tr)
        object.__setattr__(self, "receiver_indices", tuple(int(r) for r in self.receiver_indices))

    @property
    def nt(self) -> int:
        return self.traces.shape[1]

    @property
    def n_receivers(self) -> int:
        return self.traces.shape[0]

    def with_traces(self, traces) -> "ShotGather":
        return ShotGather(self.emitter_index, traces, self.dt, self.receiver_indices)


@dataclass(frozen=True)
class SimParams:
    nt: int
    dt: float
    sponge_width: float = 30  # cells, may be fractional
    sponge_strength: float = 0.015
    stencil_order: int = 4

    def __post_init__(self):
        if self.nt < 2:
            raise ValueError("nt must be at least 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sponge_width < 0:
            raise ValueError("sponge_width must be >= 0")
        if self.stencil_order not in (2, 4):
            raise ValueError(f"stencil_order must be 2 or 4, got {self.stencil_order}")

    @property
    def duration(self) -> float:
        return (self.nt - 1) * self.dt


def cfl_constant(stencil_order: int) -> float:
    if stencil_order == 2:
        return CFL_ORDER2
    if stencil_order == 4:
        return CFL_ORDER4
    raise ValueError(f"stencil_order must be 2 or 4, got {stencil_order}")


def max_stable_dt(field: SoundSpeedField | float, stencil_order: int = 4, dx: float | None = None) -> float:
    """Largest stable leapfrog time step, ``CFL * dx / (c_max * sqrt(2))``.

    ``field`` may also be a bare maximum speed, in which case ``dx`` is required.
    """
    if isinstance(field, SoundSpeedField):
        c_max, dx = field.c_max, field.grid.dx
    else:
        if dx is None:
            raise ValueError("dx is required when passing a bare speed")
        c_max = float(field)
    return cfl_constant(stencil_order) * dx / (c_max * math.sqrt(2.0))


def check_cfl(field: SoundSpeedField, sim: SimParams):
    dt_max = max_stable_dt(field, sim.stencil_order)
    if sim.dt > dt_max:
        raise StabilityError(
            f"dt={sim.dt:.6g} s exceeds the stable limit {dt_max:.6g} s "
            f"(c_max={field.c_max:.1f} m/s, dx={field.grid.dx:.4g} m, order {sim.stencil_order})"
        )
