"""Explicit finite-difference solver for the 2D acoustic wave equation.

The scheme is second-order leapfrog in time with a 2nd- or 4th-order
Laplacian in space and a damped-wave absorbing sponge::

    (u+ - 2u + u-)/dt^2 + sigma (u+ - u-)/dt = c^2 (L u + f)

which is advanced as ``u+ = a (2u + dt^2 c^2 (L u + f)) - b u-`` with
``a = 1/(1 + sigma dt)`` and ``b = (1 - sigma dt)/(1 + sigma dt)``. Values
outside the grid are zero, so ``L`` is a symmetric operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericError
from .model import (
    AcquisitionGeometry,
    Grid2D,
    ShotGather,
    SimParams,
    SoundSpeedField,
    Wavelet,
    check_cfl,
)

MIN_POINTS_PER_WAVELENGTH = 5.0


def laplacian(u: np.ndarray, dx: float, order: int = 4) -> np.ndarray:
    """Discrete Laplacian over the last two axes, zero outside the array."""
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    u = np.asarray(u, dtype=np.float64)
    h = 2
    pad = [(0, 0)] * (u.ndim - 2) + [(h, h), (h, h)]
    p = np.pad(u, pad)
    nx, ny = u.shape[-2:]

    def sh(di, dj):
        return p[..., h + di:h + di + nx, h + dj:h + dj + ny]

    if order == 2:
        out = sh(1, 0) + sh(-1, 0) + sh(0, 1) + sh(0, -1) - 4.0 * u
    else:
        out = (
            -5.0 * u
            + (4.0 / 3.0) * (sh(1, 0) + sh(-1, 0) + sh(0, 1) + sh(0, -1))
            - (1.0 / 12.0) * (sh(2, 0) + sh(-2, 0) + sh(0, 2) + sh(0, -2))
        )
    return out / dx**2


def sponge_profile(grid: Grid2D, width: int, strength: float) -> np.ndarray:
    """Cerjan taper ``exp(-(strength*d)^2)``, ``d`` = cells into the sponge."""
    def dist(n):
        i = np.arange(n)
        return np.maximum(np.maximum(width - i, i - (n - 1 - width)), 0).astype(float)

    dxx = dist(grid.nx)[:, None]
    dyy = dist(grid.ny)[None, :]
    return np.exp(-(strength**2) * (dxx**2 + dyy**2))


def sponge_coefficients(grid: Grid2D, sim: SimParams) -> tuple[np.ndarray, np.ndarray]:
    """Leapfrog coefficients ``(a, b)`` of the damped update.

    The taper ``S`` is used as ``a = S`` directly, which fixes
    ``sigma dt = 1/S - 1`` and therefore ``b = 2S - 1``.
    """
    s = sponge_profile(grid, sim.sponge_width, sim.sponge_strength)
    return s, 2.0 * s - 1.0


def points_per_wavelength(c_min: float, f_peak: float, dx: float) -> float:
    return c_min / (f_peak * dx)


@dataclass
class Propagation:
    """Raw output of one batched propagation."""

    traces: np.ndarray  # (n_shots, n_transducers, nt)
    q_store: np.ndarray | None = None
    u_store: np.ndarray | None = None


class _Operators:
    """Precomputed per-(field, geometry, sim) arrays shared by forward and adjoint."""

    def __init__(self, field: SoundSpeedField, geom: AcquisitionGeometry, sim: SimParams):
        grid = field.grid
        self.grid = grid
        self.sim = sim
        self.m = np.ascontiguousarray(sim.dt**2 * field.c**2)
        self.a, self.b = sponge_coefficients(grid, sim)
        self.inv_dx2 = 1.0 / grid.dx**2
        self.tix, self.tiy, self.tw = grid.bilinear(geom.transducers)


def _wavelet_matrix(wavelet: Wavelet, sim: SimParams, n_shots: int) -> np.ndarray:
    if abs(wavelet.dt - sim.dt) > 1e-9 * sim.dt:
        raise ValueError(f"wavelet dt {wavelet.dt:g} differs from simulation dt {sim.dt:g}")
    w = np.zeros(sim.nt)
    n = min(sim.nt, wavelet.nt)
    w[:n] = wavelet.samples[:n]
    return np.ascontiguousarray(np.broadcast_to(w, (n_shots, sim.nt)))


def propagate(
    field: SoundSpeedField,
    geom: AcquisitionGeometry,
    emitters,
    wavelet: Wavelet,
    sim: SimParams,
    store_q: bool = False,
    store_u: bool = False,
    _ops: _Operators | None = None,
) -> Propagation:
    """Simulate every emitter in ``emitters`` and sample all transducers."""
    check_cfl(field, sim)
    ppw = points_per_wavelength(field.c_min, wavelet.f_peak, field.grid.dx)
    if ppw < MIN_POINTS_PER_WAVELENGTH:
        warnings.warn(f"only {ppw:.2f} points per wavelength at f_peak", RuntimeWarning, stacklevel=2)
    ops = _ops or _Operators(field, geom, sim)
    grid = field.grid
    emitters = [int(e) for e in emitters]
    ns = len(emitters)
    src_ix = np.ascontiguousarray(ops.tix[emitters])
    src_iy = np.ascontiguousarray(ops.tiy[emitters])
    src_w = np.ascontiguousarray(ops.tw[emitters] * ops.inv_dx2)
    wav = _wavelet_matrix(wavelet, sim, ns)
    traces = np.zeros((ns, geom.n_transducers, sim.nt))
    q_store = np.zeros((ns, sim.nt - 1, grid.nx, grid.ny)) if store_q else np.zeros((0, 0, 0, 0))
    u_store = np.zeros((ns, sim.nt, grid.nx, grid.ny)) if store_u else np.zeros((0, 0, 0, 0))
    bad = _kernels.forward_loop(
        ops.m, ops.a, ops.b, sim.stencil_order, ops.inv_dx2,
        src_ix, src_iy, src_w, wav,
        ops.tix, ops.tiy, ops.tw, traces, q_store, u_store,
    )
    if bad >= 0:
        raise NumericError(f"non-finite wavefield at time step {bad + 1}", step=bad + 1)
    return Propagation(traces, q_store if store_q else None, u_store if store_u else None)


def _to_gathers(prop: Propagation, geom: AcquisitionGeometry, emitters, dt: float) -> list[ShotGather]:
    out = []
    for k, e in enumerate(emitters):
        recv = geom.receivers_of(e)
        out.append(ShotGather(e, prop.traces[k][list(recv)], dt, recv))
    return out


def simulate_shot(
    field: SoundSpeedField,
    geom: AcquisitionGeometry,
    emitter: int,
    wavelet: Wavelet,
    sim: SimParams,
) -> ShotGather:
    """Receiver traces for a single transmitting event."""
    if emitter not in geom.emitter_indices:
        raise ValueError(f"transducer {emitter} is not an emitter of this geometry")
    prop = propagate(field, geom, [emitter], wavelet, sim)
    return _to_gathers(prop, geom, [emitter], sim.dt)[0]


def simulate_survey(
    field: SoundSpeedField,
    geom: AcquisitionGeometry,
    wavelet: Wavelet,
    sim: SimParams,
) -> list[ShotGather]:
    """One gather per emitter, in ``geom.emitter_indices`` order.

    Shots are independent; they are evaluated in one batched call and the
    result does not depend on their order.
    """
    emitters = list(geom.emitter_indices)
    try:
        prop = propagate(field, geom, emitters, wavelet, sim)
    except NumericError as exc:
        raise NumericError(f"{exc} (survey over emitters {emitters})", step=exc.step) from exc
    return _to_gathers(prop, geom, emitters, sim.dt)


def discrete_energy(u_prev: np.ndarray, u_curr: np.ndarray, c: np.ndarray, dx: float, dt: float, order: int = 4) -> np.ndarray:
    """Energy conserved exactly by the undamped leapfrog scheme.

    ``E = sum (1/c^2) ((u_curr - u_prev)/dt)^2 - sum u_curr * L u_prev``;
    positive under the CFL bound. Works on stacked leading axes.
    """
    v = (u_curr - u_prev) / dt
    kin = np.sum(v**2 / c**2, axis=(-2, -1))
    pot = -np.sum(u_curr * laplacian(u_prev, dx, order), axis=(-2, -1))
    return kin + pot


def _windowed_sinc_kernel(x: np.ndarray, half_width: int) -> np.ndarray:
    win = np.where(np.abs(x) < half_width, 0.5 * (1 + np.cos(np.pi * x / half_width)), 0.0)
    return np.sinc(x) * win


def resample_traces(traces: np.ndarray, dt_in: float, dt_out: float, nt_out: int, half_width: int = 16) -> np.ndarray:
    """Hann-windowed sinc interpolation of traces from ``dt_in`` to ``dt_out``.

    When downsampling the sinc is stretched to the output Nyquist so the
    interpolation also acts as an anti-alias filter.
    """
    traces = np.asarray(traces, dtype=np.float64)
    nt_in = traces.shape[-1]
    ratio = min(1.0, dt_in / dt_out)  # bandwidth as a fraction of the input Nyquist
    t_out = np.arange(nt_out) * dt_out / dt_in  # in input-sample units
    reach = int(np.ceil(half_width / ratio))
    base = np.floor(t_out).astype(int)
    offs = np.arange(-reach + 1, reach + 1)
    idx = base[:, None] + offs[None, :]
    x = (t_out[:, None] - idx) * ratio
    kern = ratio * _windowed_sinc_kernel(x, half_width)
    valid = (idx >= 0) & (idx < nt_in)
    kern = np.where(valid, kern, 0.0)
    idx = np.clip(idx, 0, nt_in - 1)
    return np.einsum("...tk,tk->...t", traces[..., idx], kern)


def resample_gathers(gathers: list[ShotGather], dt_out: float, nt_out: int) -> list[ShotGather]:
    return [
        ShotGather(g.emitter_index, resample_traces(g.traces, g.dt, dt_out, nt_out), dt_out, g.receiver_indices)
        for g in gathers
    ]
