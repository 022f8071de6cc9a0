"""Least-squares misfit and its gradient with respect to the sound speed.

The gradient is the exact discrete adjoint of the leapfrog recurrence in
:mod:`unnfwi.wave`: residuals are injected at the receivers and propagated
backwards in time, and the adjoint field is correlated with the stored
``L u + f`` terms of the forward run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .model import AcquisitionGeometry, Grid2D, ShotGather, SimParams, SoundSpeedField, Wavelet
from .wave import _Operators, propagate


@dataclass(frozen=True, eq=False)
class MisfitReport:
    value: float
    per_shot: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientField:
    grid: Grid2D
    g: np.ndarray


def _check_pair(pred: list[ShotGather], obs: list[ShotGather]):
    if len(pred) != len(obs):
        raise ValueError(f"{len(pred)} predicted gathers vs {len(obs)} observed")
    for k, (p, o) in enumerate(zip(pred, obs)):
        if (
            p.emitter_index != o.emitter_index
            or p.receiver_indices != o.receiver_indices
            or p.traces.shape != o.traces.shape
            or abs(p.dt - o.dt) > 1e-9 * o.dt
        ):
            raise ValueError(
                f"shot {k} (emitter {o.emitter_index}) mismatch: pred emitter {p.emitter_index}, "
                f"shape {p.traces.shape} vs {o.traces.shape}, dt {p.dt:g} vs {o.dt:g}"
            )


def misfit_l2(pred: list[ShotGather], obs: list[ShotGather]) -> MisfitReport:
    """Sum of squared residuals over shots, receivers and samples."""
    _check_pair(pred, obs)
    per_shot = np.array([np.sum((p.traces - o.traces) ** 2) for p, o in zip(pred, obs)])
    return MisfitReport(float(np.sum(per_shot)), per_shot)


def update_mask(grid: Grid2D, geom: AcquisitionGeometry, sponge_width: int, transducer_radius: int = 2,
                ring_interior: bool = False) -> np.ndarray:
    """Cells allowed to change during inversion.

    Excludes the sponge and every cell within ``transducer_radius`` cells
    of a transducer, where raw gradients are singular.  With
    ``ring_interior`` only cells strictly inside the ring (by the same
    margin) are kept; the region behind the array is illuminated only by
    grazing paths.
    """
    mask = np.zeros(grid.shape, dtype=bool)
    w = int(np.ceil(sponge_width))
    mask[w:grid.nx - w, w:grid.ny - w] = True
    fi = grid.to_index(geom.transducers)
    ii, jj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    for x, y in fi:
        mask &= (ii - x) ** 2 + (jj - y) ** 2 > transducer_radius**2
    if ring_interior:
        x, y = grid.coords()
        r = np.hypot(x - geom.ring_center[0], y - geom.ring_center[1])
        mask &= r < geom.ring_radius - transducer_radius * grid.dx
    return mask


def _stack_obs(obs: list[ShotGather], geom: AcquisitionGeometry, nt: int):
    """Observed traces scattered to ``(n_shots, n_transducers, nt)`` plus a receiver mask."""
    full = np.zeros((len(obs), geom.n_transducers, nt))
    active = np.zeros((len(obs), geom.n_transducers), dtype=bool)
    for k, o in enumerate(obs):
        if o.nt != nt:
            raise ValueError(f"observed gather {k} has {o.nt} samples, simulation uses {nt}")
        recv = list(o.receiver_indices)
        full[k, recv] = o.traces
        active[k, recv] = True
    return full, active


def grad_misfit_c(
    field: SoundSpeedField,
    geom: AcquisitionGeometry,
    wavelet: Wavelet,
    sim: SimParams,
    obs: list[ShotGather],
    mask: np.ndarray | None = None,
    data_filter: Callable[[np.ndarray], np.ndarray] | None = None,
    filtered_obs: np.ndarray | None = None,
) -> tuple[MisfitReport, GradientField]:
    """Misfit of the simulated survey against ``obs`` and its exact gradient.

    ``data_filter`` is an optional linear, self-adjoint operator applied to
    every trace (last axis) of both predicted and observed data before the
    misfit. ``filtered_obs`` short-circuits filtering the observations when the
    caller caches them; it must be in the stacked ``(shots, transducers, nt)``
    layout. ``mask`` zeroes the returned gradient outside allowed cells.
    """
    emitters = [o.emitter_index for o in obs]
    if any(e not in geom.emitter_indices for e in emitters):
        raise ValueError("observed gathers reference transducers that are not emitters")
    for o in obs:
        if o.receiver_indices != geom.receivers_of(o.emitter_index):
            raise ValueError(f"receivers of observed emitter {o.emitter_index} differ from the geometry")
        if abs(o.dt - sim.dt) > 1e-9 * sim.dt:
            raise ValueError(f"observed dt {o.dt:g} differs from simulation dt {sim.dt:g}")
    ops = _Operators(field, geom, sim)
    prop = propagate(field, geom, emitters, wavelet, sim, store_q=True, _ops=ops)
    obs_full, active = _stack_obs(obs, geom, sim.nt)
    pred = prop.traces
    if data_filter is not None:
        pred = data_filter(pred)
        obs_full = data_filter(obs_full) if filtered_obs is None else filtered_obs
    diff = np.where(active[:, :, None], pred - obs_full, 0.0)
    per_shot = np.sum(diff**2, axis=(1, 2))
    resid = 2.0 * diff
    if data_filter is not None:
        resid = np.where(active[:, :, None], data_filter(resid), 0.0)
    resid = np.ascontiguousarray(resid)
    gshots = np.zeros((len(emitters),) + field.grid.shape)
    _kernels.adjoint_loop(
        ops.m, ops.a, ops.b, sim.stencil_order, ops.inv_dx2,
        ops.tix, ops.tiy, ops.tw, resid, prop.q_store, gshots,
    )
    g = np.zeros(field.grid.shape)
    for k in range(len(emitters)):  # fixed summation order over emitters
        g += gshots[k]
    g *= ops.a * 2.0 * sim.dt**2 * field.c
    if mask is not None:
        g = np.where(mask, g, 0.0)
    report = MisfitReport(float(np.sum(per_shot)), per_shot)
    return report, GradientField(field.grid, g)


def misfit_value(field, geom, wavelet, sim, obs, data_filter=None) -> float:
    """Misfit only (forward run without storage); used by finite-difference checks."""
    emitters = [o.emitter_index for o in obs]
    pred = propagate(field, geom, emitters, wavelet, sim).traces
    obs_full, active = _stack_obs(obs, geom, sim.nt)
    if data_filter is not None:
        pred = data_filter(pred)
        obs_full = data_filter(obs_full)
    diff = np.where(active[:, :, None], pred - obs_full, 0.0)
    return float(np.sum(diff**2))


@dataclass(frozen=True, eq=False)
class FDCheckReport:
    eps: float
    inner: np.ndarray  # <g, p>
    fd: np.ndarray  # central difference
    rel_errors: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(np.max(self.rel_errors))


def fd_check_gradient(
    field: SoundSpeedField,
    geom: AcquisitionGeometry,
    wavelet: Wavelet,
    sim: SimParams,
    obs: list[ShotGather],
    n_directions: int = 10,
    eps: float | None = None,
    seed: int = 0,
    mask: np.ndarray | None = None,
    tiny: float = 1e-300,
) -> FDCheckReport:
    """Compare ``<grad, p>`` with central differences along random unit directions.

    Directions are restricted to ``mask`` when given, so masking does not
    bias the comparison. ``eps`` is the step along the unit direction in
    m/s; the default is ``1e-3 * mean(c)``.
    """
    rng = np.random.default_rng(seed)
    if eps is None:
        eps = 1e-3 * float(field.c.mean())
    _, grad = grad_misfit_c(field, geom, wavelet, sim, obs, mask=mask)
    inner, fd, rel = [], [], []
    for _ in range(n_directions):
        p = rng.standard_normal(field.grid.shape)
        if mask is not None:
            p = np.where(mask, p, 0.0)
        p /= np.linalg.norm(p)
        lp = misfit_value(field.with_values(field.c + eps * p), geom, wavelet, sim, obs)
        lm = misfit_value(field.with_values(field.c - eps * p), geom, wavelet, sim, obs)
        d = (lp - lm) / (2 * eps)
        gp = float(np.sum(grad.g * p))
        inner.append(gp)
        fd.append(d)
        rel.append(abs(gp - d) / max(abs(d), tiny))
    return FDCheckReport(eps, np.array(inner), np.array(fd), np.array(rel))
