"""Reconstruction drivers: L2-FWI, L2-MFWI, UNN-FWI and UNN-MFWI.

All four share one loop. Only the optimised variable differs: the raw
speed field for the L2 baselines, the generator weights for the UNN
variants. The multi-band variants low-pass both predicted and observed
gathers with a cutoff that rises stage by stage.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, StabilityError
from .gradient import _stack_obs, grad_misfit_c
from .model import AcquisitionGeometry, ShotGather, SimParams, SoundSpeedField, Wavelet
from .net import DESK, NetArch, NetParams, init_params, sample_noise, unet_backward, unet_forward
from .transforms import SpeedBand, get_transform, transform_inverse

log = logging.getLogger(__name__)

METHODS = ("l2-fwi", "l2-mfwi", "unn-fwi", "unn-mfwi")


# ---------------------------------------------------------------------------
# low-pass filter bank


def lowpass_response(freqs: np.ndarray, cutoff: float) -> np.ndarray:
    """Unity below ``0.8 * cutoff``, raised-cosine roll-off to zero at ``cutoff``."""
    f0 = 0.8 * cutoff
    h = np.zeros_like(freqs, dtype=np.float64)
    h[freqs <= f0] = 1.0
    band = (freqs > f0) & (freqs < cutoff)
    h[band] = 0.5 * (1 + np.cos(np.pi * (freqs[band] - f0) / (cutoff - f0)))
    return h


def lowpass_traces(traces: np.ndarray, dt: float, cutoff: float) -> np.ndarray:
    """Zero-phase FFT low-pass along the last axis.

    The filter acts circularly on the record, so it is a symmetric linear
    operator and serves as its own adjoint.
    """
    nyq = 0.5 / dt
    if cutoff >= nyq:
        raise ValueError(f"cutoff {cutoff:g} Hz must be below the Nyquist frequency {nyq:g} Hz")
    nt = traces.shape[-1]
    h = lowpass_response(np.fft.rfftfreq(nt, dt), cutoff)
    return np.fft.irfft(np.fft.rfft(traces, axis=-1) * h, n=nt, axis=-1)


def lowpass_gather(g: ShotGather, cutoff: float) -> ShotGather:
    return g.with_traces(lowpass_traces(g.traces, g.dt, cutoff))


@dataclass(frozen=True)
class BandSchedule:
    """Ordered ``(cutoff [Hz] or None for unfiltered, iterations)`` stages."""

    stages: tuple[tuple[float | None, int], ...]

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        cut = [c for c, _ in self.stages]
        if any(c is None for c in cut[:-1]):
            raise ValueError("only the terminal stage may be unfiltered")
        finite = [c for c in cut if c is not None]
        if any(b <= a for a, b in zip(finite, finite[1:])):
            raise ValueError(f"cutoffs must be strictly increasing, got {finite}")
        if any(n <= 0 for _, n in self.stages):
            raise ValueError("stage budgets must be positive")

    @property
    def total_iterations(self) -> int:
        return sum(n for _, n in self.stages)

    @classmethod
    def unfiltered(cls, n_iter: int) -> "BandSchedule":
        return cls(((None, n_iter),))


def make_band_schedule(f_peak: float, n_stages: int, n_iter: int, terminal_unfiltered: bool = False) -> BandSchedule:
    """Cutoffs ``f_peak * k / n_stages`` with equal budgets summing to ``n_iter``.

    Any remainder of the division goes to the last stage. With
    ``terminal_unfiltered`` the last stage uses the full band instead of
    ``f_peak``.
    """
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1")
    if n_iter < n_stages:
        raise ValueError("need at least one iteration per stage")
    per = n_iter // n_stages
    budgets = [per] * n_stages
    budgets[-1] += n_iter - per * n_stages
    cutoffs: list = [f_peak * k / n_stages for k in range(1, n_stages + 1)]
    if terminal_unfiltered:
        cutoffs[-1] = None
    return BandSchedule(tuple(zip(cutoffs, budgets)))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, variables: dict, grads: dict) -> dict:
    """One bias-corrected Adam update; returns new arrays and advances ``state``."""
    if set(variables) != set(grads):
        raise ValueError("variables and gradients have different keys")
    for k in variables:
        if np.shape(variables[k]) != np.shape(grads[k]):
            raise ValueError(f"{k}: variable shape {np.shape(variables[k])} vs gradient {np.shape(grads[k])}")
        if k in state.m and state.m[k].shape != np.shape(grads[k]):
            raise ValueError(f"{k}: optimizer state shape {state.m[k].shape} vs gradient {np.shape(grads[k])}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for k, x in variables.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        out[k] = x - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


# ---------------------------------------------------------------------------
# problem description and results


@dataclass(eq=False)
class Problem:
    """Everything an inversion run needs about the data and the inversion grid."""

    geom: AcquisitionGeometry
    wavelet: Wavelet
    sim: SimParams
    obs: list[ShotGather]
    c_init: SoundSpeedField
    band: SpeedBand
    mask: np.ndarray

    def __post_init__(self):
        if self.mask.shape != self.c_init.grid.shape:
            raise ValueError("mask shape differs from the inversion grid")
        if self.c_init.c_min < self.band.c_min or self.c_init.c_max > self.band.c_max:
            raise ValueError("initial model lies outside the speed band")

    @property
    def obs_energy(self) -> float:
        return float(sum(np.sum(o.traces**2) for o in self.obs))


@dataclass
class InversionOptions:
    n_iter: int = 1500
    lr_field: float = 1.0  # m/s per Adam step for the L2 baselines
    lr_net: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_stages: int = 4
    terminal_unfiltered: bool = False
    schedule: BandSchedule | None = None
    transform: str = "linear"
    arch: NetArch = DESK
    noise_seed: int = 0
    init_seed: int = 0
    pretrain_iter: int = 200
    pretrain_lr: float = 1e-2
    snapshot_interval: int = 0

    def band_schedule(self, f_peak: float) -> BandSchedule:
        if self.schedule is not None:
            return self.schedule
        return make_band_schedule(f_peak, self.n_stages, self.n_iter, self.terminal_unfiltered)


@dataclass
class ReconstructionResult:
    method: str
    field: SoundSpeedField
    loss_history: np.ndarray
    stage_starts: list[int]
    stage_cutoffs: list
    elapsed: float
    snapshots: list[tuple[int, np.ndarray]]
    log_rows: list[tuple]
    image: np.ndarray | None = None
    params: NetParams | None = None


# ---------------------------------------------------------------------------
# shared loop


class _FieldVariable:
    """L2 baselines: the speed field itself, clamped to the band."""

    def __init__(self, problem: Problem, opts: InversionOptions):
        self.problem = problem
        self.c = problem.c_init.c.copy()
        self.state = AdamState(opts.lr_field, opts.beta1, opts.beta2, opts.adam_eps)

    def field(self) -> SoundSpeedField:
        return self.problem.c_init.with_values(self.c)

    def update(self, g_c: np.ndarray):
        new = adam_step(self.state, {"c": self.c}, {"c": g_c})["c"]
        self.c = np.clip(new, self.problem.band.c_min, self.problem.band.c_max)

    def image(self):
        return self.problem.band.normalize(self.c)


class _NetVariable:
    """UNN variants: generator weights behind a transform into the band."""

    def __init__(self, problem: Problem, opts: InversionOptions):
        p = problem
        self.problem = p
        width = p.c_init.grid.nx
        if p.c_init.grid.ny != width:
            raise ValueError("the generator needs a square inversion grid")
        self.transform = get_transform(opts.transform)
        self.kind = opts.transform
        self.noise = sample_noise(opts.noise_seed, width, opts.arch)
        self.params = init_params(opts.arch, opts.init_seed)
        self._pretrain(opts)
        self.state = AdamState(opts.lr_net, opts.beta1, opts.beta2, opts.adam_eps)
        self._forward()

    def _pretrain(self, opts: InversionOptions):
        """Fit the generator to the initial model so every method starts from it."""
        target = transform_inverse(self.problem.c_init.c, self.problem.band, self.kind)
        target = np.clip(target, 1e-6, 1 - 1e-6)
        mean = float(target.mean())
        self.params.tensors["head.b"] = np.array([np.log(mean / (1 - mean))])
        state = AdamState(opts.pretrain_lr, opts.beta1, opts.beta2, opts.adam_eps)
        for _ in range(opts.pretrain_iter):
            img, tape = unet_forward(self.params, self.noise)
            grads = unet_backward(tape, 2.0 * (img - target[None]))
            self.params.tensors = adam_step(state, self.params.tensors, grads)
            self.params.bump()

    def _forward(self):
        self.img, self.tape = unet_forward(self.params, self.noise)
        c_net, self.dc_dx = self.transform(self.img[0], self.problem.band)
        self.c = np.where(self.problem.mask, c_net, self.problem.c_init.c)

    def field(self) -> SoundSpeedField:
        return self.problem.c_init.with_values(self.c)

    def update(self, g_c: np.ndarray):
        dl_dimg = np.where(self.problem.mask, g_c * self.dc_dx, 0.0)[None]
        grads = unet_backward(self.tape, dl_dimg, self.params)
        new = adam_step(self.state, self.params.tensors, grads)
        if not all(np.all(np.isfinite(v)) for v in new.values()):
            raise NumericError("non-finite network parameters after update")
        self.params.tensors = new
        self.params.bump()
        self._forward()

    def image(self):
        return self.img[0]

    def loss_gradient_theta(self, g_c: np.ndarray) -> dict:
        """dL/dtheta for the current forward pass (no update)."""
        dl_dimg = np.where(self.problem.mask, g_c * self.dc_dx, 0.0)[None]
        return unet_backward(self.tape, dl_dimg, self.params)


def _run(method: str, problem: Problem, opts: InversionOptions, schedule: BandSchedule,
         variable, callback: Callable | None = None) -> ReconstructionResult:
    p = problem
    dt = p.sim.dt
    obs_full, _ = _stack_obs(p.obs, p.geom, p.sim.nt)
    losses: list[float] = []
    rows: list[tuple] = []
    snapshots = []
    stage_starts, stage_cutoffs = [], []
    t_start = time.perf_counter()
    it = 0
    for stage, (cutoff, budget) in enumerate(schedule.stages):
        stage_starts.append(it)
        stage_cutoffs.append(cutoff)
        if cutoff is None:
            filt, fobs = None, None
        else:
            def filt(arr, _c=cutoff):
                return lowpass_traces(arr, dt, _c)
            fobs = filt(obs_full)
        log.info("%s stage %d: cutoff %s, %d iterations", method, stage, cutoff, budget)
        for _ in range(budget):
            t0 = time.perf_counter()
            if opts.snapshot_interval and it % opts.snapshot_interval == 0:
                snapshots.append((it, variable.c.copy()))
            try:
                report, grad = grad_misfit_c(
                    variable.field(), p.geom, p.wavelet, p.sim, p.obs,
                    mask=p.mask, data_filter=filt, filtered_obs=fobs,
                )
            except (NumericError, StabilityError) as exc:
                raise NumericError(f"{method} iteration {it}: {exc}", step=it) from exc
            variable.update(grad.g)
            losses.append(report.value)
            wall_ms = (time.perf_counter() - t0) * 1e3
            rows.append((it, stage, cutoff if cutoff is not None else 0.0, report.value, wall_ms))
            if callback is not None:
                callback(it, report.value, variable)
            it += 1
    if opts.snapshot_interval:
        snapshots.append((it, variable.c.copy()))
    return ReconstructionResult(
        method=method,
        field=variable.field(),
        loss_history=np.array(losses),
        stage_starts=stage_starts,
        stage_cutoffs=stage_cutoffs,
        elapsed=time.perf_counter() - t_start,
        snapshots=snapshots,
        log_rows=rows,
        image=variable.image(),
        params=getattr(variable, "params", None),
    )


def run_l2_fwi(problem: Problem, opts: InversionOptions, callback=None) -> ReconstructionResult:
    """Classical least-squares FWI on the raw speed field."""
    return _run("l2-fwi", problem, opts, BandSchedule.unfiltered(opts.n_iter), _FieldVariable(problem, opts), callback)


def run_l2_mfwi(problem: Problem, opts: InversionOptions, callback=None) -> ReconstructionResult:
    """Least-squares FWI with a rising low-pass cutoff."""
    sched = opts.band_schedule(problem.wavelet.f_peak)
    return _run("l2-mfwi", problem, opts, sched, _FieldVariable(problem, opts), callback)


def run_unn_fwi(problem: Problem, opts: InversionOptions, callback=None) -> ReconstructionResult:
    """FWI with the speed field generated by an untrained U-Net."""
    return _run("unn-fwi", problem, opts, BandSchedule.unfiltered(opts.n_iter), _NetVariable(problem, opts), callback)


def run_unn_mfwi(problem: Problem, opts: InversionOptions, callback=None) -> ReconstructionResult:
    """Generator-parameterised FWI with the multi-band schedule."""
    sched = opts.band_schedule(problem.wavelet.f_peak)
    return _run("unn-mfwi", problem, opts, sched, _NetVariable(problem, opts), callback)


RUNNERS = {
    "l2-fwi": run_l2_fwi,
    "l2-mfwi": run_l2_mfwi,
    "unn-fwi": run_unn_fwi,
    "unn-mfwi": run_unn_mfwi,
}


def run_method(method: str, problem: Problem, opts: InversionOptions, callback=None) -> ReconstructionResult:
    try:
        runner = RUNNERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}") from None
    return runner(problem, opts, callback)


def unn_total_loss(problem: Problem, params: NetParams, noise, transform: str = "linear",
                   data_filter=None) -> float:
    """Misfit as a function of generator weights (for end-to-end gradient checks)."""
    from .gradient import misfit_value

    img, _ = unet_forward(params, noise)
    c_net, _ = get_transform(transform)(img[0], problem.band)
    c = np.where(problem.mask, c_net, problem.c_init.c)
    return misfit_value(problem.c_init.with_values(c), problem.geom, problem.wavelet, problem.sim,
                        problem.obs, data_filter)
