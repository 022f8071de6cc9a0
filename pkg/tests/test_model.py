import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unnfwi.errors import GeometryError, StabilityError
from unnfwi.model import (
    CFL_ORDER4,
    Grid2D,
    SimParams,
    SoundSpeedField,
    build_ring_geometry,
    check_cfl,
    max_stable_dt,
    ricker_wavelet,
)


def test_grid_invariants():
    g = Grid2D(20, 30, 1e-3)
    assert g.extent == pytest.approx((19e-3, 29e-3))
    with pytest.raises(ValueError):
        Grid2D(8, 32, 1e-3)
    with pytest.raises(ValueError):
        Grid2D(32, 32, 0.0)


def test_field_rejects_non_positive():
    g = Grid2D(16, 16, 1e-3)
    c = np.full(g.shape, 1480.0)
    c[3, 3] = 0.0
    with pytest.raises(ValueError):
        SoundSpeedField(g, c)
    c[3, 3] = np.nan
    with pytest.raises(ValueError):
        SoundSpeedField(g, c)


def test_full_size_ring_layout():
    grid = Grid2D.square(251, 0.25)
    geom = build_ring_geometry(256, 64, 0.12, grid.center, grid)
    assert geom.n_transducers == 256
    assert geom.n_emitters == 64
    assert all(len(r) == 255 for r in geom.receiver_indices)
    assert geom.emitter_indices[:3] == (0, 4, 8)


def test_four_element_ring():
    grid = Grid2D.square(32, 0.031)
    geom = build_ring_geometry(4, 4, 0.01, grid.center, grid)
    ang = np.degrees(np.arctan2(geom.transducers[:, 1], geom.transducers[:, 0])) % 360
    np.testing.assert_allclose(ang, [0, 90, 180, 270], atol=1e-9)
    assert all(len(r) == 3 for r in geom.receiver_indices)


def test_ring_positions_match_independent_loop():
    grid = Grid2D(64, 64, 1e-3)
    center = grid.center
    r = 0.028
    geom = build_ring_geometry(32, 8, r, center, grid)
    for k in range(32):
        theta = k * (360.0 / 32) * math.pi / 180.0
        assert geom.transducers[k, 0] == pytest.approx(center[0] + r * math.cos(theta), abs=1e-15)
        assert geom.transducers[k, 1] == pytest.approx(center[1] + r * math.sin(theta), abs=1e-15)
    assert np.all(np.abs(geom.transducers - np.array(center)) <= r + 1e-15)


@settings(max_examples=30, deadline=None)
@given(n=st.sampled_from([4, 8, 16, 32, 64, 128, 256]), radius=st.floats(0.005, 0.02))
def test_geometry_angle_round_trip(n, radius):
    grid = Grid2D.square(64, 0.05)
    geom = build_ring_geometry(n, n // 4 if n >= 4 else 1, radius, grid.center, grid)
    d = geom.transducers - np.array(grid.center)
    ang = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    expect = 2 * np.pi * np.arange(n) / n
    err = np.abs(np.angle(np.exp(1j * (ang - expect))))
    assert err.max() < 1e-12


def test_ring_geometry_errors():
    grid = Grid2D.square(64, 0.063)
    with pytest.raises(ValueError):
        build_ring_geometry(8, 16, 0.01, grid.center, grid)
    with pytest.raises(GeometryError):
        build_ring_geometry(32, 8, 0.028, grid.center, grid, sponge_width=10)


def test_receiver_exclusion():
    grid = Grid2D.square(64, 0.063)
    geom = build_ring_geometry(32, 4, 0.02, grid.center, grid, exclude_nearest=2)
    recv = geom.receivers_of(0)
    assert len(recv) == 32 - 5
    assert not set(recv) & {30, 31, 0, 1, 2}
    assert not geom.receiver_mask(8)[8]


def test_ricker_peak_and_zero_crossing():
    f, dt = 5e5, 1e-8
    w = ricker_wavelet(f, dt, 1000)
    t0 = 1.5 / f
    k0 = int(round(t0 / dt))
    assert w.samples[k0] == pytest.approx(1.0, abs=1e-12)
    # zero crossing at (t - t0)^2 = 1/(2 pi^2 f^2)
    s = 1 / (math.pi * f * math.sqrt(2))
    w2 = ricker_wavelet(f, s / 7, 200, delay=0.0)
    assert abs(w2.samples[7]) < 1e-12


def test_ricker_spectrum_peak():
    f, dt, nt = 5e5, 3.3e-8, 6000
    w = ricker_wavelet(f, dt, nt)
    spec = np.abs(np.fft.rfft(w.samples))
    freqs = np.fft.rfftfreq(nt, dt)
    assert abs(freqs[np.argmax(spec)] - f) <= freqs[1]


def test_ricker_zero_mean_and_decay():
    f, dt = 8e5, 1e-8
    nt = int(round(8 / f / dt))
    w = ricker_wavelet(f, dt, nt)
    assert abs(w.samples.sum()) <= 1e-6 * w.samples.max()
    beyond = np.arange(nt) * dt > 3 / f
    assert np.all(np.abs(w.samples[beyond]) < 1e-6 * w.samples.max())
    assert abs(w.samples[0]) < 1e-4


def test_ricker_undersampled():
    with pytest.raises(ValueError):
        ricker_wavelet(5e5, 2.1e-7, 100)


def test_max_stable_dt_formula():
    g = Grid2D(32, 32, 1e-3)
    f = SoundSpeedField.homogeneous(g, 1480.0)
    assert max_stable_dt(f, 2) == pytest.approx(1e-3 / (1480 * math.sqrt(2)), rel=1e-14)
    assert max_stable_dt(f, 2) == pytest.approx(4.78e-7, rel=1e-3)
    assert max_stable_dt(f, 4) == pytest.approx(CFL_ORDER4 * 4.778e-7, rel=1e-3)
    g2 = Grid2D(32, 32, 2e-3)
    assert max_stable_dt(SoundSpeedField.homogeneous(g2, 1480.0), 4) == pytest.approx(2 * max_stable_dt(f, 4))
    c = f.c.copy()
    c[5, 5] = 1650.0
    assert max_stable_dt(SoundSpeedField(g, c), 4) < max_stable_dt(f, 4)


@settings(max_examples=40, deadline=None)
@given(c1=st.floats(1000, 3000), c2=st.floats(1000, 3000), dx=st.floats(1e-4, 1e-2), order=st.sampled_from([2, 4]))
def test_max_stable_dt_monotone_linear(c1, c2, dx, order):
    lo, hi = sorted((c1, c2))
    assert max_stable_dt(hi, order, dx) <= max_stable_dt(lo, order, dx)
    assert max_stable_dt(lo, order, 3 * dx) == pytest.approx(3 * max_stable_dt(lo, order, dx), rel=1e-12)


def test_check_cfl_rejects_large_dt():
    g = Grid2D(32, 32, 1e-3)
    f = SoundSpeedField.homogeneous(g, 1480.0)
    dt_max = max_stable_dt(f, 4)
    check_cfl(f, SimParams(10, dt_max, 0))
    with pytest.raises(StabilityError):
        check_cfl(f, SimParams(10, 1.01 * dt_max, 0))


def test_sim_params_validation():
    with pytest.raises(ValueError):
        SimParams(10, 1e-7, -1)
    with pytest.raises(ValueError):
        SimParams(10, 1e-7, 3, stencil_order=6)
