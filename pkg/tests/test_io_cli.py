import math
import struct

import numpy as np
import pytest

from unnfwi import io as uio
from unnfwi.cli import main
from unnfwi.config import apply_overrides, apply_seed_overrides, load_config, parse_config, preset, PRESETS, validate
from unnfwi.errors import ConfigError
from unnfwi.experiment import compare_runs, format_table, read_manifest, recompute_metrics
from unnfwi.metrics import PSNR_CAP, compute_metrics
from unnfwi.model import Grid2D, ShotGather, SoundSpeedField
from unnfwi.net import NetArch, init_params, sample_noise

TINY_INI = """
[phantom]
kind = disk
radius = 0.002
speed = 1540

[grid]
n_coarse = 32
n_fine = 40
dx = 0.0005
sponge_width = 6

[time]
nt = 220
dt = 1.4e-7

[geometry]
n_transducers = 32
n_emitters = 4
ring_radius = 0.004

[wavelet]
f_peak = 250000

[inversion]
method = l2-fwi, unn-mfwi
n_iter = 3
n_stages = 2
lr_field = 2.0
lr_net = 0.001
pretrain_iter = 5
snapshot_interval = 2

[network]
depth = 2
base_filters = 4
"""


@pytest.fixture(autouse=True)
def _cache(tmp_path, monkeypatch):
    monkeypatch.setenv("UNNFWI_CACHE", str(tmp_path / "cache"))


@pytest.fixture
def tiny_cfg_path(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY_INI)
    return p


# -- binary formats ------------------------------------------------------------------

def test_field_round_trip_and_layout(tmp_path):
    grid = Grid2D(17, 19, 3e-4, (-1e-3, 2e-3))
    f = SoundSpeedField(grid, 1480 + np.random.default_rng(0).random((17, 19)))
    data = uio.field_to_bytes(f)
    magic, ver, nx, ny, dx, x0, y0 = struct.unpack_from("<4sIIIddd", data)
    assert (magic, ver, nx, ny, dx, x0, y0) == (b"USFD", 1, 17, 19, 3e-4, -1e-3, 2e-3)
    assert np.array_equal(np.frombuffer(data, "<f8", offset=struct.calcsize("<4sIIIddd")).reshape(17, 19), f.c)
    uio.write_field(tmp_path / "f.usfd", f)
    g = uio.read_field(tmp_path / "f.usfd")
    assert g.grid == grid and np.array_equal(g.c, f.c)
    with pytest.raises(ValueError):
        uio.field_from_bytes(b"XXXX" + data[4:])


def test_gather_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    gs = [ShotGather(k, rng.standard_normal((3, 11)).astype(np.float32).astype(np.float64), 1e-7, (0, 5 + k, 9))
          for k in range(3)]
    uio.write_gathers(tmp_path / "g.usgt", gs)
    back = uio.read_gathers(tmp_path / "g.usgt")
    for a, b in zip(gs, back):
        assert (a.emitter_index, a.receiver_indices, a.dt) == (b.emitter_index, b.receiver_indices, b.dt)
        assert np.array_equal(a.traces, b.traces)
    uio.export_gather_csv(tmp_path / "g.csv", gs[1])
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert len(rows) == 1 + 11


def test_params_round_trip():
    arch = NetArch(2, 4, use_skip=False)
    p = init_params(arch, 17)
    z = sample_noise(3, 8, arch).z
    q, z2 = uio.params_from_bytes(uio.params_to_bytes(p, z))
    assert q.arch == arch and q.seed == 17
    assert set(q.tensors) == set(p.tensors)
    for k in p.tensors:
        assert np.array_equal(q.tensors[k], p.tensors[k].astype(np.float32))
    assert np.array_equal(z2, z.astype(np.float32))


# -- PGM -----------------------------------------------------------------------------

def test_pgm_constant_midgray_and_clamping():
    c = 1500.0
    vals = uio.window_values(np.full((4, 4), c), 1400.0, 1700.0)
    assert np.all(vals == math.floor(65535 * (c - 1400) / 300))
    clamp = uio.window_values(np.array([1000.0, 2000.0]), 1400.0, 1700.0)
    assert clamp.tolist() == [0, 65535]
    with pytest.raises(ValueError):
        uio.window_values(np.zeros(2), 1.0, 1.0)


def test_pgm_round_trip_and_orientation(tmp_path):
    rng = np.random.default_rng(2)
    a = 1400 + 300 * rng.random((6, 9))
    data = uio.pgm_bytes(a, 1400.0, 1700.0)
    assert data.startswith(b"P5\n# window 1400.0 1700.0\n6 9\n65535\n")
    back, window = uio.parse_pgm(data)
    assert window == (1400.0, 1700.0)
    assert np.array_equal(back, uio.window_values(a, 1400.0, 1700.0))
    # first stored sample is column 0 of the largest y index
    first = int.from_bytes(data[-2 * 54:][:2], "big")
    assert first == uio.window_values(a, 1400.0, 1700.0)[0, -1]


def test_export_cli_and_error_map(tmp_path):
    grid = Grid2D.square(16, 0.01)
    truth = SoundSpeedField(grid, np.full(grid.shape, 1500.0))
    recon = truth.with_values(truth.c + np.linspace(-10, 10, 256).reshape(16, 16))
    uio.write_field(tmp_path / "t.usfd", truth)
    uio.write_field(tmp_path / "r.usfd", recon)
    out = tmp_path / "r.pgm"
    assert main(["export", str(tmp_path / "r.usfd"), str(out), "--window", "1400", "1700",
                 "--truth", str(tmp_path / "t.usfd")]) == 0
    img, win = uio.read_pgm(out)
    assert win == (1400.0, 1700.0) and np.array_equal(img, uio.window_values(recon.c, 1400, 1700))
    err, ewin = uio.read_pgm(out.with_suffix(".error.pgm"))
    assert ewin == (-150.0, 150.0)
    assert np.array_equal(err, uio.window_values(truth.c - recon.c, -150, 150))
    assert main(["export", str(tmp_path / "r.usfd"), str(out), "--window", "5", "5"]) == 2
    assert main(["export", str(tmp_path / "missing.usfd"), str(out), "--window", "0", "1"]) == 2


# -- configuration -------------------------------------------------------------------

def test_config_ini_round_trip_and_hash(tiny_cfg_path):
    cfg = load_config(tiny_cfg_path)
    again = parse_config(cfg.to_ini())
    assert again == cfg and again.hash() == cfg.hash()
    moved = parse_config(TINY_INI + "\n[output]\ndir = elsewhere\n")
    assert moved.hash() == cfg.hash()
    assert apply_seed_overrides(cfg, ["noise=4"]).hash() != cfg.hash()
    assert apply_seed_overrides(cfg, ["seeds.phantom=2"]).seeds.phantom == 2


@pytest.mark.parametrize("section,key,value", [
    ("grid", "n_fine", "36"),
    ("time", "time_ratio", "1.1"),
    ("inversion", "c_init", "1800"),
    ("inversion", "method", "sgd-fwi"),
    ("inversion", "transform", "cubic"),
    ("time", "dt", "5e-7"),
    ("geometry", "n_emitters", "5"),
    ("geometry", "ring_radius", "0.1"),
    ("network", "depth", "6"),
    ("phantom", "kind", "mri"),
    ("grid", "stencil_order", "6"),
    ("inversion", "cutoffs", "0.5, 0.25"),
])
def test_validation_names_the_field(section, key, value):
    cfg = apply_overrides(parse_config(TINY_INI), {section: {key: value}})
    with pytest.raises(ConfigError, match=f"{section}\\.{key}"):
        validate(cfg)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="grid.nx"):
        parse_config("[grid]\nnx = 4\n")
    with pytest.raises(ConfigError):
        parse_config("[gridd]\nn_coarse = 4\n")


def test_presets_validate():
    for name in PRESETS:
        cfg = preset(name)
        validate(cfg)
        assert cfg.grid_ratio >= 1.25 and cfg.time.time_ratio >= 1.25
    full = preset("paper-full-800k")
    assert (full.grid.n_fine, full.grid.n_coarse, full.network.depth, full.network.base_filters) == (1000, 800, 5, 64)
    with pytest.raises(ConfigError):
        preset("desk-1m")


@pytest.mark.parametrize("name", ["desk-800k", "paper-full-500k"])
def test_fine_sponge_matches_coarse_in_metres_and_seconds(name):
    from unnfwi.wave import sponge_profile

    cfg = preset(name)
    fs, cs = cfg.fine_sim(), cfg.coarse_sim()
    fg, cg = cfg.fine_grid(), cfg.coarse_grid()
    assert fs.sponge_width * fg.dx == pytest.approx(cs.sponge_width * cg.dx, rel=1e-12)
    # per-step log damping at the same physical depth scales with dt
    depth = 0.5 * cs.sponge_width * cg.dx
    f_prof = sponge_profile(fg, fs.sponge_width, fs.sponge_strength)
    c_prof = sponge_profile(cg, cs.sponge_width, cs.sponge_strength)
    i_f = cfg.fine_sim().sponge_width - depth / fg.dx
    i_c = cs.sponge_width - depth / cg.dx
    f_rate = -np.interp(i_f, np.arange(fg.nx), np.log(f_prof[:, fg.ny // 2])) / fs.dt
    c_rate = -np.interp(i_c, np.arange(cg.nx), np.log(c_prof[:, cg.ny // 2])) / cs.dt
    assert f_rate == pytest.approx(c_rate, rel=0.05)


# -- end-to-end runs -----------------------------------------------------------------

def test_invert_writes_complete_artifacts(tmp_path, tiny_cfg_path):
    out = tmp_path / "run"
    assert main(["invert", "--config", str(tiny_cfg_path), "--out", str(out)]) == 0
    manifests = [out / m / "manifest.txt" for m in ("l2-fwi", "unn-mfwi")]
    for mp in manifests:
        man = read_manifest(mp)
        assert {"run", "seeds", "artifacts", "metrics.image", "metrics.speed"} <= set(man)
        for name, rel in man["artifacts"].items():
            path = mp.parent / rel
            assert path.exists(), name
            if rel.endswith(".usfd"):
                uio.read_field(path)
            elif rel.endswith(".usgt"):
                uio.read_gathers(path)
            elif rel.endswith(".usnn"):
                uio.read_params(path)
            elif rel.endswith(".pgm"):
                uio.read_pgm(path)
            elif rel.endswith(".ini"):
                load_config(path)
        rows = (mp.parent / "loss.csv").read_text().splitlines()
        assert rows[0] == "iteration,stage,cutoff,loss" and len(rows) == 4
        assert (mp.parent / "log.csv").read_text().splitlines()[0].endswith("wall_ms")
        assert sorted(k for k in man["artifacts"] if k.startswith("snapshot")) == \
            ["snapshot_000000", "snapshot_000002", "snapshot_000003"]
    assert "checkpoint" in read_manifest(manifests[1])["artifacts"]

    # recomputed metrics equal the stored ones and the comparison table
    rows = compare_runs(manifests, "image")
    assert [r["method"] for r in rows] == ["l2-fwi", "unn-mfwi"]
    for mp, row in zip(manifests, rows):
        man = read_manifest(mp)
        truth = uio.read_field(mp.parent / "truth.usfd")
        final = uio.read_field(mp.parent / "final.usfd")
        band = load_config(mp.parent / "config.ini").band()
        rep = compute_metrics(band.normalize(final.c), band.normalize(truth.c))
        assert abs(row["ssim"] - rep.ssim) <= 1e-12 and abs(row["rmse"] - rep.rmse) <= 1e-12
        assert abs(float(man["metrics.image"]["ssim"]) - rep.ssim) <= 1e-12
        assert abs(recompute_metrics(mp)["speed"].rmse - float(man["metrics.speed"]["rmse"])) <= 1e-12
    csv_text, table = format_table(rows)
    assert csv_text.splitlines()[0] == "method,ssim,psnr,rmse,wall_s"
    assert len(table.strip().splitlines()) == 3
    assert main(["compare", str(manifests[0]), "--out", str(tmp_path / "t.csv")]) == 0
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 2
    assert main(["metrics", str(manifests[0])]) == 0

    # rerun: same hash, identical loss log and final field
    out2 = tmp_path / "run2"
    assert main(["invert", "--config", str(tiny_cfg_path), "--out", str(out2)]) == 0
    for m in ("l2-fwi", "unn-mfwi"):
        a, b = read_manifest(out / m / "manifest.txt"), read_manifest(out2 / m / "manifest.txt")
        assert a["run"]["config_hash"] == b["run"]["config_hash"]
        assert (out / m / "loss.csv").read_bytes() == (out2 / m / "loss.csv").read_bytes()
        assert (out / m / "final.usfd").read_bytes() == (out2 / m / "final.usfd").read_bytes()

    # a run on a different truth is refused
    other = tmp_path / "other.ini"
    other.write_text(TINY_INI.replace("speed = 1540", "speed = 1560").replace("l2-fwi, unn-mfwi", "l2-fwi"))
    assert main(["invert", "--config", str(other), "--out", str(tmp_path / "o")]) == 0
    with pytest.raises(ConfigError, match="config_hash"):
        compare_runs([manifests[0], tmp_path / "o" / "l2-fwi" / "manifest.txt"])
    assert main(["compare", str(manifests[0]), str(tmp_path / "o" / "l2-fwi" / "manifest.txt")]) == 2


def test_water_truth_loss_is_discretisation_floor(tmp_path):
    # observed data come from the finer grid, so a truth equal to the start
    # model leaves only the fine-versus-coarse discretisation residual
    from unnfwi.gradient import misfit_value
    from unnfwi.model import ricker_wavelet
    from unnfwi.experiment import make_geometry

    p = tmp_path / "water.ini"
    p.write_text(TINY_INI.replace("speed = 1540", "speed = 1480").replace("l2-fwi, unn-mfwi", "l2-fwi"))
    assert main(["invert", "--config", str(p), "--out", str(tmp_path / "w")]) == 0
    run = tmp_path / "w" / "l2-fwi"
    cfg = load_config(run / "config.ini")
    obs = uio.read_gathers(run / "obs.usgt")
    sim = cfg.coarse_sim()
    start = SoundSpeedField.homogeneous(cfg.coarse_grid(), cfg.inversion.c_init)
    expect = misfit_value(start, make_geometry(cfg), ricker_wavelet(cfg.wavelet.f_peak, sim.dt, sim.nt), sim, obs)
    first = float((run / "loss.csv").read_text().splitlines()[1].split(",")[3])
    assert first == pytest.approx(expect, rel=1e-12)
    energy = float(read_manifest(run / "manifest.txt")["run"]["obs_energy"])
    assert first < 0.05 * energy


def test_simulate_and_cache(tmp_path, tiny_cfg_path):
    assert main(["simulate", "--config", str(tiny_cfg_path), "--out", str(tmp_path / "s1")]) == 0
    cached = list((tmp_path / "cache").glob("obs-*.usgt"))
    assert len(cached) == 1
    assert main(["simulate", "--config", str(tiny_cfg_path), "--out", str(tmp_path / "s2")]) == 0
    assert (tmp_path / "s1" / "obs.usgt").read_bytes() == (tmp_path / "s2" / "obs.usgt").read_bytes()


def test_exit_code_for_invalid_config(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(TINY_INI + "\n[seeds]\nnoise = 1\n")
    bad = tmp_path / "bad2.ini"
    bad.write_text(TINY_INI.replace("n_fine = 40", "n_fine = 36"))
    assert main(["invert", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "grid.n_fine" in capsys.readouterr().err
    assert main(["invert", "--config", str(tmp_path / "nope.ini")]) == 2
    assert main(["invert", "--config", str(p), "--seed-override", "bogus"]) == 2


def test_exit_code_for_numeric_abort(tmp_path, tiny_cfg_path, monkeypatch, capsys):
    from unnfwi import inversion

    real = inversion.grad_misfit_c
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            from unnfwi.errors import NumericError
            raise NumericError("non-finite wavefield", step=57)
        return real(*a, **k)

    monkeypatch.setattr(inversion, "grad_misfit_c", flaky)
    assert main(["invert", "--config", str(tiny_cfg_path), "--out", str(tmp_path / "n")]) == 3
    assert "iteration 1" in capsys.readouterr().err
