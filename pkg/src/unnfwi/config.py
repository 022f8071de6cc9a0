"""Experiment configuration: INI schema, validation, presets and hashing.

The file is flat ``key = value`` text under ``[section]`` headers.  Every
key is optional; missing keys take the defaults of the dataclasses below.
Lengths are metres, times seconds, speeds m/s, frequencies Hz.

==============  ==========================================================
section         keys
==============  ==========================================================
``phantom``     kind (breast | bump | phantom-analog | disk | file),
                radius, skin, fat_sigma, gland_axes (two fractions of the
                radius), amplitude, width, speed, path
``grid``        n_coarse, n_fine, dx (coarse spacing), sponge_width
                (coarse cells), sponge_decay (strength * width),
                stencil_order
``time``        nt, dt (coarse), time_ratio (coarse dt / fine dt)
``geometry``    n_transducers, n_emitters, ring_radius, exclude_nearest
``wavelet``     f_peak
``inversion``   method (one or a comma list), transform, c_min, c_max,
                c_init, n_iter, lr_field, lr_net, beta1, beta2, adam_eps,
                n_stages, terminal_unfiltered, cutoffs, pretrain_iter,
                pretrain_lr, snapshot_interval, ring_interior
``network``     depth, base_filters, use_skip
``seeds``       phantom, noise, init
``output``      dir
==============  ==========================================================

``cutoffs`` is an optional comma list of cutoff fractions of ``f_peak``;
``none`` as the last entry marks an unfiltered terminal stage.  When it
is given, the iterations are split evenly across its stages and
``n_stages``/``terminal_unfiltered`` are ignored.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .inversion import METHODS, BandSchedule, InversionOptions, make_band_schedule
from .model import Grid2D, SimParams, cfl_constant
from .net.unet import NetArch
from .transforms import TRANSFORMS, SpeedBand

MIN_GRID_RATIO = 1.25
PHANTOM_KINDS = ("breast", "bump", "phantom-analog", "disk", "file")


@dataclass
class PhantomConfig:
    kind: str = "breast"
    radius: float | None = None
    skin: float | None = None
    fat_sigma: float = 3.0
    gland_axes: tuple[float, float] = (0.62, 0.45)
    amplitude: float = 0.01
    width: float | None = None
    speed: float = 1580.0
    path: str | None = None


@dataclass
class GridConfig:
    n_coarse: int = 64
    n_fine: int = 80
    dx: float = 0.37e-3
    sponge_width: int = 10
    sponge_decay: float = 1.2
    stencil_order: int = 4


@dataclass
class TimeConfig:
    nt: int = 170
    dt: float = 1.2e-7
    time_ratio: float = 1.25


@dataclass
class GeometryConfig:
    n_transducers: int = 64
    n_emitters: int = 16
    ring_radius: float = 20 * 0.37e-3
    exclude_nearest: int = 0


@dataclass
class WaveletConfig:
    f_peak: float = 8e5


@dataclass
class InversionSection:
    method: tuple[str, ...] = ("unn-mfwi",)
    transform: str = "linear"
    c_min: float = 1400.0
    c_max: float = 1700.0
    c_init: float = 1480.0
    n_iter: int = 1500
    lr_field: float = 1.0
    lr_net: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_stages: int = 4
    terminal_unfiltered: bool = False
    cutoffs: tuple | None = None
    pretrain_iter: int = 200
    pretrain_lr: float = 1e-2
    snapshot_interval: int = 0
    ring_interior: bool = True


@dataclass
class NetworkConfig:
    depth: int = 3
    base_filters: int = 16
    use_skip: bool = True


@dataclass
class SeedsConfig:
    phantom: int = 0
    noise: int = 0
    init: int = 0


@dataclass
class OutputConfig:
    dir: str = "runs"


_SECTIONS = {
    "phantom": PhantomConfig,
    "grid": GridConfig,
    "time": TimeConfig,
    "geometry": GeometryConfig,
    "wavelet": WaveletConfig,
    "inversion": InversionSection,
    "network": NetworkConfig,
    "seeds": SeedsConfig,
    "output": OutputConfig,
}


@dataclass
class InversionConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    wavelet: WaveletConfig = field(default_factory=WaveletConfig)
    inversion: InversionSection = field(default_factory=InversionSection)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: Path = field(default=Path("."), compare=False)

    # -- derived objects ---------------------------------------------------

    @property
    def grid_ratio(self) -> float:
        return (self.grid.n_fine - 1) / (self.grid.n_coarse - 1)

    def coarse_grid(self) -> Grid2D:
        return Grid2D.square(self.grid.n_coarse, (self.grid.n_coarse - 1) * self.grid.dx)

    def fine_grid(self) -> Grid2D:
        return Grid2D.square(self.grid.n_fine, (self.grid.n_coarse - 1) * self.grid.dx)

    def coarse_sim(self) -> SimParams:
        g = self.grid
        strength = g.sponge_decay / g.sponge_width if g.sponge_width else 0.0
        return SimParams(self.time.nt, self.time.dt, g.sponge_width, strength, g.stencil_order)

    def fine_sim(self) -> SimParams:
        g = self.grid
        # fractional width keeps the sponge edge at the same place in metres; rounding it
        # changes the taper reflection enough to dominate the fine/coarse data mismatch
        width = g.sponge_width * self.grid_ratio
        # the taper acts once per step on a cell count; match the damping per metre and per second
        scale = self.grid_ratio * self.time.time_ratio**0.5
        strength = g.sponge_decay / (g.sponge_width * scale) if width else 0.0
        dt = self.time.dt / self.time.time_ratio
        nt = int(round((self.time.nt - 1) * self.time.time_ratio)) + 1
        return SimParams(nt, dt, width, strength, g.stencil_order)

    def band(self) -> SpeedBand:
        return SpeedBand(self.inversion.c_min, self.inversion.c_max)

    def arch(self) -> NetArch:
        n = self.network
        return NetArch(n.depth, n.base_filters, n.use_skip)

    def schedule(self) -> BandSchedule:
        inv = self.inversion
        if inv.cutoffs is None:
            return make_band_schedule(self.wavelet.f_peak, inv.n_stages, inv.n_iter, inv.terminal_unfiltered)
        k = len(inv.cutoffs)
        per = inv.n_iter // k
        budgets = [per] * k
        budgets[-1] += inv.n_iter - per * k
        cut = [None if c is None else c * self.wavelet.f_peak for c in inv.cutoffs]
        return BandSchedule(tuple(zip(cut, budgets)))

    def options(self) -> InversionOptions:
        inv = self.inversion
        return InversionOptions(
            n_iter=inv.n_iter, lr_field=inv.lr_field, lr_net=inv.lr_net,
            beta1=inv.beta1, beta2=inv.beta2, adam_eps=inv.adam_eps,
            n_stages=inv.n_stages, terminal_unfiltered=inv.terminal_unfiltered,
            schedule=self.schedule(), transform=inv.transform, arch=self.arch(),
            noise_seed=self.seeds.noise, init_seed=self.seeds.init,
            pretrain_iter=inv.pretrain_iter, pretrain_lr=inv.pretrain_lr,
            snapshot_interval=inv.snapshot_interval,
        )

    def phantom_path(self) -> Path | None:
        if self.phantom.path is None:
            return None
        p = Path(self.phantom.path)
        return p if p.is_absolute() else self.base_dir / p

    # -- serialisation -----------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in _SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        """SHA-256 over every setting except the output directory."""
        c = dataclasses.replace(self, output=OutputConfig(dir=""))
        return hashlib.sha256(c.to_ini().encode("utf-8")).hexdigest()

    def data_key(self) -> str:
        """Hash of the settings that determine the observed data."""
        parts = [
            repr(dataclasses.astuple(self.phantom)),
            repr(self.seeds.phantom),
            repr(dataclasses.astuple(self.grid)),
            repr(dataclasses.astuple(self.geometry)),
            repr(self.wavelet.f_peak),
            repr(dataclasses.astuple(self.fine_sim())),
            repr(dataclasses.astuple(self.coarse_sim())),
        ]
        if self.phantom.kind == "file":
            path = self.phantom_path()
            parts.append(hashlib.sha256(path.read_bytes()).hexdigest() if path and path.exists() else "missing")
        return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, default, key: str):
    text = raw.strip()
    try:
        if text.lower() == "none":
            return None
        if key == "method":
            return tuple(s.strip() for s in text.split(",") if s.strip())
        if key == "cutoffs":
            return tuple(None if s.strip().lower() == "none" else float(s) for s in text.split(","))
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None and key not in ("path",):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(s) for s in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None


def apply_overrides(cfg: InversionConfig, sections: dict[str, dict[str, str]]) -> InversionConfig:
    """Return a copy of ``cfg`` with string values applied per section."""
    updates = {}
    for sec, values in sections.items():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        current = getattr(cfg, sec)
        names = {f.name for f in fields(current)}
        changes = {}
        for key, raw in values.items():
            if key not in names:
                raise ConfigError(f"{sec}.{key}: unknown key")
            try:
                changes[key] = _parse_value(raw, getattr(_SECTIONS[sec](), key), key)
            except ConfigError as exc:
                raise ConfigError(f"{sec}.{exc}") from None
        updates[sec] = dataclasses.replace(current, **changes)
    return dataclasses.replace(cfg, **updates)


def parse_config(text: str, base: InversionConfig | None = None, base_dir: Path | str = ".") -> InversionConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = base if base is not None else InversionConfig()
    cfg = dataclasses.replace(cfg, base_dir=Path(base_dir))
    return apply_overrides(cfg, {s: dict(cp[s]) for s in cp.sections()})


def load_config(path, base: InversionConfig | None = None) -> InversionConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base, path.parent)


def apply_seed_overrides(cfg: InversionConfig, pairs) -> InversionConfig:
    """``K=V`` pairs naming keys of ``[seeds]`` (``phantom``, ``noise``, ``init``)."""
    values = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"seed override {item!r} is not K=V")
        k, v = item.split("=", 1)
        k = k.strip()
        if k.startswith("seeds."):
            k = k[len("seeds."):]
        values[k] = v
    return apply_overrides(cfg, {"seeds": values}) if values else cfg


# ---------------------------------------------------------------------------
# validation

def validate(cfg: InversionConfig) -> None:
    """Raise :class:`ConfigError` naming the first violated setting."""
    ph, g, t, geo, inv = cfg.phantom, cfg.grid, cfg.time, cfg.geometry, cfg.inversion

    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}")

    if ph.kind not in PHANTOM_KINDS:
        fail("phantom.kind", f"unknown kind {ph.kind!r}; choose from {PHANTOM_KINDS}")
    if ph.kind == "file":
        path = cfg.phantom_path()
        if path is None or not path.exists():
            fail("phantom.path", f"field file {path} does not exist")
    if g.n_coarse < 16:
        fail("grid.n_coarse", "needs at least 16 nodes")
    if g.dx <= 0:
        fail("grid.dx", "must be positive")
    if g.stencil_order not in (2, 4):
        fail("grid.stencil_order", "must be 2 or 4")
    if g.sponge_width < 0:
        fail("grid.sponge_width", "must be >= 0")
    if cfg.grid_ratio < MIN_GRID_RATIO:
        fail("grid.n_fine", f"fine/coarse spacing ratio {cfg.grid_ratio:.4g} is below {MIN_GRID_RATIO}")
    if t.time_ratio < MIN_GRID_RATIO:
        fail("time.time_ratio", f"coarse/fine time-step ratio {t.time_ratio:.4g} is below {MIN_GRID_RATIO}")
    if t.nt < 2:
        fail("time.nt", "needs at least two steps")
    if t.dt <= 0:
        fail("time.dt", "must be positive")
    if not 0 < inv.c_min < inv.c_max:
        fail("inversion.c_max", f"band [{inv.c_min}, {inv.c_max}] is not 0 < c_min < c_max")
    if not inv.c_min <= inv.c_init <= inv.c_max:
        fail("inversion.c_init", f"{inv.c_init} outside the band [{inv.c_min}, {inv.c_max}]")
    if inv.transform not in TRANSFORMS:
        fail("inversion.transform", f"unknown transform {inv.transform!r}")
    if inv.transform == "exp" and inv.c_max - inv.c_min <= 1:
        fail("inversion.c_max", "the exponential transform needs c_max - c_min > 1")
    if not inv.method:
        fail("inversion.method", "no method given")
    for m in inv.method:
        if m not in METHODS:
            fail("inversion.method", f"unknown method {m!r}; choose from {METHODS}")
    if inv.n_iter < 1:
        fail("inversion.n_iter", "must be >= 1")
    if inv.snapshot_interval < 0:
        fail("inversion.snapshot_interval", "must be >= 0")
    if cfg.wavelet.f_peak <= 0:
        fail("wavelet.f_peak", "must be positive")
    if cfg.time.dt / t.time_ratio >= 1 / (10 * cfg.wavelet.f_peak) or t.dt >= 1 / (10 * cfg.wavelet.f_peak):
        fail("time.dt", f"wavelet at {cfg.wavelet.f_peak:g} Hz is undersampled; need dt < {1 / (10 * cfg.wavelet.f_peak):.4g}")
    # CFL on the coarse grid against the band ceiling, on the fine grid against the phantom ceiling
    k = cfl_constant(g.stencil_order)
    dt_c = k * g.dx / (inv.c_max * 2**0.5)
    if t.dt > dt_c:
        fail("time.dt", f"{t.dt:.4g} s exceeds the CFL limit {dt_c:.4g} s for c_max = {inv.c_max}")
    fine_dx = g.dx / cfg.grid_ratio
    dt_f = k * fine_dx / (max(inv.c_max, _phantom_ceiling(ph)) * 2**0.5)
    if t.dt / t.time_ratio > dt_f:
        fail("time.time_ratio", f"fine step {t.dt / t.time_ratio:.4g} s exceeds the fine-grid CFL limit {dt_f:.4g} s")
    if geo.n_emitters < 1 or geo.n_emitters > geo.n_transducers:
        fail("geometry.n_emitters", f"{geo.n_emitters} is not within 1..{geo.n_transducers}")
    if geo.n_transducers % geo.n_emitters:
        fail("geometry.n_emitters", f"{geo.n_emitters} does not divide {geo.n_transducers}")
    half = (g.n_coarse - 1) * g.dx / 2
    margin = (g.sponge_width + 1) * g.dx
    if geo.ring_radius <= 0 or geo.ring_radius > half - margin:
        fail("geometry.ring_radius", f"{geo.ring_radius:.4g} m does not fit inside the sponge (limit {half - margin:.4g} m)")
    try:
        cfg.arch().check_width(g.n_coarse)
    except ValueError as exc:
        fail("network.depth", str(exc))
    try:
        cfg.schedule()
    except ValueError as exc:
        fail("inversion.cutoffs", str(exc))
    nyq = 1 / (2 * t.dt)
    for cut, _ in cfg.schedule().stages:
        if cut is not None and cut >= nyq:
            fail("inversion.cutoffs", f"cutoff {cut:g} Hz is at or above the Nyquist frequency {nyq:g} Hz")


def _phantom_ceiling(ph: PhantomConfig) -> float:
    from .phantoms import TISSUE_SPEEDS, WATER

    if ph.kind == "breast":
        return max(TISSUE_SPEEDS.values())
    if ph.kind == "bump":
        return WATER * (1 + max(ph.amplitude, 0.0))
    if ph.kind == "phantom-analog":
        return 1580.0
    if ph.kind == "disk":
        return max(ph.speed, WATER)
    return 0.0


# ---------------------------------------------------------------------------
# presets

def _desk(f_peak: float) -> InversionConfig:
    # 64 x 64 inversion grid at 0.37 mm holds 5 points per wavelength in water at 800 kHz
    g = GridConfig()
    return InversionConfig(
        phantom=PhantomConfig(kind="breast", radius=15 * g.dx),
        grid=g,
        wavelet=WaveletConfig(f_peak),
        inversion=InversionSection(lr_field=2.0, lr_net=1e-3, n_stages=2, terminal_unfiltered=True),
    )


def _paper_full(f_peak: float) -> InversionConfig:
    # 0.25 m domain, 256-element ring of radius 0.12 m, 64 emitters
    side = 0.25
    if f_peak == 5e5:
        n_fine, n_coarse, nt_fine, nt = 800, 608, 6000, 3000
    else:
        n_fine, n_coarse, nt_fine, nt = 1000, 800, 8000, 4400
    duration = 0.2e-3
    dt = duration / nt
    cfg = InversionConfig(
        phantom=PhantomConfig(kind="breast", radius=0.1 * 0.9),
        grid=GridConfig(n_coarse=n_coarse, n_fine=n_fine, dx=side / (n_coarse - 1), sponge_width=4, sponge_decay=1.2),
        time=TimeConfig(nt=nt, dt=dt, time_ratio=nt_fine / nt),
        geometry=GeometryConfig(n_transducers=256, n_emitters=64, ring_radius=0.12),
        wavelet=WaveletConfig(f_peak),
        inversion=InversionSection(n_iter=5000, lr_net=1e-4),
        network=NetworkConfig(depth=5, base_filters=64),
    )
    return cfg


def _phantom_analog() -> InversionConfig:
    cfg = _desk(5e5)
    return dataclasses.replace(
        cfg,
        phantom=PhantomConfig(kind="phantom-analog"),
        inversion=dataclasses.replace(cfg.inversion, c_init=1480.0),
    )


def _desk_bump() -> InversionConfig:
    # a 1% contrast gives a weak data residual; steps scale with the contrast and the
    # iteration budget stops before the fine/coarse discretisation mismatch is fitted
    cfg = _desk(2e5)
    return dataclasses.replace(
        cfg,
        phantom=PhantomConfig(kind="bump", amplitude=0.01, width=3.5e-3),
        inversion=dataclasses.replace(cfg.inversion, lr_field=0.2, lr_net=2e-4, n_iter=200),
    )


PRESETS = {
    "desk-500k": lambda: _desk(5e5),
    "desk-800k": lambda: _desk(8e5),
    "paper-full-500k": lambda: _paper_full(5e5),
    "paper-full-800k": lambda: _paper_full(8e5),
    "phantom-analog": _phantom_analog,
    "desk-bump": _desk_bump,
}


def preset(name: str) -> InversionConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {tuple(PRESETS)}") from None
