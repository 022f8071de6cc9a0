"""Binary and text formats for fields, gathers, checkpoints and images.

All binary formats are little-endian.

USFD (sound-speed field)::

    4s  magic  b"USFD"
    u4  version (1)
    u4  nx, u4 ny
    f8  dx, f8 x0, f8 y0
    f8  nx*ny values, C order over (ix, iy)

USGT (shot gathers; a file holds one or more records back to back)::

    4s  magic  b"USGT"
    u4  version (1)
    i4  emitter_index
    u4  n_receivers, u4 nt
    f8  dt
    i4  receiver_indices[n_receivers]
    f4  traces, n_receivers*nt, row-major (receiver, time)

USNN (generator checkpoint)::

    4s  magic  b"USNN"
    u4  version (1)
    u4  depth, u4 base_filters, u1 use_skip
    i8  seed
    u4  n_tensors
    per tensor: u2 name length, utf-8 name, u1 rank, u4 dims[rank], f4 payload

PGM images are binary ``P5`` with maxval 65535 (big-endian samples, as the
format requires).  Image row 0 is the top of the field (largest y); the
window is recorded in a ``# window lo hi`` comment.
"""

from __future__ import annotations

import csv
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import Grid2D, ShotGather, SoundSpeedField
from .net.unet import NetArch, NetParams

_VERSION = 1
_FIELD_HDR = struct.Struct("<4sIIIddd")
_GATHER_HDR = struct.Struct("<4sIiIId")
_NET_HDR = struct.Struct("<4sIIIBqI")

PGM_MAX = 65535


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _expect_magic(got: bytes, want: bytes, path) -> None:
    if got != want:
        raise ValueError(f"{path}: bad magic {got!r}, expected {want!r}")


# ---------------------------------------------------------------------------
# fields

def field_to_bytes(field: SoundSpeedField) -> bytes:
    g = field.grid
    hdr = _FIELD_HDR.pack(b"USFD", _VERSION, g.nx, g.ny, g.dx, g.origin[0], g.origin[1])
    return hdr + np.ascontiguousarray(field.c, dtype="<f8").tobytes()


def field_from_bytes(data: bytes, source="<bytes>") -> SoundSpeedField:
    if len(data) < _FIELD_HDR.size:
        raise ValueError(f"{source}: truncated USFD header")
    magic, version, nx, ny, dx, x0, y0 = _FIELD_HDR.unpack_from(data)
    _expect_magic(magic, b"USFD", source)
    if version != _VERSION:
        raise ValueError(f"{source}: unsupported USFD version {version}")
    n = nx * ny * 8
    payload = data[_FIELD_HDR.size:]
    if len(payload) != n:
        raise ValueError(f"{source}: payload has {len(payload)} bytes, expected {n}")
    c = np.frombuffer(payload, dtype="<f8").reshape(nx, ny).astype(np.float64)
    return SoundSpeedField(Grid2D(nx, ny, dx, (x0, y0)), c)


def write_field(path, field: SoundSpeedField) -> None:
    atomic_write_bytes(path, field_to_bytes(field))


def read_field(path) -> SoundSpeedField:
    return field_from_bytes(Path(path).read_bytes(), path)


# ---------------------------------------------------------------------------
# gathers

def gathers_to_bytes(gathers) -> bytes:
    out = bytearray()
    for g in gathers:
        out += _GATHER_HDR.pack(b"USGT", _VERSION, g.emitter_index, g.n_receivers, g.nt, g.dt)
        out += np.asarray(g.receiver_indices, dtype="<i4").tobytes()
        out += np.ascontiguousarray(g.traces, dtype="<f4").tobytes()
    return bytes(out)


def gathers_from_bytes(data: bytes, source="<bytes>") -> list[ShotGather]:
    gathers = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < _GATHER_HDR.size:
            raise ValueError(f"{source}: truncated USGT header at byte {pos}")
        magic, version, emitter, n_rec, nt, dt = _GATHER_HDR.unpack_from(data, pos)
        _expect_magic(magic, b"USGT", source)
        if version != _VERSION:
            raise ValueError(f"{source}: unsupported USGT version {version}")
        pos += _GATHER_HDR.size
        end = pos + 4 * n_rec + 4 * n_rec * nt
        if end > len(data):
            raise ValueError(f"{source}: truncated USGT record for emitter {emitter}")
        recv = np.frombuffer(data, dtype="<i4", count=n_rec, offset=pos)
        pos += 4 * n_rec
        tr = np.frombuffer(data, dtype="<f4", count=n_rec * nt, offset=pos).reshape(n_rec, nt)
        pos = end
        gathers.append(ShotGather(int(emitter), tr.astype(np.float64), dt, tuple(int(r) for r in recv)))
    return gathers


def write_gathers(path, gathers) -> None:
    atomic_write_bytes(path, gathers_to_bytes(gathers))


def read_gathers(path) -> list[ShotGather]:
    return gathers_from_bytes(Path(path).read_bytes(), path)


def export_gather_csv(path, gather: ShotGather) -> None:
    """One row per time sample: ``t`` followed by one column per receiver."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"r{r}" for r in gather.receiver_indices])
        for k in range(gather.nt):
            w.writerow([repr(k * gather.dt)] + [repr(float(v)) for v in gather.traces[:, k]])


# ---------------------------------------------------------------------------
# checkpoints

def params_to_bytes(params: NetParams, noise: np.ndarray | None = None) -> bytes:
    """Serialise all tensors; ``noise`` is stored under the name ``noise.z``."""
    tensors = dict(params.tensors)
    if noise is not None:
        tensors["noise.z"] = np.asarray(noise)
    a = params.arch
    out = bytearray(_NET_HDR.pack(b"USNN", _VERSION, a.depth, a.base_filters, int(a.use_skip), params.seed, len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
        out += np.ascontiguousarray(t, dtype="<f4").tobytes()
    return bytes(out)


def params_from_bytes(data: bytes, source="<bytes>") -> tuple[NetParams, np.ndarray | None]:
    magic, version, depth, base, skip, seed, n = _NET_HDR.unpack_from(data)
    _expect_magic(magic, b"USNN", source)
    if version != _VERSION:
        raise ValueError(f"{source}: unsupported USNN version {version}")
    pos = _NET_HDR.size
    tensors = {}
    noise = None
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + ln].decode("utf-8")
        pos += ln
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = math.prod(dims)
        t = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 4 * count
        if name == "noise.z":
            noise = t
        else:
            tensors[name] = t
    if pos != len(data):
        raise ValueError(f"{source}: {len(data) - pos} trailing bytes after the last tensor")
    return NetParams(NetArch(depth, base, bool(skip)), tensors, seed), noise


def write_params(path, params: NetParams, noise=None) -> None:
    atomic_write_bytes(path, params_to_bytes(params, noise))


def read_params(path):
    return params_from_bytes(Path(path).read_bytes(), path)


# ---------------------------------------------------------------------------
# PGM

def window_values(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Linear window map onto ``0..65535``, clamped."""
    if not lo < hi:
        raise ValueError(f"window lo={lo} must be below hi={hi}")
    scaled = np.floor(PGM_MAX * (np.asarray(values, dtype=np.float64) - lo) / (hi - lo))
    return np.clip(scaled, 0, PGM_MAX).astype(np.uint16)


def _field_to_image(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T[::-1])


def _image_to_field(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[::-1].T)


def pgm_bytes(values: np.ndarray, lo: float, hi: float) -> bytes:
    """16-bit PGM of a field-oriented ``(nx, ny)`` array."""
    img = _field_to_image(window_values(values, lo, hi))
    h, w = img.shape
    header = f"P5\n# window {lo!r} {hi!r}\n{w} {h}\n{PGM_MAX}\n".encode("ascii")
    return header + img.astype(">u2").tobytes()


def write_pgm(path, values: np.ndarray, lo: float, hi: float) -> None:
    atomic_write_bytes(path, pgm_bytes(values, lo, hi))


def parse_pgm(data: bytes) -> tuple[np.ndarray, tuple[float, float] | None]:
    """Return the field-oriented ``uint16`` array and the recorded window."""
    tokens: list[bytes] = []
    window = None
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            parts = data[pos + 1:end].split()
            if len(parts) == 3 and parts[0] == b"window":
                window = (float(parts[1]), float(parts[2]))
            pos = end + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return _image_to_field(img.astype(np.uint16)), window


def read_pgm(path):
    return parse_pgm(Path(path).read_bytes())


def export_pgm(field_path, out_path, window: tuple[float, float]) -> None:
    lo, hi = window
    write_pgm(out_path, read_field(field_path).c, lo, hi)


def export_error_pgm(truth: SoundSpeedField, recon: SoundSpeedField, out_path, half_range: float | None = None) -> float:
    """Signed error map ``truth - recon`` in a symmetric window; returns the half range used."""
    if truth.grid.shape != recon.grid.shape:
        raise ValueError(f"shape mismatch {truth.grid.shape} vs {recon.grid.shape}")
    err = truth.c - recon.c
    if half_range is None:
        half_range = float(np.max(np.abs(err))) or 1.0
    write_pgm(out_path, err, -half_range, half_range)
    return half_range
