"""Binary field files and velocity-series manifests.

Layout of a field file (all integers and floats little-endian):

    magic   4 bytes  b"LCS2"
    version u32      1
    kind    u8       0 scalar, 1 vector, 2 flow map, 3 Cauchy-Green
    nx, ny  u32 each
    x0, x1, y0, y1, time   f64 each
    [kinds 2 and 3 only]
    nchan       u32
    window_end  f64
    channel names: nchan entries of (u16 length + ascii bytes)
    payload: one (nx*ny) f64 plane per channel, row-major, y fastest

Scalar files hold one plane; vector files hold the u plane then the v plane.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FieldFormatError
from .fields import Grid2D, ScalarField2D, VectorField2D, VelocitySeries

MAGIC = b"LCS2"
VERSION = 1
KIND_SCALAR = 0
KIND_VECTOR = 1
KIND_FLOWMAP = 2
KIND_CAUCHY_GREEN = 3

_BASE_HEADER = struct.Struct("<4sIBII5d")
_EXT_HEADER = struct.Struct("<Id")
_NAME_LEN = struct.Struct("<H")


def _pack_base(kind, grid, time):
    return _BASE_HEADER.pack(
        MAGIC, VERSION, kind, grid.nx, grid.ny, grid.x0, grid.x1, grid.y0, grid.y1, time
    )


def _plane_bytes(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def write_field(f, path):
    """Write a ScalarField2D or VectorField2D to a binary field file."""
    if isinstance(f, ScalarField2D):
        kind, planes = KIND_SCALAR, [f.values]
    elif isinstance(f, VectorField2D):
        kind, planes = KIND_VECTOR, [f.u, f.v]
    else:
        raise TypeError(f"cannot serialize {type(f).__name__}")
    with open(path, "wb") as fh:
        fh.write(_pack_base(kind, f.grid, f.time))
        for p in planes:
            fh.write(_plane_bytes(p))


def write_channels(path, kind, grid, time, window_end, channels):
    """Write a multi-channel extension file (kinds 2 and 3).

    channels is an ordered mapping name -> (nx, ny) array.
    """
    with open(path, "wb") as fh:
        fh.write(_pack_base(kind, grid, time))
        fh.write(_EXT_HEADER.pack(len(channels), window_end))
        for name in channels:
            raw = name.encode("ascii")
            fh.write(_NAME_LEN.pack(len(raw)))
            fh.write(raw)
        for name, plane in channels.items():
            if plane.shape != (grid.nx, grid.ny):
                raise ValueError(f"channel {name!r} has shape {plane.shape}")
            fh.write(_plane_bytes(plane))


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FieldFormatError(f"truncated file: expected {n} bytes of {what}")
    return buf


def _read_planes(fh, count, nx, ny):
    n = nx * ny
    planes = []
    for _ in range(count):
        raw = _read_exact(fh, 8 * n, "payload")
        planes.append(np.frombuffer(raw, dtype="<f8").reshape(nx, ny).copy())
    extra = fh.read(1)
    if extra:
        raise FieldFormatError("payload longer than header promises")
    return planes


def read_field(path):
    """Read any field file; returns the matching field object.

    Kinds 2 and 3 come back as (grid, time, window_end, channels dict); the
    flowmap module wraps them into its own types.
    """
    with open(path, "rb") as fh:
        raw = _read_exact(fh, _BASE_HEADER.size, "header")
        magic, version, kind, nx, ny, x0, x1, y0, y1, time = _BASE_HEADER.unpack(raw)
        if magic != MAGIC:
            raise FieldFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FieldFormatError(f"unsupported format version {version}")
        try:
            grid = Grid2D(nx, ny, x0, x1, y0, y1)
        except ValueError as exc:
            raise FieldFormatError(f"invalid grid in header: {exc}") from exc
        if kind == KIND_SCALAR:
            (vals,) = _read_planes(fh, 1, nx, ny)
            return ScalarField2D(grid, vals, time)
        if kind == KIND_VECTOR:
            u, v = _read_planes(fh, 2, nx, ny)
            return VectorField2D(grid, u, v, time)
        if kind in (KIND_FLOWMAP, KIND_CAUCHY_GREEN):
            nchan, window_end = _EXT_HEADER.unpack(
                _read_exact(fh, _EXT_HEADER.size, "extension header")
            )
            names = []
            for _ in range(nchan):
                (ln,) = _NAME_LEN.unpack(_read_exact(fh, 2, "channel name length"))
                names.append(_read_exact(fh, ln, "channel name").decode("ascii"))
            planes = _read_planes(fh, nchan, nx, ny)
            return kind, grid, time, window_end, dict(zip(names, planes))
        raise FieldFormatError(f"unknown field kind {kind}")


# ---------------------------------------------------------------------------
# Velocity series directories
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"


def write_series(series: VelocitySeries, out_dir, prefix="vel"):
    """Write every frame plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(len(series)):
        name = f"{prefix}_{i:06d}.f2d"
        write_field(series.frame(i), out_dir / name)
        lines.append(f"{name}\t{float(series.times[i])!r}\n")
    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("".join(lines))
    return manifest


def read_series(manifest_path) -> VelocitySeries:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    base = manifest_path.parent
    frames = []
    for line in manifest_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rel, t = line.split("\t")
        except ValueError as exc:
            raise FieldFormatError(f"bad manifest line {line!r}") from exc
        f = read_field(base / rel)
        if not isinstance(f, VectorField2D):
            raise FieldFormatError(f"{rel} is not a vector field")
        if abs(f.time - float(t)) > 1e-12 * max(1.0, abs(f.time)):
            raise FieldFormatError(f"{rel}: manifest time {t} disagrees with header")
        frames.append(f)
    if not frames:
        raise FieldFormatError(f"empty series manifest {manifest_path}")
    return VelocitySeries.from_frames(frames)
