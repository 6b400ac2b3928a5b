"""Parser for the binary frame format and the run manifest CSV.

Frame layout (little endian): magic "LGCP", then a <IIIId header
(version, dim, n_fluid, n_solid, time), then three f64 arrays in order:
fluid positions (n_fluid x dim), fluid velocities (n_fluid x dim), solid
node positions (n_solid x dim).

The manifest is a CSV whose first line is "# config_hash <hex>" followed
by a header row and one diagnostics row per frame.
"""

import os
import re
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"LGCP"
VERSION = 1
_HEADER = struct.Struct("<IIIId")
_FRAME_RE = re.compile(r"^frame_(\d{6})\.bin$")


class MalformedFrameError(ValueError):
    """Raised for unparseable frame files; names the file and byte offset."""

    def __init__(self, path, offset, why):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {why}")


@dataclass
class FrameRecord:
    version: int
    dim: int
    time: float
    fluid_positions: np.ndarray
    fluid_velocities: np.ndarray
    solid_positions: np.ndarray

    @property
    def n_fluid(self):
        return len(self.fluid_positions)

    @property
    def n_solid(self):
        return len(self.solid_positions)


def parse_frame(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise MalformedFrameError(path, 0,
                                  f"bad magic {data[:4]!r} (want {MAGIC!r})")
    if len(data) < 4 + _HEADER.size:
        raise MalformedFrameError(path, len(data), "truncated header")
    version, dim, nf, ns, time = _HEADER.unpack_from(data, 4)
    if version != VERSION:
        raise MalformedFrameError(path, 4, f"unsupported version {version}")
    if dim not in (2, 3):
        raise MalformedFrameError(path, 8, f"invalid dimension {dim}")
    off = 4 + _HEADER.size
    need = off + 8 * dim * (2 * nf + ns)
    if len(data) != need:
        raise MalformedFrameError(
            path, min(len(data), need),
            f"expected {need} bytes total, file has {len(data)}")

    def arr(count):
        nonlocal off
        out = np.frombuffer(data, dtype="<f8", count=count * dim,
                            offset=off).reshape(count, dim)
        off += 8 * count * dim
        return out

    return FrameRecord(version, dim, time, arr(nf), arr(nf), arr(ns))


def serialize_frame(rec: FrameRecord) -> bytes:
    """Inverse of parse_frame; reproduces the input bytes exactly."""
    out = [MAGIC, _HEADER.pack(rec.version, rec.dim, rec.n_fluid,
                               rec.n_solid, rec.time)]
    for a in (rec.fluid_positions, rec.fluid_velocities,
              rec.solid_positions):
        out.append(np.asarray(a, dtype="<f8").tobytes())
    return b"".join(out)


def read_manifest(path):
    """Parse the run manifest; returns (config_hash, column dict)."""
    with open(path) as fh:
        first = fh.readline().strip()
        cfg_hash = None
        if first.startswith("#"):
            cfg_hash = first.split()[-1]
            header = fh.readline().strip()
        else:
            header = first
        cols = header.split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    arr = np.array(rows, dtype=float) if rows else np.zeros((0, len(cols)))
    if rows and arr.shape[1] != len(cols):
        raise ValueError(f"{path}: row width does not match header")
    return cfg_hash, {c: arr[:, i] for i, c in enumerate(cols)}


def require_columns(columns, names, source="manifest"):
    for name in names:
        if name not in columns:
            raise ValueError(f"{source}: missing column {name!r}")


@dataclass
class FrameSeries:
    """All frames of one run, plus the manifest table when present."""

    frames: list
    config_hash: str
    manifest: dict

    @property
    def times(self):
        return np.array([f.time for f in self.frames])


def load_series(run_dir) -> FrameSeries:
    names = sorted(n for n in os.listdir(run_dir) if _FRAME_RE.match(n))
    if not names:
        raise ValueError(f"{run_dir}: no frame_NNNNNN.bin files found")
    indices = [int(_FRAME_RE.match(n).group(1)) for n in names]
    if indices != list(range(len(indices))):
        raise ValueError(f"{run_dir}: frame indices not contiguous from 0 "
                         f"(found {indices})")
    frames = [parse_frame(os.path.join(run_dir, n)) for n in names]
    head = frames[0]
    for k, f in enumerate(frames):
        if (f.dim, f.n_fluid, f.n_solid) != (head.dim, head.n_fluid,
                                             head.n_solid):
            raise ValueError(f"{run_dir}: frame {k} header inconsistent "
                             "with frame 0")
    cfg_hash, manifest = None, {}
    mpath = os.path.join(run_dir, "manifest.csv")
    if os.path.exists(mpath):
        cfg_hash, manifest = read_manifest(mpath)
    return FrameSeries(frames, cfg_hash, manifest)
