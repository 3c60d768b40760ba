"""Bit-exact file formats: the PADT tensor container and 16-bit PGM export.

PADT container layout (all integers little-endian):

    magic   4 bytes  b"PADT"
    version u32      = 1
    count   u32      number of records
    record: name_len u16, name UTF-8, rank u8, rank x u64 dims,
            payload  prod(dims) x IEEE-754 binary64 little-endian, row-major

Images, sinograms, masks and parameter checkpoints all serialize through this
one container using conventional record names ("image", "sino", "mask.kept",
"meta.dt", ...), so there is exactly one binary parser in the project.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .geometry import ChannelMask, Grid, Image, Sinogram

MAGIC = b"PADT"
VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated container; ``offset`` is the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


def write_tensor(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named float64 tensors; record order follows the mapping order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8", order="C")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"record name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"rank {arr.ndim} exceeds the container limit")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_tensor(path: str | Path) -> dict[str, np.ndarray]:
    """Read a PADT container back into name -> float64 array."""
    buf = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"truncated {what}", offset=off)
        piece = buf[off : off + n]
        off += n
        return piece

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    (count,) = struct.unpack("<I", take(4, "record count"))

    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name_off = off
        raw = take(name_len, "record name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("record name is not valid UTF-8", offset=name_off)
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        n_items = 1
        for d in dims:
            n_items *= d
        payload_off = off
        payload = take(8 * n_items, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f8", count=n_items).reshape(dims).copy()
        if name in out:
            raise FormatError(f"duplicate record {name!r}", offset=payload_off)
        out[name] = arr
    if off != len(buf):
        raise FormatError("trailing data after last record", offset=off)
    return out


# ---------------------------------------------------------------------------
# domain objects through the container
# ---------------------------------------------------------------------------

def save_image(path: str | Path, image: Image) -> None:
    write_tensor(
        path,
        {
            "image": image.values,
            "grid.dx": np.float64(image.grid.dx),
            "grid.origin": np.asarray(image.grid.origin),
        },
    )


def load_image(path: str | Path) -> Image:
    rec = read_tensor(path)
    values = rec["image"]
    grid = Grid(
        nx=values.shape[1],
        ny=values.shape[0],
        dx=float(rec["grid.dx"]),
        origin=(float(rec["grid.origin"][0]), float(rec["grid.origin"][1])),
    )
    return Image(grid=grid, values=values)


def save_sinogram(path: str | Path, s: Sinogram) -> None:
    write_tensor(
        path,
        {
            "sino": s.data,
            "meta.dt": np.float64(s.dt),
            "meta.t0": np.float64(s.t0),
            "meta.sound_speed": np.float64(s.sound_speed),
        },
    )


def load_sinogram(path: str | Path) -> Sinogram:
    rec = read_tensor(path)
    return Sinogram(
        data=rec["sino"],
        dt=float(rec["meta.dt"]),
        t0=float(rec["meta.t0"]),
        sound_speed=float(rec["meta.sound_speed"]),
    )


def save_mask(path: str | Path, mask: ChannelMask) -> None:
    write_tensor(
        path,
        {
            "mask.kept": mask.kept.astype(np.float64),
            "mask.total": np.float64(mask.total_channels),
        },
    )


def load_mask(path: str | Path) -> ChannelMask:
    rec = read_tensor(path)
    return ChannelMask(
        total_channels=int(rec["mask.total"]),
        kept=rec["mask.kept"].astype(np.int64),
    )


# ---------------------------------------------------------------------------
# PGM export
# ---------------------------------------------------------------------------

def export_pgm(image: Image, path: str | Path) -> None:
    """16-bit binary PGM (P5, maxval 65535), min-max normalized.

    A constant image maps to mid-gray 32768. This export is lossy by design;
    everything that must round-trip exactly goes through the PADT container.
    """
    v = image.values
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        q = np.full(v.shape, 32768, dtype=">u2")
    else:
        q = np.round((v - lo) / (hi - lo) * 65535.0).astype(">u2")
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())
