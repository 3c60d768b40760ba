"""Geometry and container types shared by the whole package.

Conventions fixed here once and for all:

* images are stored row-major with x fastest, i.e. ``values[iy, ix]``,
  and pixel ``(ix, iy)`` has its center at ``origin + (ix*dx, iy*dx)``;
* sensor channel 0 sits at angle 0 and the array winds counterclockwise;
* all containers are immutable after construction (arrays are marked
  read-only) and may be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform square-pixel image grid in physical (meter) coordinates."""

    nx: int
    ny: int
    dx: float
    origin: tuple[float, float]

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ValueError(f"pixel pitch must be positive, got {self.dx}")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of images on this grid, (ny, nx)."""
        return (self.ny, self.nx)

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.dx, self.ny * self.dx)

    def pixel_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (self.origin[0] + ix * self.dx, self.origin[1] + iy * self.dx)

    def nearest_pixel(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(round((x - self.origin[0]) / self.dx)),
            int(round((y - self.origin[1]) / self.dx)),
        )

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates as two (ny, nx) arrays (x, y)."""
        xs = self.origin[0] + self.dx * np.arange(self.nx)
        ys = self.origin[1] + self.dx * np.arange(self.ny)
        return np.meshgrid(xs, ys)


def make_grid(nx: int, ny: int, extent_m: float) -> Grid:
    """Build a grid of ``nx`` x ``ny`` pixels spanning ``extent_m`` meters in x.

    The pixel pitch is ``extent_m / nx`` and the grid is centered on (0, 0),
    which matches a full-ring detection geometry around the origin.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {nx}x{ny}")
    if not extent_m > 0:
        raise ValueError(f"extent must be positive, got {extent_m}")
    dx = extent_m / nx
    origin = (-0.5 * (nx - 1) * dx, -0.5 * (ny - 1) * dx)
    return Grid(nx=nx, ny=ny, dx=dx, origin=origin)


@dataclass(frozen=True, eq=False)
class SensorArray:
    """Point detectors evenly spaced on a circle, counterclockwise from angle 0."""

    count: int
    radius: float
    center: tuple[float, float]
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "positions", _freeze(self.positions))
        if self.count < 2:
            raise ValueError(f"need at least 2 channels, got {self.count}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        r = np.hypot(
            self.positions[:, 0] - self.center[0],
            self.positions[:, 1] - self.center[1],
        )
        if not np.allclose(r, self.radius, rtol=1e-12, atol=0.0):
            raise ValueError("sensor positions do not lie on the stated circle")


def make_sensor_array(
    count: int, radius: float, center: tuple[float, float] = (0.0, 0.0)
) -> SensorArray:
    """Place ``count`` channels on a circle; channel k at angle 2*pi*k/count."""
    if count < 2:
        raise ValueError(f"need at least 2 channels, got {count}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    ang = 2.0 * math.pi * np.arange(count) / count
    pos = np.stack(
        [center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1
    )
    return SensorArray(count=count, radius=radius, center=tuple(center), positions=pos)


@dataclass(frozen=True, eq=False)
class Image:
    """Initial-pressure map on a grid. Values are (ny, nx), finite, float64."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(
                f"image values shaped {v.shape} do not match grid {self.grid.shape}"
            )
        if not np.isfinite(v).all():
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def n_pixels(self) -> int:
        return self.grid.n_pixels

    def ravel(self) -> np.ndarray:
        """Flat copy-free view, row-major with x fastest."""
        return self.values.reshape(-1)


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Multi-channel pressure traces: data[channel, sample] at t0 + k*dt."""

    data: np.ndarray = field(repr=False)
    dt: float = 1.0
    t0: float = 0.0
    sound_speed: float = 1500.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"sinogram data must be 2-D, got shape {d.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.sound_speed > 0:
            raise ValueError(f"sound speed must be positive, got {self.sound_speed}")
        if not np.isfinite(d).all():
            raise ValueError("sinogram contains non-finite values")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def with_data(self, data: np.ndarray) -> "Sinogram":
        """New sinogram with the same time axis but different traces."""
        return Sinogram(
            data=data, dt=self.dt, t0=self.t0, sound_speed=self.sound_speed
        )


@dataclass(frozen=True, eq=False)
class ChannelMask:
    """Channel-selection subsampling operator: keeps a sorted subset of rows."""

    total_channels: int
    kept: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = np.asarray(self.kept, dtype=np.int64)
        if k.ndim != 1 or k.size == 0:
            raise ValueError("mask must keep at least one channel")
        if k.min() < 0 or k.max() >= self.total_channels:
            raise ValueError("kept channel index out of range")
        if not np.all(np.diff(k) > 0):
            raise ValueError("kept channels must be sorted and distinct")
        k = k.copy()
        k.flags.writeable = False
        object.__setattr__(self, "kept", k)

    @property
    def n_kept(self) -> int:
        return int(self.kept.size)

    @property
    def keep_fraction(self) -> float:
        return self.n_kept / self.total_channels

    def is_identity(self) -> bool:
        return self.n_kept == self.total_channels
