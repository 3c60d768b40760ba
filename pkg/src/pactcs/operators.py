"""Discrete photoacoustic forward operator, its exact adjoint, and subsampling.

The forward map takes an initial-pressure image f to channel traces in three
stages, each of which is linear and has an exact matrix transpose:

1. spherical mean: for channel i and sample k the circle of radius
   ``v*(t0 + k*dt)`` around the sensor is discretized into arc points no more
   than ``dx/2`` apart; every point deposits its arc-segment length through
   bilinear interpolation onto the four surrounding pixels;
2. a diagonal scaling of sample k by ``1 / (4*pi*v^2 * v*t_k)`` (with t_k
   clamped below by dt so the first sample is finite);
3. a central-difference time derivative, one-sided at both ends.

The adjoint applies the three transposes in reverse. Both directions share
one cached sparse matrix per geometry, so the adjoint pair is exact to
floating-point rounding rather than "approximately adjoint by symmetry".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .geometry import ChannelMask, Grid, Image, SensorArray, Sinogram


@dataclass(frozen=True, eq=False)
class ForwardGeometry:
    """Everything needed to evaluate the forward map: grid, sensors, time axis."""

    grid: Grid
    sensors: SensorArray
    n_samples: int
    dt: float
    t0: float
    sound_speed: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_samples < 2:
            raise ValueError("need at least 2 time samples")
        reach = self.sound_speed * (self.t0 + self.n_samples * self.dt)
        if reach < max_pixel_sensor_distance(self.grid, self.sensors):
            raise ValueError(
                "time axis too short: signals from the farthest pixel are not recorded"
            )

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.sensors.count, self.n_samples)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def empty_like(self, data: np.ndarray) -> Sinogram:
        return Sinogram(data=data, dt=self.dt, t0=self.t0, sound_speed=self.sound_speed)

    def _key(self):
        g, s = self.grid, self.sensors
        return (
            g.nx, g.ny, g.dx, g.origin,
            s.count, s.positions.tobytes(),
            self.n_samples, self.dt, self.t0, self.sound_speed,
        )


def max_pixel_sensor_distance(grid: Grid, sensors: SensorArray) -> float:
    """Largest distance from any pixel center to any sensor."""
    corners = np.array(
        [
            grid.pixel_center(0, 0),
            grid.pixel_center(grid.nx - 1, 0),
            grid.pixel_center(0, grid.ny - 1),
            grid.pixel_center(grid.nx - 1, grid.ny - 1),
        ]
    )
    d = np.hypot(
        corners[:, None, 0] - sensors.positions[None, :, 0],
        corners[:, None, 1] - sensors.positions[None, :, 1],
    )
    return float(d.max())


def forward_geometry(
    grid: Grid,
    sensors: SensorArray,
    sound_speed: float = 1500.0,
    dt: float | None = None,
    t0: float = 0.0,
    n_samples: int | None = None,
    margin: float = 0.1,
) -> ForwardGeometry:
    """Build a geometry with the default time axis.

    Defaults: ``dt`` such that ``v*dt = dx/2`` and enough samples to cover the
    farthest pixel plus ``margin`` (10%). Pass ``dt`` explicitly to emulate a
    fixed acquisition rate (e.g. 25 ns for 40 MSa/s hardware).
    """
    if dt is None:
        dt = grid.dx / (2.0 * sound_speed)
    if n_samples is None:
        reach = max_pixel_sensor_distance(grid, sensors) * (1.0 + margin)
        n_samples = int(math.ceil((reach / sound_speed - t0) / dt)) + 1
    return ForwardGeometry(
        grid=grid, sensors=sensors, n_samples=n_samples, dt=dt, t0=t0,
        sound_speed=sound_speed,
    )


# ---------------------------------------------------------------------------
# sparse system assembly (cached per geometry)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4)
def _system(key):
    (nx, ny, dx, origin, count, pos_bytes, ns, dt, t0, v) = key
    positions = np.frombuffer(pos_bytes, dtype=np.float64).reshape(count, 2)
    ox, oy = origin

    radii = v * (t0 + dt * np.arange(ns))
    max_step = dx / 2.0

    rows, cols, vals = [], [], []
    for ich in range(count):
        sx, sy = positions[ich]
        live = np.nonzero(radii > 0.0)[0]
        if live.size == 0:
            continue
        r = radii[live]
        n_arc = np.ceil(2.0 * np.pi * r / max_step).astype(np.int64)
        total = int(n_arc.sum())
        # per-point radius, segment length, sample index and angle index
        rep_r = np.repeat(r, n_arc)
        rep_k = np.repeat(live, n_arc)
        rep_n = np.repeat(n_arc, n_arc)
        m = np.arange(total) - np.repeat(np.cumsum(n_arc) - n_arc, n_arc)
        theta = 2.0 * np.pi * (m + 0.5) / rep_n
        seg = 2.0 * np.pi * rep_r / rep_n

        px = sx + rep_r * np.cos(theta)
        py = sy + rep_r * np.sin(theta)
        u = (px - ox) / dx
        w = (py - oy) / dx
        inside = (u >= 0.0) & (u <= nx - 1) & (w >= 0.0) & (w <= ny - 1)
        if not inside.any():
            continue
        u, w = u[inside], w[inside]
        seg = seg[inside]
        row = ich * ns + rep_k[inside]

        i0 = np.minimum(u.astype(np.int64), nx - 2) if nx > 1 else np.zeros(u.size, np.int64)
        j0 = np.minimum(w.astype(np.int64), ny - 2) if ny > 1 else np.zeros(w.size, np.int64)
        fu = u - i0
        fw = w - j0

        base = j0 * nx + i0
        quads = (
            (base, (1.0 - fu) * (1.0 - fw)),
            (base + 1, fu * (1.0 - fw)) if nx > 1 else None,
            (base + nx, (1.0 - fu) * fw) if ny > 1 else None,
            (base + nx + 1, fu * fw) if nx > 1 and ny > 1 else None,
        )
        for quad in quads:
            if quad is None:
                continue
            c, wt = quad
            rows.append(row)
            cols.append(c)
            vals.append(seg * wt)

    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = np.zeros(0, np.int64)
        cols = np.zeros(0, np.int64)
        vals = np.zeros(0, np.float64)

    smat = sp.coo_matrix(
        (vals, (rows, cols)), shape=(count * ns, nx * ny)
    ).tocsr()
    smat.sum_duplicates()

    # central-difference derivative matrix, one-sided at the ends
    d = sp.lil_matrix((ns, ns))
    d[0, 0], d[0, 1] = -1.0, 1.0
    d[ns - 1, ns - 2], d[ns - 1, ns - 1] = -1.0, 1.0
    for k in range(1, ns - 1):
        d[k, k - 1], d[k, k + 1] = -0.5, 0.5
    deriv = (d / dt).tocsr()

    t_clamped = np.maximum(t0 + dt * np.arange(ns), dt)
    scale = 1.0 / (4.0 * np.pi * v**2 * v * t_clamped)

    return smat, smat.T.tocsr(), deriv, deriv.T.tocsr(), scale


def _parts(geom: ForwardGeometry):
    return _system(geom._key())


def clear_operator_cache():
    """Drop cached system matrices (they can be hundreds of MB at full scale)."""
    _system.cache_clear()


# ---------------------------------------------------------------------------
# operator application
# ---------------------------------------------------------------------------

def _check_image(f: Image, geom: ForwardGeometry):
    if f.grid != geom.grid:
        raise ValueError("image grid does not match the operator geometry")


def _check_sino(s: Sinogram, geom: ForwardGeometry):
    if s.data.shape != geom.sino_shape:
        raise ValueError(
            f"sinogram shaped {s.data.shape} does not match geometry {geom.sino_shape}"
        )


def spherical_mean(f: Image, geom: ForwardGeometry) -> Sinogram:
    """Arc integrals of f: trace (i, k) integrates over the circle v*t_k around sensor i."""
    _check_image(f, geom)
    smat, _, _, _, _ = _parts(geom)
    data = (smat @ f.ravel()).reshape(geom.sino_shape)
    return geom.empty_like(data)


def forward(f: Image, geom: ForwardGeometry) -> Sinogram:
    """Full forward map: time derivative of the scaled spherical means."""
    _check_image(f, geom)
    smat, _, deriv, _, scale = _parts(geom)
    s0 = (smat @ f.ravel()).reshape(geom.sino_shape)
    s1 = s0 * scale[None, :]
    data = (deriv @ s1.T).T
    return geom.empty_like(np.ascontiguousarray(data))


def adjoint(s: Sinogram, geom: ForwardGeometry) -> Image:
    """Exact numerical adjoint of :func:`forward`."""
    _check_sino(s, geom)
    _, smat_t, _, deriv_t, scale = _parts(geom)
    g1 = (deriv_t @ s.data.T).T
    g2 = g1 * scale[None, :]
    vals = (smat_t @ g2.reshape(-1)).reshape(geom.grid.shape)
    return Image(grid=geom.grid, values=vals)


# ---------------------------------------------------------------------------
# channel subsampling and noise
# ---------------------------------------------------------------------------

def make_mask(
    total: int, keep_fraction: float, scheme: str = "uniform", seed: int = 0
) -> ChannelMask:
    """Channel-subsampling mask keeping roughly ``keep_fraction`` of ``total``.

    The uniform scheme keeps channels ``floor(k / keep_fraction)`` (every other
    channel at 0.5); the random scheme draws ``ceil(total * keep_fraction)``
    distinct channels from a seeded generator.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep fraction must be in (0, 1], got {keep_fraction}")
    n_keep = int(math.ceil(total * keep_fraction))
    if scheme == "uniform":
        kept = np.unique(np.floor(np.arange(n_keep) / keep_fraction).astype(np.int64))
        kept = kept[kept < total]
    elif scheme == "random":
        rng = np.random.default_rng(seed)
        kept = np.sort(rng.choice(total, size=n_keep, replace=False))
    else:
        raise ValueError(f"unknown mask scheme {scheme!r}")
    return ChannelMask(total_channels=total, kept=kept)


def apply_mask(s: Sinogram, m: ChannelMask) -> Sinogram:
    """Select the kept channel rows (the subsampling operator itself)."""
    if s.n_channels != m.total_channels:
        raise ValueError(
            f"sinogram has {s.n_channels} channels, mask expects {m.total_channels}"
        )
    return s.with_data(s.data[m.kept])


def embed_mask(s: Sinogram, m: ChannelMask) -> Sinogram:
    """Scatter reduced rows back into a zero-filled full sinogram (the transpose)."""
    if s.n_channels != m.n_kept:
        raise ValueError(
            f"sinogram has {s.n_channels} channels, mask kept {m.n_kept}"
        )
    full = np.zeros((m.total_channels, s.n_samples))
    full[m.kept] = s.data
    return s.with_data(full)


def add_noise(s: Sinogram, snr_db: float, seed: int = 0) -> Sinogram:
    """Add white Gaussian noise at the requested per-sinogram SNR (dB).

    ``snr_db = inf`` disables noise. The noise variance is the mean signal
    power divided by ``10**(snr_db/10)``; the draw is deterministic per seed.
    """
    if snr_db == math.inf:
        return s
    power = float(np.mean(s.data**2))
    if power == 0.0:
        raise ValueError("cannot set an SNR on an all-zero sinogram")
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    return s.with_data(s.data + rng.normal(0.0, sigma, s.data.shape))
