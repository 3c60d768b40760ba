"""Classic reconstruction baselines: universal back-projection and TV compressed sensing.

The TV solver is plain proximal gradient descent on

    min_f 0.5 * ||Phi A f - b||^2 + lambda * TV(f)

with the anisotropic TV proximal map evaluated by a fixed number of dual
projected-gradient iterations. The step size defaults to 0.9 / L with L
estimated by the power method on A* Phi^T Phi A.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DivergenceError
from .geometry import ChannelMask, Grid, Image, Sinogram
from .operators import ForwardGeometry, adjoint, apply_mask, embed_mask, forward

# ---------------------------------------------------------------------------
# universal back-projection
# ---------------------------------------------------------------------------

def ubp(s: Sinogram, geom: ForwardGeometry, mask: ChannelMask) -> Image:
    """Universal back-projection of a (possibly channel-reduced) sinogram.

    Each kept channel contributes ``2 p - 2 t dp/dt`` evaluated at the
    acoustic delay of every pixel (linear interpolation in time), weighted by
    ``cos(theta) / distance^2`` and the per-element arc length. The normalizer
    is the full-ring solid angle scaled by the kept-channel fraction, which
    keeps amplitudes comparable across subsampling rates. Pixels whose delay
    falls outside the recorded window contribute nothing.
    """
    if mask.total_channels != geom.sensors.count:
        raise ValueError("mask does not match the sensor count")
    if s.n_channels != mask.n_kept:
        raise ValueError(
            f"sinogram has {s.n_channels} channels, mask keeps {mask.n_kept}"
        )
    if s.n_samples != geom.n_samples:
        raise ValueError("sinogram time axis does not match the geometry")

    grid = geom.grid
    v = geom.sound_speed
    ns = geom.n_samples
    p = s.data
    dpdt = _time_derivative(p, geom.dt)

    X, Y = grid.coords()
    out = np.zeros(grid.shape)
    cx, cy = geom.sensors.center
    for row, ch in enumerate(mask.kept):
        sx, sy = geom.sensors.positions[ch]
        ex, ey = X - sx, Y - sy
        dist = np.hypot(ex, ey)
        # sensors may sit inside the imaged region; keep the kernel finite there
        dist = np.maximum(dist, grid.dx / 2.0)
        delay = dist / v

        pos = (delay - geom.t0) / geom.dt
        valid = (pos >= 0.0) & (pos <= ns - 1)
        k0 = np.clip(pos.astype(np.int64), 0, ns - 2)
        frac = np.clip(pos - k0, 0.0, 1.0)
        pval = p[row, k0] * (1.0 - frac) + p[row, k0 + 1] * frac
        dval = dpdt[row, k0] * (1.0 - frac) + dpdt[row, k0 + 1] * frac

        nx_, ny_ = (cx - sx) / geom.sensors.radius, (cy - sy) / geom.sensors.radius
        cos0 = (nx_ * ex + ny_ * ey) / dist
        out += np.where(valid, (2.0 * pval - 2.0 * delay * dval) * cos0 / dist**2, 0.0)

    arc_per_element = 2.0 * np.pi * geom.sensors.radius / mask.total_channels
    omega0 = 2.0 * np.pi * mask.keep_fraction
    out *= arc_per_element / omega0
    return Image(grid=grid, values=out)


def _time_derivative(traces: np.ndarray, dt: float) -> np.ndarray:
    """Central differences along the sample axis, one-sided at the ends."""
    d = np.empty_like(traces)
    d[:, 1:-1] = (traces[:, 2:] - traces[:, :-2]) / (2.0 * dt)
    d[:, 0] = (traces[:, 1] - traces[:, 0]) / dt
    d[:, -1] = (traces[:, -1] - traces[:, -2]) / dt
    return d


# ---------------------------------------------------------------------------
# total variation
# ---------------------------------------------------------------------------

def tv_seminorm(f: Image | np.ndarray) -> float:
    """Anisotropic TV: sum of absolute forward differences, Neumann boundary."""
    v = f.values if isinstance(f, Image) else np.asarray(f, dtype=np.float64)
    return float(np.abs(np.diff(v, axis=0)).sum() + np.abs(np.diff(v, axis=1)).sum())


def _grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.diff(u, axis=0), np.diff(u, axis=1)


def _grad_t(py: np.ndarray, px: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    out[1:, :] += py
    out[:-1, :] -= py
    out[:, 1:] += px
    out[:, :-1] -= px
    return out


def tv_prox(f: Image, weight: float, inner_iters: int = 20) -> Image:
    """Proximal map of ``weight * TV`` via dual projected gradient.

    Solves argmin_u 0.5*||u - f||^2 + weight*TV(u) approximately with
    ``inner_iters`` fixed dual iterations; the dual variables live in the
    componentwise box [-1, 1] (anisotropic TV) and the step 1/8 matches the
    Lipschitz bound of the discrete Laplacian.
    """
    if weight < 0:
        raise ValueError(f"prox weight must be non-negative, got {weight}")
    if inner_iters < 1:
        raise ValueError("need at least one inner iteration")
    if weight == 0.0:
        return f
    v = f.values
    py = np.zeros((v.shape[0] - 1, v.shape[1]))
    px = np.zeros((v.shape[0], v.shape[1] - 1))
    tau = 0.125
    for _ in range(inner_iters):
        u = v - weight * _grad_t(py, px, v.shape)
        gy, gx = _grad(u)
        py = np.clip(py + (tau / weight) * gy, -1.0, 1.0)
        px = np.clip(px + (tau / weight) * gx, -1.0, 1.0)
    u = v - weight * _grad_t(py, px, v.shape)
    return Image(grid=f.grid, values=u)


# ---------------------------------------------------------------------------
# proximal-gradient TV solver
# ---------------------------------------------------------------------------

def estimate_normal_operator_norm(
    geom: ForwardGeometry,
    mask: ChannelMask,
    iters: int = 50,
    seed: int = 0,
) -> float:
    """Power-method estimate of L = ||A* Phi^T Phi A|| (squared operator norm)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(geom.grid.shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = apply_mask(forward(Image(geom.grid, x), geom), mask)
        z = adjoint(embed_mask(y, mask), geom).values
        lam = float(np.linalg.norm(z))
        if lam == 0.0:
            return 0.0
        x = z / lam
    return lam


@dataclass
class TvResult:
    """Final image plus the data-consistency objective after each update."""

    image: Image
    objective: np.ndarray


def recon_tv(
    b: Sinogram,
    mask: ChannelMask,
    geom: ForwardGeometry,
    lam: float,
    step: float | None = None,
    iters: int = 300,
    inner_iters: int = 20,
) -> TvResult:
    """Proximal-gradient TV reconstruction from a channel-reduced sinogram.

    Iterates ``f <- prox_{step*lam*TV}(f - step * A* Phi^T (Phi A f - b))``
    from f = 0 and records ``0.5 * ||Phi A f - b||^2`` after every update.
    ``step=None`` uses 0.9 / L with L from :func:`estimate_normal_operator_norm`.
    """
    if b.n_channels != mask.n_kept:
        raise ValueError("b must be the channel-reduced sinogram for this mask")
    if b.n_samples != geom.n_samples:
        raise ValueError("sinogram time axis does not match the geometry")
    if step is None:
        lip = estimate_normal_operator_norm(geom, mask)
        if lip == 0.0:
            raise ValueError("operator norm estimate is zero; check the geometry")
        step = 0.9 / lip
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")

    f = Image(geom.grid, np.zeros(geom.grid.shape))
    objective = []
    for n in range(iters):
        residual = apply_mask(forward(f, geom), mask).data - b.data
        if n > 0:
            objective.append(0.5 * float(np.sum(residual**2)))
        g = adjoint(embed_mask(b.with_data(residual), mask), geom).values
        vals = f.values - step * g
        if not np.isfinite(vals).all():
            raise DivergenceError(
                f"TV reconstruction diverged at iteration {n}", iteration=n
            )
        f = tv_prox(Image(geom.grid, vals), step * lam, inner_iters)
    residual = apply_mask(forward(f, geom), mask).data - b.data
    objective.append(0.5 * float(np.sum(residual**2)))
    return TvResult(image=f, objective=np.asarray(objective))
