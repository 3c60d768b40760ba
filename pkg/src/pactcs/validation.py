"""Input validation helpers shared by the functional API and the estimators."""

from __future__ import annotations

import numpy as np

from .geometry import ChannelMask, Image, Sinogram
from .operators import ForwardGeometry


def check_array(X, name: str = "X", ndim: int = 2) -> np.ndarray:
    """Coerce to a finite float64 array of the expected dimensionality."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def sino_row_length(geom: ForwardGeometry, mask: ChannelMask) -> int:
    return mask.n_kept * geom.n_samples


def check_sino_matrix(X, geom: ForwardGeometry, mask: ChannelMask) -> np.ndarray:
    """Validate a batch of flattened channel-reduced sinograms (one per row)."""
    arr = check_array(X, "X")
    expect = sino_row_length(geom, mask)
    if arr.shape[1] != expect:
        raise ValueError(
            f"each row must hold a flattened {mask.n_kept} x {geom.n_samples} "
            f"sinogram ({expect} values), got {arr.shape[1]}"
        )
    return arr


def rows_to_sinograms(X: np.ndarray, geom: ForwardGeometry, mask: ChannelMask):
    for row in X:
        yield geom.empty_like(row.reshape(mask.n_kept, geom.n_samples))


def images_to_rows(images) -> np.ndarray:
    return np.stack([img.ravel() for img in images])


def check_geometry_pair(geom, mask) -> None:
    if not isinstance(geom, ForwardGeometry):
        raise TypeError("geometry must be a ForwardGeometry")
    if not isinstance(mask, ChannelMask):
        raise TypeError("mask must be a ChannelMask")
    if mask.total_channels != geom.sensors.count:
        raise ValueError(
            f"mask covers {mask.total_channels} channels but the array has "
            f"{geom.sensors.count}"
        )


def as_sinogram(X, geom: ForwardGeometry, mask: ChannelMask) -> Sinogram:
    """Accept a Sinogram or a (n_kept, n_samples) array."""
    if isinstance(X, Sinogram):
        return X
    arr = check_array(X, "sinogram")
    if arr.shape != (mask.n_kept, geom.n_samples):
        raise ValueError(
            f"expected a ({mask.n_kept}, {geom.n_samples}) sinogram, got {arr.shape}"
        )
    return geom.empty_like(arr)


def as_image(X, grid) -> Image:
    if isinstance(X, Image):
        if X.grid != grid:
            raise ValueError("image grid mismatch")
        return X
    arr = check_array(X, "image")
    return Image(grid=grid, values=arr)
