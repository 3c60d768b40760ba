"""Photoacoustic tomography reconstruction from channel-subsampled data."""

from .geometry import (
    ChannelMask,
    Grid,
    Image,
    SensorArray,
    Sinogram,
    make_grid,
    make_sensor_array,
)
from .operators import (
    ForwardGeometry,
    add_noise,
    adjoint,
    apply_mask,
    embed_mask,
    forward,
    forward_geometry,
    make_mask,
    spherical_mean,
)

__all__ = [
    "ChannelMask",
    "ForwardGeometry",
    "Grid",
    "Image",
    "SensorArray",
    "Sinogram",
    "add_noise",
    "adjoint",
    "apply_mask",
    "embed_mask",
    "forward",
    "forward_geometry",
    "make_grid",
    "make_mask",
    "make_sensor_array",
    "spherical_mean",
]

__version__ = "0.1.0"
