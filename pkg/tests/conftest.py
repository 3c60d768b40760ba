import numpy as np
import pytest

from pactcs import forward_geometry, make_grid, make_sensor_array


@pytest.fixture
def small_geom():
    """16x16 grid with 8 sensors: every operator test's workhorse."""
    grid = make_grid(16, 16, 0.030)
    sensors = make_sensor_array(8, 0.0145)
    return forward_geometry(grid, sensors)


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 0.0) -> float:
    """Relative deviation between two tensors, guarded for near-zero pairs."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def relu_margin(params, z) -> float:
    """Smallest |pre-activation| entering any ReLU of the decoder.

    Finite-difference gradient checks are only meaningful when no ReLU input
    sits within the probe step of its kink, so tests assert this margin.
    """
    from pactcs.decoder import _bn_forward, _conv3_forward, _up_forward

    t = params.tensors
    x = z.z
    margin = np.inf
    for kind, name in params.arch.layer_plan():
        if kind == "conv":
            x = _conv3_forward(x, t[name + ".w"], t[name + ".b"])
        elif kind == "proj":
            y = t[name + ".w"].reshape(1, -1) @ x.reshape(x.shape[0], -1)
            x = y.reshape(1, *x.shape[1:]) + t[name + ".b"][:, None, None]
        elif kind == "bn":
            x, _, _ = _bn_forward(x, t[name + ".g"], t[name + ".b"])
        elif kind == "relu":
            margin = min(margin, float(np.abs(x).min()))
            x = np.where(x > 0, x, 0.0)
        elif kind == "up":
            x = _up_forward(x, t[name + ".w"])
    return margin
