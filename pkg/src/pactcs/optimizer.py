"""RMSProp with functional (copy-on-update) semantics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import DecoderParams
from .exceptions import DivergenceError


@dataclass(frozen=True, eq=False)
class OptState:
    """Per-parameter running averages of squared gradients."""

    acc: dict[str, np.ndarray]
    lr: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8


def init_opt_state(
    params: DecoderParams, lr: float = 1e-3, rho: float = 0.9, epsilon: float = 1e-8
) -> OptState:
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"decay must be in [0, 1), got {rho}")
    acc = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    return OptState(acc=acc, lr=lr, rho=rho, epsilon=epsilon)


def rmsprop_step(
    params: DecoderParams, grads: dict[str, np.ndarray], state: OptState
) -> tuple[DecoderParams, OptState]:
    """One update: acc <- rho*acc + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(acc)+eps)."""
    new_tensors: dict[str, np.ndarray] = {}
    new_acc: dict[str, np.ndarray] = {}
    for name, theta in params.tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        acc = state.rho * state.acc[name] + (1.0 - state.rho) * g * g
        new_tensors[name] = theta - state.lr * g / (np.sqrt(acc) + state.epsilon)
        new_acc[name] = acc
    new_params = DecoderParams(arch=params.arch, tensors=new_tensors)
    new_state = OptState(
        acc=new_acc, lr=state.lr, rho=state.rho, epsilon=state.epsilon
    )
    return new_params, new_state
