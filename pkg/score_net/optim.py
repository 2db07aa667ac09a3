"""
Adam with bias correction, updating parameters in place.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from score_net.network import GradientBundle, ScoreNetwork
from shared.errors import InputError


@dataclass
class AdamState:
    """First/second moment estimates and the step count."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @classmethod
    def for_parameters(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])

    @classmethod
    def for_network(cls, net: ScoreNetwork) -> "AdamState":
        return cls.for_parameters(net.parameters())


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps_adam: float = 1e-8) -> AdamState:
    """One Adam step on a list of arrays (modified in place)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InputError("parameters, gradients and optimizer state differ in length")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise InputError(f"shape mismatch: parameter {p.shape}, gradient {g.shape}, state {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps_adam)
    return state


def adam_step(net: ScoreNetwork, grads: GradientBundle, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8) -> Tuple[ScoreNetwork, AdamState]:
    """Apply one Adam update to the network's weights and biases."""
    grads.check_matches(net)
    adam_update(net.parameters(), grads.arrays(), state, lr, beta1, beta2, eps_adam)
    return net, state
