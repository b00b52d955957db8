"""Manufactured advection-reaction problem on the swirled square."""

from __future__ import annotations

import numpy as np

from .dg import constant_reaction, rotating_velocity

REACTION = 0.1


def exact_solution(x: np.ndarray) -> np.ndarray:
    """u = exp(0.1 sin(5.1x - 6.2y) + 0.3 cos(4.3x + 3.4y))."""
    X, Y = x[..., 0], x[..., 1]
    return np.exp(0.1 * np.sin(5.1 * X - 6.2 * Y) + 0.3 * np.cos(4.3 * X + 3.4 * Y))


def exact_gradient(x: np.ndarray) -> np.ndarray:
    X, Y = x[..., 0], x[..., 1]
    u = exact_solution(x)
    a, b = 5.1 * X - 6.2 * Y, 4.3 * X + 3.4 * Y
    ux = u * (0.51 * np.cos(a) - 1.29 * np.sin(b))
    uy = u * (-0.62 * np.cos(a) - 1.02 * np.sin(b))
    return np.stack([ux, uy], axis=-1)


def source(x: np.ndarray) -> np.ndarray:
    """f = beta . grad u + c u (beta is divergence free)."""
    beta = np.stack([-x[..., 1], x[..., 0]], axis=-1)
    return np.einsum("...d,...d->...", beta, exact_gradient(x)) + REACTION * exact_solution(x)


velocity = rotating_velocity()
reaction = constant_reaction(REACTION)
