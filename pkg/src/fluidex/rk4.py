"""Classical fixed-step RK4 on tuples of numpy arrays.

All integrators in the package are built on these two helpers so that step
control and reproducibility live in one place.  The state is a tuple of
arrays; the RHS maps a state tuple to a derivative tuple of matching shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

State = tuple[np.ndarray, ...]


def rk4_step(rhs: Callable[[State], State], y: State, h: float) -> State:
    k1 = rhs(y)
    k2 = rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k1)))
    k3 = rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k2)))
    k4 = rhs(tuple(yi + h * ki for yi, ki in zip(y, k3)))
    return tuple(
        yi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for yi, a, b, c, d in zip(y, k1, k2, k3, k4)
    )


def n_steps_for(t_final: float, step: float) -> int:
    """Number of fixed steps covering t_final; t_final must be >= 0."""
    if t_final < 0:
        raise ValueError("t_final must be non-negative")
    if step <= 0:
        raise ValueError("step must be positive")
    return int(round(t_final / step))


def checkpoint_indices(times: Sequence[float], step: float) -> np.ndarray:
    """Map checkpoint times to step indices (nearest step multiple)."""
    idx = np.array([int(round(t / step)) for t in times], dtype=int)
    if np.any(idx < 0):
        raise ValueError("checkpoint times must be non-negative")
    return idx
