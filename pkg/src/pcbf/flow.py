"""Linear-interpolant flow matching: paths, the Euler flow map, sampling.

The generative direction integrates the learned velocity field from base
noise at t=0 to a return sample at t=1 with left-endpoint explicit Euler
steps of size 1/nfe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, UsageError
from .rng import RngStream

__all__ = [
    "FlowConfig",
    "linear_interpolant",
    "cfm_target",
    "euler_integrate",
    "euler_integrate_batch",
    "euler_integrate_partial_batch",
    "velocity_batch",
    "sample_returns",
    "stack_inputs",
]


@dataclass(frozen=True)
class FlowConfig:
    """Euler step count for flow integration; t is sampled Unif[0,1]."""

    nfe: int = 10

    def __post_init__(self):
        if self.nfe < 1:
            raise ConfigError(f"nfe must be >= 1, got {self.nfe}")


def linear_interpolant(x0: float, x1: float, t: float) -> float:
    """Straight-line path value (1-t)*x0 + t*x1 for t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"t must lie in [0, 1], got {t}")
    return (1.0 - t) * x0 + t * x1


def cfm_target(x0: float, x1: float) -> float:
    """Regression target of plain flow matching: the displacement x1 - x0."""
    return x1 - x0


def stack_inputs(z: np.ndarray, t: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    """Assemble network inputs [z, t, context...] for a batch."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.isscalar(t) or t.ndim == 0:
        t = np.full_like(z, float(t))
    return np.column_stack([z, t, contexts])


def velocity_batch(params: nn.MlpParams, t, z: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    """Evaluate the velocity field at (t, z | context) for a batch."""
    return nn.forward_batch(params, stack_inputs(z, t, contexts))


def euler_integrate(field, x0: float, context: np.ndarray, nfe: int) -> float:
    """Integrate dz/dt = field(t, z, context) from t=0 to t=1.

    Uses ``nfe`` explicit Euler steps of size 1/nfe, evaluating the field at
    the left endpoint of each step; realizes the time-1 flow map.
    """
    if nfe < 1:
        raise ConfigError(f"nfe must be >= 1, got {nfe}")
    z = float(x0)
    h = 1.0 / nfe
    for k in range(nfe):
        v = float(field(k * h, z, context))
        if not np.isfinite(v):
            raise NumericError(f"non-finite field value at Euler step {k}")
        z = z + h * v
    return z


def euler_integrate_batch(
    params: nn.MlpParams, x0: np.ndarray, contexts: np.ndarray, nfe: int
) -> np.ndarray:
    """Vectorized time-1 flow map of the network field for a batch of noises."""
    return euler_integrate_partial_batch(params, x0, contexts, nfe, nfe)


def euler_integrate_partial_batch(
    params: nn.MlpParams, x0: np.ndarray, contexts: np.ndarray, nfe: int, n_steps: int
) -> np.ndarray:
    """Run the first ``n_steps`` of an ``nfe``-step Euler integration.

    Stops at time n_steps/nfe; with n_steps == nfe this is the full flow map.
    """
    if nfe < 1:
        raise ConfigError(f"nfe must be >= 1, got {nfe}")
    if not 0 <= n_steps <= nfe:
        raise UsageError(f"n_steps must lie in [0, {nfe}], got {n_steps}")
    z = np.asarray(x0, dtype=float).copy()
    h = 1.0 / nfe
    # contexts are fixed along the trajectory: assemble the input matrix once
    # and refresh only the (z, t) columns each step
    buf = np.empty((z.size, 2 + contexts.shape[1]))
    buf[:, 2:] = contexts
    for k in range(n_steps):
        buf[:, 0] = z
        buf[:, 1] = k * h
        v = nn.forward_batch(params, buf)
        if not np.isfinite(v).all():
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise NumericError(f"non-finite field value at Euler step {k} (batch item {bad})")
        z += h * v
    return z


def sample_returns(
    params: nn.MlpParams, context: np.ndarray, n: int, rng: RngStream, nfe: int
) -> np.ndarray:
    """Draw n return samples by flowing i.i.d. standard normals through the field."""
    if n < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    x0 = rng.normal(n)
    contexts = np.tile(np.asarray(context, dtype=float), (n, 1))
    return euler_integrate_batch(params, x0, contexts, nfe)
