"""Coupled Bellman path construction and the lambda control-variate target.

Current and successor return flows are driven by one shared base-noise draw.
The successor endpoint comes from integrating the lagged target field; the
current path interpolates from the shared noise to the one-step Bellman
endpoint r + gamma_eff * x_prime. The training target combines the pathwise
Bellman velocity with a control variate built from the target field's
successor-velocity prediction, weighted by lambda.

Every quantity produced here is a plain number with respect to the online
network: targets are constructed exclusively from the lagged copy, so no
gradient can flow through them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import flow, nn
from .envs import TERMINAL, Transition, pack_transitions
from .errors import ConfigError, UsageError
from .rng import RngStream

if TYPE_CHECKING:  # pragma: no cover
    from .trainer import TrainConfig

__all__ = [
    "CoupledBatchItem",
    "CoupledArrays",
    "successor_path",
    "current_path",
    "current_path_alt",
    "bcfm_target",
    "control_variate",
    "lambda_target",
    "terminal_mask",
    "one_hot_contexts",
    "build_coupled_arrays",
    "build_coupled_batch",
]


@dataclass(frozen=True)
class CoupledBatchItem:
    """One fully constructed training example of the coupled-path pipeline."""

    x0: float
    t: float
    r: float
    gamma_eff: float
    lambda_eff: float
    x_prime: float
    z_succ: float
    z_curr: float
    c_t: float
    u: float


@dataclass(frozen=True)
class CoupledArrays:
    """Vectorized coupled batch plus the pieces the training loss consumes."""

    states: np.ndarray
    next_states: np.ndarray
    x0: np.ndarray
    t: np.ndarray
    r: np.ndarray
    gamma_eff: np.ndarray
    lambda_eff: np.ndarray
    x_prime: np.ndarray
    z_succ: np.ndarray
    z_curr: np.ndarray
    c_t: np.ndarray
    y: np.ndarray
    c: np.ndarray
    u: np.ndarray

    def __len__(self) -> int:
        return self.x0.size

    def item(self, i: int) -> CoupledBatchItem:
        return CoupledBatchItem(
            x0=float(self.x0[i]),
            t=float(self.t[i]),
            r=float(self.r[i]),
            gamma_eff=float(self.gamma_eff[i]),
            lambda_eff=float(self.lambda_eff[i]),
            x_prime=float(self.x_prime[i]),
            z_succ=float(self.z_succ[i]),
            z_curr=float(self.z_curr[i]),
            c_t=float(self.c_t[i]),
            u=float(self.u[i]),
        )


def successor_path(x0, x_prime, t):
    """Successor interpolant (1-t)*x0 + t*x_prime."""
    return (1.0 - t) * x0 + t * x_prime


def current_path(x0, x_prime, r, gamma_eff, t):
    """Current interpolant (1-t)*x0 + t*(r + gamma_eff*x_prime).

    Starts exactly at the shared noise at t=0 and ends exactly at the
    one-step Bellman endpoint at t=1.
    """
    return (1.0 - t) * x0 + t * (r + gamma_eff * x_prime)


def current_path_alt(x0, x_prime, r, gamma_eff, t):
    """Algebraically equal form t*r + gamma_eff*z_succ + (1-t)*(1-gamma_eff)*x0.

    The final term anchors the path to the shared noise at t=0 regardless of
    the discount; kept as a separate function so the two forms can be checked
    against each other.
    """
    z_succ = successor_path(x0, x_prime, t)
    return t * r + gamma_eff * z_succ + (1.0 - t) * (1.0 - gamma_eff) * x0


def bcfm_target(r, gamma_eff, x_prime, x0):
    """Sample-based Bellman velocity r + gamma_eff*x_prime - x0.

    This is the constant time-derivative of the current path: unbiased but
    high-variance in the successor sample.
    """
    return r + gamma_eff * x_prime - x0


def control_variate(c_t, x_prime, x0):
    """Discrepancy between predicted and sample successor velocity."""
    return c_t - (x_prime - x0)


def lambda_target(y, c, lambda_eff):
    """Training target y + lambda_eff * c; lambda_eff = 0 is the plain target."""
    lam = np.asarray(lambda_eff, dtype=float)
    if np.any(lam < 0.0) or np.any(lam > 1.0):
        raise ConfigError(f"lambda_eff must lie in [0, 1], got {lambda_eff}")
    return y + lambda_eff * c


def terminal_mask(gamma: float, lam: float, done) -> tuple:
    """Effective (discount, lambda): both zeroed on terminal transitions."""
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    keep = 1.0 - np.asarray(done, dtype=float)
    return gamma * keep, keep * lam


def one_hot_contexts(states: np.ndarray, n_states: int) -> np.ndarray:
    """One-hot state contexts; the terminal sentinel maps to the zero vector."""
    states = np.asarray(states, dtype=int)
    ctx = np.zeros((states.size, n_states))
    valid = states != TERMINAL
    ctx[np.flatnonzero(valid), states[valid]] = 1.0
    return ctx


def build_coupled_arrays(
    states: np.ndarray,
    rewards: np.ndarray,
    next_states: np.ndarray,
    dones: np.ndarray,
    target: nn.MlpParams,
    config: TrainConfig,
    rng: RngStream,
) -> CoupledArrays:
    """Vectorized coupled-batch construction from packed transition arrays.

    Draw order: one shared base noise per item, then one flow time per item.
    The successor endpoint integrates the target field from the same noise
    that seeds both interpolants.
    """
    batch = states.size
    if batch == 0:
        raise UsageError("empty batch")
    n_ctx = target.context_dim
    x0 = rng.normal(batch)
    t = rng.uniform(0.0, 1.0, batch)

    succ_ctx = one_hot_contexts(next_states, n_ctx)
    x_prime = flow.euler_integrate_batch(target, x0, succ_ctx, config.nfe)
    gamma_eff, lambda_eff = terminal_mask(config.gamma, config.lam, dones)

    z_succ = successor_path(x0, x_prime, t)
    z_curr = current_path(x0, x_prime, rewards, gamma_eff, t)
    c_t = flow.velocity_batch(target, t, z_succ, succ_ctx)
    y = bcfm_target(rewards, gamma_eff, x_prime, x0)
    c = control_variate(c_t, x_prime, x0)
    u = lambda_target(y, c, lambda_eff)
    return CoupledArrays(
        states=states,
        next_states=next_states,
        x0=x0,
        t=t,
        r=np.asarray(rewards, dtype=float),
        gamma_eff=gamma_eff,
        lambda_eff=lambda_eff,
        x_prime=x_prime,
        z_succ=z_succ,
        z_curr=z_curr,
        c_t=c_t,
        y=y,
        c=c,
        u=u,
    )


def build_coupled_batch(
    transitions: list[Transition],
    online: nn.MlpParams,
    target: nn.MlpParams,
    config: TrainConfig,
    rng: RngStream,
) -> list[CoupledBatchItem]:
    """Construct coupled training targets for a list of transitions.

    ``online`` participates only through its (shared) input width; targets
    depend on the lagged copy alone, which is what makes them constants for
    the optimizer.
    """
    if not transitions:
        raise UsageError("empty batch")
    if online.layer_sizes[0] != target.layer_sizes[0]:
        raise ConfigError("online/target input widths differ")
    states, rewards, next_states, dones = pack_transitions(transitions)
    arrays = build_coupled_arrays(states, rewards, next_states, dones, target, config, rng)
    return [arrays.item(i) for i in range(len(arrays))]
