"""Alternative training targets for comparison runs.

* Plain endpoint supervision (the coupled pipeline's lambda = 0 target).
* Same-time self-consistency evaluated at the Bellman-inverse point
  (z - r) / gamma, in an unscaled form and a gamma-scaled form that matches
  the affine path derivative.
* The combined objective: endpoint anchor plus a weighted unscaled
  self-consistency term (the swept coefficient).
* An oracle-supervised flow matcher regressing directly onto Monte Carlo
  return samples; a non-bootstrapped gold standard.

All variants reuse the coupled-batch construction and the shared training
loop, so a variant whose extra terms carry zero weight reproduces the
coupled-path run bit for bit under the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import bellman, flow, nn
from .envs import ReturnLaw, Transition, pack_transitions
from .errors import ConfigError, NumericError, SingularMapError, UsageError
from .rng import RngStream
from .trainer import DEFAULT_EVAL_SAMPLES, TrainConfig, _run_loop

__all__ = [
    "BaselineKind",
    "dcfm_target_unscaled",
    "dcfm_target_scaled",
    "dcfm_targets_batch",
    "vf_train_step",
    "vf_train",
    "baseline_train",
    "oracle_cfm_train",
]

_KINDS = ("bcfm_only", "dcfm_unscaled", "dcfm_scaled", "vf_combined", "oracle_cfm")


@dataclass(frozen=True)
class BaselineKind:
    """Which alternative objective to train, plus its self-consistency weight."""

    name: str
    dcfm_coef: float = 0.0

    def __post_init__(self):
        if self.name not in _KINDS:
            raise ConfigError(f"unknown baseline {self.name!r}; expected one of {_KINDS}")
        if not (np.isfinite(self.dcfm_coef) and self.dcfm_coef >= 0.0):
            raise ConfigError(f"dcfm_coef must be finite and >= 0, got {self.dcfm_coef}")


def dcfm_target_unscaled(target: nn.MlpParams, t, z_t, r, gamma, succ_context) -> float:
    """Lagged field evaluated at the Bellman-inverse point (z - r) / gamma."""
    if gamma == 0.0:
        raise SingularMapError("the Bellman-inverse map is undefined at gamma = 0")
    z_inv = (z_t - r) / gamma
    return nn.forward(target, np.concatenate([[z_inv, t], np.asarray(succ_context, dtype=float)]))


def dcfm_target_scaled(target: nn.MlpParams, t, z_t, r, gamma, succ_context) -> float:
    """gamma-scaled variant matching the affine path-derivative scaling."""
    return gamma * dcfm_target_unscaled(target, t, z_t, r, gamma, succ_context)


def dcfm_targets_batch(target, t, z_t, r, gamma, succ_contexts, scaled: bool):
    """Vectorized self-consistency targets for non-terminal batch slices."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma == 0.0):
        raise SingularMapError("the Bellman-inverse map is undefined at gamma = 0")
    z_inv = (z_t - r) / gamma
    vals = flow.velocity_batch(target, t, z_inv, succ_contexts)
    return gamma * vals if scaled else vals


def _baseline_step_arrays(
    online, target, adam_state, payload, config, rng, *, bcfm_weight, dcfm_coef, dcfm_scaled
):
    """Endpoint anchor + weighted self-consistency step on packed arrays.

    Both loss terms evaluate the online field at the same interpolated point,
    so they share one forward/backward pass; the self-consistency term is
    averaged over non-terminal items only (the inverse map needs gamma > 0).
    """
    states, rewards, next_states, dones = payload
    arrays = bellman.build_coupled_arrays(states, rewards, next_states, dones, target, config, rng)
    ctx = bellman.one_hot_contexts(arrays.states, online.context_dim)
    inputs = flow.stack_inputs(arrays.z_curr, arrays.t, ctx)
    out, cache = nn._forward_cached(online, inputs)
    batch = len(arrays)

    resid_bcfm = out - arrays.y
    loss = bcfm_weight * float(np.mean(resid_bcfm**2))
    dout = bcfm_weight * (2.0 / batch) * resid_bcfm

    if dcfm_coef > 0.0:
        nonterm = arrays.gamma_eff > 0.0
        n_nonterm = int(nonterm.sum())
        if n_nonterm > 0:
            succ_ctx = bellman.one_hot_contexts(arrays.next_states[nonterm], online.context_dim)
            d_tgt = dcfm_targets_batch(
                target, arrays.t[nonterm], arrays.z_curr[nonterm], arrays.r[nonterm],
                arrays.gamma_eff[nonterm], succ_ctx, scaled=dcfm_scaled,
            )
            resid_d = out[nonterm] - d_tgt
            loss += dcfm_coef * float(np.mean(resid_d**2))
            dout[nonterm] += dcfm_coef * (2.0 / n_nonterm) * resid_d

    if not np.isfinite(loss):
        raise NumericError(f"non-finite baseline loss at optimizer step {adam_state.step + 1}")
    grads = nn._backward(online, cache, dout)
    online_new, adam_new = nn.adam_step(online, grads, adam_state, config.lr)
    target_new = nn.polyak_update(target, online_new, config.tau)
    return online_new, target_new, adam_new, loss


def vf_train_step(
    online: nn.MlpParams,
    target: nn.MlpParams,
    adam_state: nn.AdamState,
    batch: list[Transition],
    dcfm_coef: float,
    config: TrainConfig,
    rng: RngStream,
):
    """One combined-objective step: endpoint MSE + dcfm_coef x unscaled self-consistency."""
    if dcfm_coef < 0.0:
        raise ConfigError(f"dcfm_coef must be >= 0, got {dcfm_coef}")
    payload = pack_transitions(batch)
    return _baseline_step_arrays(
        online, target, adam_state, payload, config, rng,
        bcfm_weight=1.0, dcfm_coef=dcfm_coef, dcfm_scaled=False,
    )


def _loop_over_transitions(dataset, config, n_states, step_fn, **kwargs):
    if not dataset:
        raise UsageError("empty dataset")
    states, rewards, next_states, dones = pack_transitions(dataset)

    def make_payload(idx):
        return states[idx], rewards[idx], next_states[idx], dones[idx]

    online, _, log = _run_loop(len(dataset), make_payload, step_fn, config, n_states, **kwargs)
    return online, log


def vf_train(
    dataset: list[Transition],
    config: TrainConfig,
    n_states: int,
    dcfm_coef: float,
    eval_laws: Mapping[int, ReturnLaw] | None = None,
    csv_path: str | None = None,
    checkpoint_dir: str | None = None,
    eval_samples: int = DEFAULT_EVAL_SAMPLES,
):
    """Full training run of the combined objective."""

    def step(online, target, adam_state, payload, cfg, rng):
        return _baseline_step_arrays(
            online, target, adam_state, payload, cfg, rng,
            bcfm_weight=1.0, dcfm_coef=dcfm_coef, dcfm_scaled=False,
        )

    return _loop_over_transitions(
        dataset, config, n_states, step,
        eval_laws=eval_laws, csv_path=csv_path, checkpoint_dir=checkpoint_dir,
        eval_samples=eval_samples,
    )


def baseline_train(
    dataset: list[Transition],
    config: TrainConfig,
    n_states: int,
    kind: BaselineKind,
    eval_laws: Mapping[int, ReturnLaw] | None = None,
    csv_path: str | None = None,
    checkpoint_dir: str | None = None,
    eval_samples: int = DEFAULT_EVAL_SAMPLES,
):
    """Dispatch a full training run for any transition-supervised baseline."""
    if kind.name == "oracle_cfm":
        raise UsageError("oracle_cfm trains on oracle samples; call oracle_cfm_train")
    weights = {
        "bcfm_only": dict(bcfm_weight=1.0, dcfm_coef=0.0, dcfm_scaled=False),
        "vf_combined": dict(bcfm_weight=1.0, dcfm_coef=kind.dcfm_coef, dcfm_scaled=False),
        "dcfm_unscaled": dict(bcfm_weight=0.0, dcfm_coef=max(kind.dcfm_coef, 1.0), dcfm_scaled=False),
        "dcfm_scaled": dict(bcfm_weight=0.0, dcfm_coef=max(kind.dcfm_coef, 1.0), dcfm_scaled=True),
    }[kind.name]

    def step(online, target, adam_state, payload, cfg, rng):
        return _baseline_step_arrays(online, target, adam_state, payload, cfg, rng, **weights)

    return _loop_over_transitions(
        dataset, config, n_states, step,
        eval_laws=eval_laws, csv_path=csv_path, checkpoint_dir=checkpoint_dir,
        eval_samples=eval_samples,
    )


def _oracle_step_arrays(online, target, adam_state, payload, config, rng):
    """Plain flow-matching step on (state, oracle return sample) pairs."""
    states, x1 = payload
    batch = states.size
    x0 = rng.normal(batch)
    t = rng.uniform(0.0, 1.0, batch)
    z_t = (1.0 - t) * x0 + t * x1
    ctx = bellman.one_hot_contexts(states, online.context_dim)
    inputs = flow.stack_inputs(z_t, t, ctx)
    loss, grads = nn.loss_and_grads(online, inputs, x1 - x0)
    online_new, adam_new = nn.adam_step(online, grads, adam_state, config.lr)
    return online_new, target, adam_new, loss


def oracle_cfm_train(
    samples_by_state: Mapping[int, np.ndarray],
    config: TrainConfig,
    n_states: int,
    eval_laws: Mapping[int, ReturnLaw] | None = None,
    csv_path: str | None = None,
    checkpoint_dir: str | None = None,
    eval_samples: int = DEFAULT_EVAL_SAMPLES,
):
    """Train a flow on ground-truth return samples (no bootstrapping).

    Each step draws (state, return) pairs uniformly from the pooled oracle
    samples; no target network is involved.
    """
    if not samples_by_state:
        raise UsageError("no oracle samples provided")
    states_flat = np.concatenate(
        [np.full(np.asarray(v).size, s, dtype=int) for s, v in sorted(samples_by_state.items())]
    )
    x1_flat = np.concatenate([np.asarray(v, dtype=float) for _, v in sorted(samples_by_state.items())])

    def make_payload(idx):
        return states_flat[idx], x1_flat[idx]

    online, _, log = _run_loop(
        states_flat.size, make_payload, _oracle_step_arrays, config, n_states,
        eval_laws=eval_laws, csv_path=csv_path, checkpoint_dir=checkpoint_dir,
        eval_samples=eval_samples,
    )
    return online, log
