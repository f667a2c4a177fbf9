"""Offline training loop for the coupled-path velocity critic.

Each step samples a minibatch with replacement, builds the coupled targets
from the lagged network, regresses the online velocity field onto them,
applies one Adam update, and Polyak-tracks the target copy. Metrics record
the per-step loss, a windowed loss standard deviation, and periodic
Wasserstein-1 snapshots against ground-truth return laws.
"""

from __future__ import annotations

import os
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import analysis, bellman, flow, nn
from .envs import Empirical, ReturnLaw, Transition, pack_transitions
from .errors import ConfigError, NumericError, UsageError
from .rng import RngStream

__all__ = [
    "TrainConfig",
    "MetricsLog",
    "train_step",
    "train",
    "loss_std",
    "rolling_std",
    "evaluate_states",
    "DEFAULT_EVAL_SAMPLES",
]

DEFAULT_EVAL_SAMPLES = 10_000


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run; ranges checked at construction."""

    gamma: float
    lam: float = 0.0
    tau: float = 5e-3
    lr: float = 3e-4
    batch_size: int = 256
    total_steps: int = 50_000
    nfe: int = 10
    eval_every: int = 5_000
    loss_window: int = 200
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.lr >= 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        for name in ("batch_size", "total_steps", "nfe", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.loss_window < 2:
            raise ConfigError(f"loss_window must be >= 2, got {self.loss_window}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def layer_sizes(self, n_states: int) -> tuple[int, ...]:
        return (2 + n_states, *self.hidden, 1)


@dataclass
class MetricsLog:
    """Per-step losses, windowed loss std, and periodic per-state W1."""

    loss_window: int
    losses: list[float] = field(default_factory=list)
    loss_std: list[float] = field(default_factory=list)  # first entry at step == loss_window
    eval_steps: list[int] = field(default_factory=list)
    eval_w1: dict[int, list[float]] = field(default_factory=dict)
    wall_clock_per_1k: list[float] = field(default_factory=list)

    def eval_states(self) -> list[int]:
        return sorted(self.eval_w1)

    def rows(self):
        """Yield CSV rows: step, loss, loss_std, then one W1 cell per state."""
        states = self.eval_states()
        eval_at = {step: i for i, step in enumerate(self.eval_steps)}
        for i, loss in enumerate(self.losses):
            step = i + 1
            std = repr(self.loss_std[step - self.loss_window]) if step >= self.loss_window else ""
            w1_cells = [""] * len(states)
            if step in eval_at:
                k = eval_at[step]
                w1_cells = [repr(self.eval_w1[s][k]) for s in states]
            yield [str(step), repr(loss), std, *w1_cells]

    def header(self) -> list[str]:
        return ["step", "loss", "loss_std", *[f"w1_s{s}" for s in self.eval_states()]]

    def write_csv(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in self.rows():
                fh.write(",".join(row) + "\n")
        os.replace(tmp, path)


def rolling_std(values, window: int) -> np.ndarray:
    """Rolling sample standard deviation (ddof=1) over a series."""
    arr = np.asarray(values, dtype=float)
    if window < 2:
        raise UsageError(f"window must be >= 2, got {window}")
    if window > arr.size:
        raise UsageError(f"window {window} exceeds series length {arr.size}")
    return sliding_window_view(arr, window).std(axis=1, ddof=1)


def loss_std(log: MetricsLog, window: int) -> np.ndarray:
    """Rolling std of the recorded loss series."""
    return rolling_std(log.losses, window)


def _pcbf_step_arrays(online, target, adam_state, payload, config, rng):
    """One coupled-path training step on packed transition arrays."""
    states, rewards, next_states, dones = payload
    arrays = bellman.build_coupled_arrays(states, rewards, next_states, dones, target, config, rng)
    ctx = bellman.one_hot_contexts(arrays.states, online.context_dim)
    inputs = flow.stack_inputs(arrays.z_curr, arrays.t, ctx)
    loss, grads = nn.loss_and_grads(online, inputs, arrays.u)
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(arrays.u))[0]) if not np.isfinite(arrays.u).all() else 0
        raise NumericError(f"non-finite loss; offending batch item {bad}: {arrays.item(bad)}")
    online_new, adam_new = nn.adam_step(online, grads, adam_state, config.lr)
    target_new = nn.polyak_update(target, online_new, config.tau)
    return online_new, target_new, adam_new, loss


def train_step(
    online: nn.MlpParams,
    target: nn.MlpParams,
    adam_state: nn.AdamState,
    batch: list[Transition],
    config: TrainConfig,
    rng: RngStream,
):
    """One training step on an explicit transition batch.

    Returns (online', target', adam_state', loss). The target copy moves to
    exactly tau * online' + (1 - tau) * target.
    """
    payload = pack_transitions(batch)
    return _pcbf_step_arrays(online, target, adam_state, payload, config, rng)


def evaluate_states(
    params: nn.MlpParams,
    laws: Mapping[int, ReturnLaw],
    nfe: int,
    rng: RngStream,
    n_samples: int = DEFAULT_EVAL_SAMPLES,
) -> dict[int, float]:
    """Wasserstein-1 between flow samples and ground truth, per state."""
    out = {}
    for s in sorted(laws):
        ctx = np.zeros(params.context_dim)
        ctx[s] = 1.0
        samples = flow.sample_returns(params, ctx, n_samples, rng.child(s), nfe)
        out[s] = analysis.wasserstein1(Empirical(np.sort(samples)), laws[s])
    return out


def _run_loop(
    n_data: int,
    make_payload: Callable[[np.ndarray], tuple],
    step_fn: Callable,
    config: TrainConfig,
    n_states: int,
    eval_laws: Mapping[int, ReturnLaw] | None = None,
    csv_path: str | None = None,
    checkpoint_dir: str | None = None,
    eval_samples: int = DEFAULT_EVAL_SAMPLES,
):
    """Shared minibatch loop used by the coupled-path trainer and baselines.

    All methods draw minibatch indices, base noises, and flow times from the
    same stream in the same order, so target variants that collapse onto each
    other algebraically produce bit-identical runs under a shared seed.
    """
    sizes = config.layer_sizes(n_states)
    online = nn.init_params(sizes, config.seed)
    target = online
    adam_state = nn.AdamState.init(online)

    master = RngStream(config.seed)
    step_rng = master.child("train")
    eval_rng = master.child("eval")

    log = MetricsLog(loss_window=config.loss_window)
    if eval_laws:
        for s in sorted(eval_laws):
            log.eval_w1[s] = []
    window: deque[float] = deque(maxlen=config.loss_window)
    t_mark = time.perf_counter()

    for step in range(1, config.total_steps + 1):
        idx = step_rng.integers(0, n_data, config.batch_size)
        payload = make_payload(idx)
        online, target, adam_state, loss = step_fn(online, target, adam_state, payload, config, step_rng)
        log.losses.append(loss)
        window.append(loss)
        if len(window) == config.loss_window:
            log.loss_std.append(float(np.std(window, ddof=1)))
        if step % 1000 == 0:
            now = time.perf_counter()
            log.wall_clock_per_1k.append(now - t_mark)
            t_mark = now
        if (step % config.eval_every == 0 or step == config.total_steps) and eval_laws:
            if not log.eval_steps or log.eval_steps[-1] != step:
                w1 = evaluate_states(online, eval_laws, config.nfe, eval_rng.child(step), eval_samples)
                log.eval_steps.append(step)
                for s, v in w1.items():
                    log.eval_w1[s].append(v)
                if checkpoint_dir:
                    os.makedirs(checkpoint_dir, exist_ok=True)
                    nn.save_params(online, os.path.join(checkpoint_dir, f"checkpoint_{step:08d}.json"),
                                   init_seed=config.seed)
    if csv_path:
        log.write_csv(csv_path)
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
        nn.save_params(online, os.path.join(checkpoint_dir, "checkpoint_final.json"), init_seed=config.seed)
    return online, target, log


def train(
    dataset: list[Transition],
    config: TrainConfig,
    n_states: int,
    eval_laws: Mapping[int, ReturnLaw] | None = None,
    csv_path: str | None = None,
    checkpoint_dir: str | None = None,
    eval_samples: int = DEFAULT_EVAL_SAMPLES,
):
    """Run the full coupled-path training loop over an offline dataset.

    Returns (final params, metrics log). Minibatches are drawn uniformly with
    replacement; evaluation snapshots run every ``eval_every`` steps (and at
    the final step) against ``eval_laws``.
    """
    if not dataset:
        raise UsageError("empty dataset")
    states, rewards, next_states, dones = pack_transitions(dataset)

    def make_payload(idx):
        return states[idx], rewards[idx], next_states[idx], dones[idx]

    online, _, log = _run_loop(
        len(dataset), make_payload, _pcbf_step_arrays, config, n_states,
        eval_laws=eval_laws, csv_path=csv_path, checkpoint_dir=checkpoint_dir,
        eval_samples=eval_samples,
    )
    return online, log
