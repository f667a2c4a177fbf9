"""Minimal feed-forward velocity network with analytic gradients.

The network maps an input vector ``[z, t, context...]`` to a scalar
velocity. Hidden layers use tanh; the output layer is linear. Gradients
are computed by hand (no autodiff framework), which keeps the package
dependency-light and lets the test suite check them against finite
differences as a genuinely independent oracle.

Parameter structures are immutable values: every update returns fresh
arrays, so forward evaluation on shared params is safe to run concurrently.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError
from .rng import RngStream

__all__ = [
    "MlpParams",
    "MlpGrads",
    "AdamState",
    "RngStream",
    "init_params",
    "forward",
    "forward_batch",
    "loss_and_grads",
    "adam_step",
    "polyak_update",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class MlpParams:
    """Weights and biases of the velocity MLP (tanh hidden, linear output)."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]  # weights[i]: (layer_sizes[i], layer_sizes[i+1])
    biases: tuple[np.ndarray, ...]  # biases[i]: (layer_sizes[i+1],)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigError(f"layer_sizes must have >= 2 positive entries, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("number of weight/bias arrays must be len(layer_sizes) - 1")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]):
                raise ShapeError(f"weight {i} has shape {w.shape}, expected {(sizes[i], sizes[i + 1])}")
            if b.shape != (sizes[i + 1],):
                raise ShapeError(f"bias {i} has shape {b.shape}, expected {(sizes[i + 1],)}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def context_dim(self) -> int:
        """Width of the conditioning context (input is [z, t, context...])."""
        return self.layer_sizes[0] - 2

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )


@dataclass(frozen=True)
class MlpGrads:
    """Gradient arrays mirroring :class:`MlpParams` shapes."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class AdamState:
    """Adam moment accumulators; shapes mirror the parameter structure."""

    m_weights: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: MlpParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
        return cls(
            m_weights=tuple(np.zeros_like(w) for w in params.weights),
            v_weights=tuple(np.zeros_like(w) for w in params.weights),
            m_biases=tuple(np.zeros_like(b) for b in params.biases),
            v_biases=tuple(np.zeros_like(b) for b in params.biases),
            step=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def init_params(layer_sizes, seed: int) -> MlpParams:
    """Initialize weights from a fan-in-scaled uniform; biases are zero.

    Deterministic given ``seed``.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ConfigError(f"layer_sizes must have >= 2 positive entries, got {sizes}")
    rng = RngStream(seed).child("mlp-init")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, tuple(weights), tuple(biases))


def _check_input_width(params: MlpParams, width: int) -> None:
    if width != params.layer_sizes[0]:
        raise ShapeError(f"input width {width} != expected {params.layer_sizes[0]}")


def forward_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a (B, d_in) batch; returns (B,) outputs."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"expected 2-d batch input, got shape {x.shape}")
    _check_input_width(params, x.shape[1])
    a = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w
        z += b
        a = z if i == last else np.tanh(z, out=z)
    return a[:, 0]


def forward(params: MlpParams, x: np.ndarray) -> float:
    """Evaluate the network on a single input vector; pure in (params, x)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"expected a flat input vector, got shape {x.shape}")
    return float(forward_batch(params, x[None, :])[0])


def _forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping post-activation values for backprop."""
    activations = [x]
    a = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = z if i == last else np.tanh(z)
        activations.append(a)
    return a[:, 0], activations


def _backward(params: MlpParams, activations, dout: np.ndarray) -> MlpGrads:
    """Backprop ``dout`` (dLoss/dOutput, shape (B,)) through the cache."""
    grad_w = [None] * params.n_layers
    grad_b = [None] * params.n_layers
    delta = dout[:, None]  # (B, 1) at the linear output layer
    for i in range(params.n_layers - 1, -1, -1):
        a_prev = activations[i]
        grad_w[i] = a_prev.T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            da = delta @ params.weights[i].T
            delta = da * (1.0 - activations[i] ** 2)  # tanh'(z) = 1 - tanh(z)^2
    return MlpGrads(tuple(grad_w), tuple(grad_b))


def loss_and_grads(params: MlpParams, inputs: np.ndarray, targets: np.ndarray):
    """Mean-squared velocity regression loss and its exact gradients.

    ``targets`` are treated as constants: nothing is differentiated through
    their construction.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"expected 2-d batch input, got shape {x.shape}")
    if x.shape[0] == 0:
        raise UsageError("empty batch")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"targets shape {y.shape} != ({x.shape[0]},)")
    _check_input_width(params, x.shape[1])
    out, cache = _forward_cached(params, x)
    resid = out - y
    loss = float(np.mean(resid**2))
    dout = (2.0 / x.shape[0]) * resid
    return loss, _backward(params, cache, dout)


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns (new params, new state)."""
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise NumericError(f"non-finite gradient in layer {i}")
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t

    def upd(p, g, m, v):
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * g**2
        p_new = p - lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + eps)
        return p_new, m_new, v_new

    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, state.m_weights, state.v_weights):
        pn, mn, vn = upd(p, g, m, v)
        new_w.append(pn)
        new_mw.append(mn)
        new_vw.append(vn)
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(params.biases, grads.biases, state.m_biases, state.v_biases):
        pn, mn, vn = upd(p, g, m, v)
        new_b.append(pn)
        new_mb.append(mn)
        new_vb.append(vn)
    new_params = MlpParams(params.layer_sizes, tuple(new_w), tuple(new_b))
    new_state = AdamState(
        tuple(new_mw), tuple(new_vw), tuple(new_mb), tuple(new_vb),
        step=t, beta1=b1, beta2=b2, eps=eps,
    )
    return new_params, new_state


def polyak_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Slow target tracking: elementwise ``tau * online + (1 - tau) * target``."""
    if not (0.0 < tau <= 1.0):
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")
    if target.layer_sizes != online.layer_sizes:
        raise ShapeError("target/online layer sizes differ")
    new_w = tuple(tau * wo + (1.0 - tau) * wt for wt, wo in zip(target.weights, online.weights))
    new_b = tuple(tau * bo + (1.0 - tau) * bt for bt, bo in zip(target.biases, online.biases))
    return MlpParams(target.layer_sizes, new_w, new_b)


def save_params(params: MlpParams, path: str, init_seed: int | None = None) -> None:
    """Write a self-describing JSON checkpoint (row-major float64 weights)."""
    payload = {
        "layer_sizes": list(params.layer_sizes),
        "activation": "tanh",
        "weights": [w.ravel(order="C").tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "init_seed": init_seed,
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_params(path: str) -> tuple[MlpParams, int | None]:
    """Load a checkpoint written by :func:`save_params`."""
    with open(path) as fh:
        payload = json.load(fh)
    sizes = tuple(int(s) for s in payload["layer_sizes"])
    weights = tuple(
        np.asarray(flat, dtype=float).reshape(sizes[i], sizes[i + 1])
        for i, flat in enumerate(payload["weights"])
    )
    biases = tuple(np.asarray(b, dtype=float) for b in payload["biases"])
    return MlpParams(sizes, weights, biases), payload.get("init_seed")
