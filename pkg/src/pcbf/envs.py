"""Analytically tractable Markov reward processes and their return laws.

Three environments:

* Solitaire dice: roll a fair die; a 1 terminates with reward 0, any other
  face pays reward 1 and continues. The discounted return is supported on
  (1 - gamma^k) / (1 - gamma) with geometric weights.
* Bernoulli: a single absorbing-free state paying fair-coin rewards; at
  gamma = 1/2 the return is exactly Unif[0, 2].
* Discrete Monte Carlo chain: nearest-neighbor moves over a multi-well
  potential with absorbing boundary states; ground truth comes from Monte
  Carlo rollouts.

Ground-truth return distributions are represented as sorted atoms, a
piecewise-linear CDF, or sorted empirical samples.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .rng import RngStream

__all__ = [
    "TERMINAL",
    "Transition",
    "MrpSpec",
    "Atoms",
    "ContinuousCdf",
    "Empirical",
    "ReturnLaw",
    "solitaire_sample_transition",
    "solitaire_return_law",
    "bernoulli_sample_transition",
    "bernoulli_return_law",
    "discrete_mc_kernel",
    "discrete_mc_sample_transition",
    "sample_transition",
    "mc_return_oracle",
    "generate_dataset",
    "ground_truth_laws",
    "save_dataset_csv",
    "load_dataset_csv",
    "pack_transitions",
    "default_cache_dir",
]

TERMINAL = -1  # next_state sentinel for absorbing/terminating transitions

DIE_STOP_PROB = 1.0 / 6.0

# Discount weights below this threshold cannot change a float64 return sum;
# rollouts stop early once every remaining reward is weighted below it.
_DISCOUNT_FLOOR = 1e-18


@dataclass(frozen=True)
class Transition:
    """One offline tuple (state, reward, next state, done)."""

    state: int
    reward: float
    next_state: int
    done: bool

    def __post_init__(self):
        if self.done and self.next_state != TERMINAL:
            raise ConfigError("done transitions must carry the terminal sentinel next_state")
        if not math.isfinite(self.reward):
            raise ConfigError(f"non-finite reward {self.reward}")


@dataclass(frozen=True)
class MrpSpec:
    """Which toy environment, its state count, and its default discount."""

    kind: str
    n_states: int
    gamma_default: float

    def __post_init__(self):
        if self.kind not in ("solitaire", "bernoulli", "discrete_mc"):
            raise ConfigError(f"unknown env kind {self.kind!r}")
        if self.kind == "discrete_mc" and self.n_states < 3:
            raise ConfigError(f"discrete_mc needs n_states >= 3, got {self.n_states}")

    @classmethod
    def solitaire(cls, gamma: float = 0.9) -> MrpSpec:
        return cls("solitaire", 1, gamma)

    @classmethod
    def bernoulli(cls) -> MrpSpec:
        return cls("bernoulli", 1, 0.5)

    @classmethod
    def discrete_mc(cls, n_states: int = 21, gamma: float = 0.95) -> MrpSpec:
        return cls("discrete_mc", n_states, gamma)

    @property
    def context_dim(self) -> int:
        """Width of the one-hot state context fed to the network."""
        return self.n_states

    @property
    def nonterminal_states(self) -> tuple[int, ...]:
        if self.kind == "discrete_mc":
            return tuple(range(1, self.n_states - 1))
        return (0,)

    def cache_tag(self) -> str:
        return f"{self.kind}{self.n_states}"


# ---------------------------------------------------------------------------
# Return-law representations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atoms:
    """Discrete law: sorted atom values with positive probabilities summing to 1."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if values.ndim != 1 or values.shape != probs.shape or values.size == 0:
            raise ConfigError("atoms need matching non-empty 1-d values/probs")
        if not np.all(np.diff(values) > 0):
            raise ConfigError("atom values must be strictly increasing")
        if np.any(probs <= 0):
            raise ConfigError("atom probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ConfigError(f"atom probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cum", np.cumsum(probs))

    def breakpoints(self) -> np.ndarray:
        return self.values

    def cdf(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.values, x, side="right")
        return np.concatenate([[0.0], self._cum])[idx]

    def cdf_left(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.values, x, side="left")
        return np.concatenate([[0.0], self._cum])[idx]

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))


@dataclass(frozen=True)
class ContinuousCdf:
    """Piecewise-linear CDF given by knots xs with values fs (0 to 1)."""

    xs: np.ndarray
    fs: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        fs = np.asarray(self.fs, dtype=float)
        if xs.ndim != 1 or xs.shape != fs.shape or xs.size < 2:
            raise ConfigError("piecewise CDF needs >= 2 matching knots")
        if not np.all(np.diff(xs) > 0):
            raise ConfigError("CDF knots must be strictly increasing")
        if fs[0] != 0.0 or abs(fs[-1] - 1.0) > 1e-12 or np.any(np.diff(fs) < 0):
            raise ConfigError("CDF values must rise from 0 to 1")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "fs", fs)

    def breakpoints(self) -> np.ndarray:
        return self.xs

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.xs, self.fs, left=0.0, right=1.0)

    cdf_left = cdf  # continuous law: left limits equal the CDF


@dataclass(frozen=True)
class Empirical:
    """Empirical law over sorted samples (uniform weights)."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise UsageError("empirical law needs a non-empty 1-d sample array")
        if np.any(np.diff(samples) < 0):
            raise ConfigError("empirical samples must be sorted")
        object.__setattr__(self, "samples", samples)

    def breakpoints(self) -> np.ndarray:
        return self.samples

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.samples, x, side="right") / self.samples.size

    def cdf_left(self, x: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.samples, x, side="left") / self.samples.size

    def mean(self) -> float:
        return float(self.samples.mean())


ReturnLaw = Atoms | ContinuousCdf | Empirical


# ---------------------------------------------------------------------------
# Environment dynamics
# ---------------------------------------------------------------------------


def solitaire_sample_transition(rng: RngStream) -> Transition:
    """One die roll: terminate (r=0) with prob 1/6, else pay r=1 and stay."""
    if rng.random() < DIE_STOP_PROB:
        return Transition(0, 0.0, TERMINAL, True)
    return Transition(0, 1.0, 0, False)


def solitaire_return_law(gamma: float, tail_eps: float = 1e-10) -> Atoms:
    """Closed-form discounted-return atoms of the solitaire dice process.

    Atom k sits at (1 - gamma^k) / (1 - gamma) with probability
    (1/6)(5/6)^k; the geometric tail beyond the last retained atom is lumped
    onto that atom so the probabilities sum to one exactly.
    """
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0.0 < tail_eps <= 1e-3:
        raise ConfigError(f"tail_eps must lie in (0, 1e-3], got {tail_eps}")
    cont = 1.0 - DIE_STOP_PROB
    # tail mass after atoms 0..k is cont^(k+1)
    k_max = 0
    while cont ** (k_max + 1) > tail_eps:
        k_max += 1
    ks = np.arange(k_max + 1)
    values = (1.0 - gamma**ks) / (1.0 - gamma)
    probs = DIE_STOP_PROB * cont**ks
    probs[-1] += cont ** (k_max + 1)  # lump the truncated tail
    probs /= probs.sum()
    # large k saturates the value in float64; merge the resulting duplicates
    uniq, inverse = np.unique(values, return_inverse=True)
    merged = np.zeros_like(uniq)
    np.add.at(merged, inverse, probs)
    return Atoms(uniq, merged)


def bernoulli_sample_transition(rng: RngStream) -> Transition:
    """Fair-coin reward in the single non-terminating state."""
    return Transition(0, float(rng.random() < 0.5), 0, False)


def bernoulli_return_law() -> ContinuousCdf:
    """Exact return law at gamma = 1/2: Unif[0, 2]."""
    return ContinuousCdf(np.array([0.0, 2.0]), np.array([0.0, 1.0]))


def discrete_mc_kernel(n: int) -> np.ndarray:
    """Row-stochastic nearest-neighbor kernel over a multi-well potential.

    Interior rows move to i +/- 1 with probability
    0.5 * p(i +/- 1) / (p(i) + p(i +/- 1)) and self-loop with the remainder;
    rows 0 and n-1 are absorbing. The 1/2 factor keeps every self-loop
    nonnegative.
    """
    if n < 3:
        raise ConfigError(f"discrete_mc needs n >= 3, got {n}")
    i = np.arange(n)
    potential = np.exp((n - 1) / (4.0 * np.pi) * np.cos(4.0 * np.pi * (i - 1) / (n - 1)))
    kernel = np.zeros((n, n))
    kernel[0, 0] = 1.0
    kernel[n - 1, n - 1] = 1.0
    for s in range(1, n - 1):
        down = 0.5 * potential[s - 1] / (potential[s] + potential[s - 1])
        up = 0.5 * potential[s + 1] / (potential[s] + potential[s + 1])
        kernel[s, s - 1] = down
        kernel[s, s + 1] = up
        kernel[s, s] = 1.0 - down - up
    return kernel


def discrete_mc_sample_transition(state: int, kernel: np.ndarray, rng: RngStream) -> Transition:
    """Step the chain once; reward 1 unless the move enters an absorbing state."""
    n = kernel.shape[0]
    if not 0 < state < n - 1:
        raise UsageError(f"cannot step from absorbing state {state}")
    row = kernel[state]
    u = rng.random()
    if u < row[state - 1]:
        nxt = state - 1
    elif u < row[state - 1] + row[state]:
        nxt = state
    else:
        nxt = state + 1
    absorbed = nxt == 0 or nxt == n - 1
    if absorbed:
        return Transition(state, 0.0, TERMINAL, True)
    return Transition(state, 1.0, nxt, False)


def sample_transition(spec: MrpSpec, state: int, rng: RngStream, kernel: np.ndarray | None = None) -> Transition:
    """Dispatch one environment step for any spec kind."""
    if spec.kind == "solitaire":
        return solitaire_sample_transition(rng)
    if spec.kind == "bernoulli":
        return bernoulli_sample_transition(rng)
    if kernel is None:
        kernel = discrete_mc_kernel(spec.n_states)
    return discrete_mc_sample_transition(state, kernel, rng)


# ---------------------------------------------------------------------------
# Rollout oracle
# ---------------------------------------------------------------------------


def _rollout_returns(
    spec: MrpSpec, start_state: int, gamma: float, n: int, horizon_cap: int, rng: RngStream
) -> np.ndarray:
    """Vectorized discounted-return rollouts; exact given the horizon cap."""
    gen = rng
    returns = np.zeros(n)
    discount = 1.0
    if spec.kind == "discrete_mc":
        kernel = discrete_mc_kernel(spec.n_states)
        lo = kernel[np.arange(spec.n_states), np.maximum(np.arange(spec.n_states) - 1, 0)]
        stay = kernel[np.arange(spec.n_states), np.arange(spec.n_states)]
        states = np.full(n, start_state, dtype=int)
    active = np.ones(n, dtype=bool)
    for _ in range(horizon_cap):
        n_active = int(active.sum())
        if n_active == 0 or discount < _DISCOUNT_FLOOR:
            break
        u = gen.random(n_active)
        if spec.kind == "solitaire":
            stop = u < DIE_STOP_PROB
            idx = np.flatnonzero(active)
            returns[idx[~stop]] += discount
            active[idx[stop]] = False
        elif spec.kind == "bernoulli":
            returns[active] += discount * (u < 0.5)
        else:
            idx = np.flatnonzero(active)
            cur = states[idx]
            nxt = np.where(u < lo[cur], cur - 1, np.where(u < lo[cur] + stay[cur], cur, cur + 1))
            absorbed = (nxt == 0) | (nxt == spec.n_states - 1)
            returns[idx[~absorbed]] += discount
            states[idx] = nxt
            active[idx[absorbed]] = False
        discount *= gamma
    return np.sort(returns)


def default_cache_dir() -> str:
    return os.environ.get("PCBF_CACHE_DIR", os.path.join(".", ".pcbf_cache"))


def oracle_cache_key(spec: MrpSpec, state: int, gamma: float, n: int, rng: RngStream) -> str:
    spawn = "-".join(str(k) for k in rng.spawn_key) or "root"
    return f"{spec.cache_tag()}_s{state}_g{gamma!r}_n{n}_seed{rng.seed}_{spawn}"


def load_oracle_cache(key: str, cache_dir: str | None = None) -> Empirical:
    """Load a cached oracle; raises naming the key when absent."""
    path = os.path.join(cache_dir or default_cache_dir(), key + ".npz")
    if not os.path.exists(path):
        raise UsageError(f"missing oracle cache for key {key!r} (expected {path})")
    with np.load(path, allow_pickle=False) as data:
        return Empirical(data["samples"])


def mc_return_oracle(
    spec: MrpSpec,
    start_state: int,
    gamma: float,
    n_rollouts: int,
    horizon_cap: int = 2000,
    rng: RngStream | None = None,
    cache_dir: str | None = None,
) -> Empirical:
    """Ground-truth return samples from full episode rollouts, sorted.

    Deterministic given the rng stream; results are cached to
    ``cache_dir`` (default ``$PCBF_CACHE_DIR`` or ./.pcbf_cache) keyed by
    (env, state, gamma, n, seed). The cache header records the horizon cap
    and the truncation tail bound gamma^cap / (1 - gamma).
    """
    if n_rollouts < 1:
        raise UsageError(f"n_rollouts must be >= 1, got {n_rollouts}")
    if rng is None:
        rng = RngStream(0).child("oracle")
    cache_dir = cache_dir or default_cache_dir()
    key = oracle_cache_key(spec, start_state, gamma, n_rollouts, rng)
    path = os.path.join(cache_dir, key + ".npz")
    if os.path.exists(path):
        with np.load(path, allow_pickle=False) as data:
            return Empirical(data["samples"])
    samples = _rollout_returns(spec, start_state, gamma, n_rollouts, horizon_cap, rng)
    header = {
        "env": spec.cache_tag(),
        "state": start_state,
        "gamma": gamma,
        "n_rollouts": n_rollouts,
        "seed": rng.seed,
        "spawn_key": list(rng.spawn_key),
        "horizon_cap": horizon_cap,
        "truncation_tail_bound": gamma**horizon_cap / (1.0 - gamma),
    }
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + f".tmp{os.getpid()}.npz"  # np.savez insists on the suffix
    np.savez(tmp, samples=samples, header=json.dumps(header))
    os.replace(tmp, path)
    return Empirical(samples)


def ground_truth_laws(
    spec: MrpSpec,
    gamma: float,
    rng: RngStream | None = None,
    n_rollouts: int = 100_000,
    cache_dir: str | None = None,
    tail_eps: float = 1e-10,
) -> dict[int, ReturnLaw]:
    """Ground-truth law per non-terminal state: analytic where available."""
    if spec.kind == "solitaire":
        return {0: solitaire_return_law(gamma, tail_eps)}
    if spec.kind == "bernoulli":
        if abs(gamma - 0.5) > 1e-12:
            raise ConfigError("the Bernoulli closed form is the ground truth only at gamma = 1/2")
        return {0: bernoulli_return_law()}
    if rng is None:
        rng = RngStream(0).child("oracle")
    return {
        s: mc_return_oracle(spec, s, gamma, n_rollouts, rng=rng.child(s), cache_dir=cache_dir)
        for s in spec.nonterminal_states
    }


# ---------------------------------------------------------------------------
# Offline datasets
# ---------------------------------------------------------------------------


def generate_dataset(spec: MrpSpec, n_transitions: int, rng: RngStream) -> list[Transition]:
    """Harvest transitions by rolling episodes, restarting at termination.

    Discrete MC restarts uniformly over interior states; the other two
    environments have a single state. Deterministic given the rng stream.
    """
    if n_transitions < 1:
        raise UsageError(f"n_transitions must be >= 1, got {n_transitions}")
    kernel = discrete_mc_kernel(spec.n_states) if spec.kind == "discrete_mc" else None

    def restart() -> int:
        if spec.kind == "discrete_mc":
            return int(rng.integers(1, spec.n_states - 1))
        return 0

    out: list[Transition] = []
    state = restart()
    while len(out) < n_transitions:
        tr = sample_transition(spec, state, rng, kernel)
        out.append(tr)
        state = restart() if tr.done else tr.next_state
    return out


def pack_transitions(transitions: list[Transition]):
    """Split a transition list into flat arrays (state, reward, next, done)."""
    if not transitions:
        raise UsageError("empty transition list")
    states = np.array([tr.state for tr in transitions], dtype=int)
    rewards = np.array([tr.reward for tr in transitions], dtype=float)
    next_states = np.array([tr.next_state for tr in transitions], dtype=int)
    dones = np.array([tr.done for tr in transitions], dtype=bool)
    return states, rewards, next_states, dones


def save_dataset_csv(transitions: list[Transition], path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "reward", "next_state", "done"])
        for tr in transitions:
            writer.writerow([tr.state, repr(tr.reward), tr.next_state, int(tr.done)])
    os.replace(tmp, path)


def load_dataset_csv(path: str) -> list[Transition]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["state", "reward", "next_state", "done"]:
            raise UsageError(f"unexpected dataset header {header}")
        for row in reader:
            out.append(Transition(int(row[0]), float(row[1]), int(row[2]), bool(int(row[3]))))
    return out
