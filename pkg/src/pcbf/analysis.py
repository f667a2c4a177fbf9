"""Distribution metrics and numerical validation of the closed-form theory.

Contents: exact Wasserstein-1 between one-dimensional CDF representations,
the implied-noise inverse map, linear-Gaussian closed forms for the
control-variate residual (regression slope, variance-minimizing lambda,
target variance), Monte Carlo verifiers for those closed forms, shared-noise
contraction checks, the Euler endpoint-sensitivity bound, the corrected
pathwise residual sweep, and mean-return scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import flow, nn
from .bellman import one_hot_contexts
from .envs import (
    MrpSpec,
    ReturnLaw,
    Transition,
    discrete_mc_kernel,
)
from .errors import ConfigError, NumericError, SingularMapError, UsageError
from .rng import RngStream

__all__ = [
    "wasserstein1",
    "implied_noise",
    "gaussian_beta",
    "gaussian_vstar_successor",
    "gaussian_vstar_current",
    "kappa",
    "lambda_star",
    "target_variance",
    "GaussianCase",
    "simulate_coupled_gaussian",
    "simulate_lambda_targets",
    "KappaCheck",
    "verify_kappa_mc",
    "PosteriorVelocityCheck",
    "verify_posterior_velocity_mc",
    "LambdaStarCheck",
    "verify_lambda_star_mc",
    "ReturnGenerator",
    "generator_state_count",
    "ContractionCheck",
    "contraction_check",
    "InterpolantContractionCheck",
    "interpolant_contraction_check",
    "EulerSensitivity",
    "euler_sensitivity_check",
    "ResidualGrid",
    "corrected_residual_sweep",
    "qhat_mean",
    "CheckReport",
    "run_theory_checks",
]


# ---------------------------------------------------------------------------
# Wasserstein-1
# ---------------------------------------------------------------------------


def wasserstein1(a: ReturnLaw, b: ReturnLaw) -> float:
    """Exact integral of |F_a - F_b| over the merged breakpoint grid.

    Within each cell of the merged grid both CDFs are affine (constant for
    step CDFs, linear for the piecewise-linear representation), so their
    difference is affine and the absolute integral has a closed form with a
    zero-crossing split. Symmetric, and exactly zero for identical laws.
    """
    bps = np.union1d(a.breakpoints(), b.breakpoints())
    if bps.size < 2:
        return 0.0
    left, right = bps[:-1], bps[1:]
    d0 = a.cdf(left) - b.cdf(left)  # right limit at the cell's left edge
    d1 = a.cdf_left(right) - b.cdf_left(right)  # left limit at the right edge
    w = right - left
    span = np.abs(d0) + np.abs(d1)
    trapezoid = 0.5 * span * w
    with np.errstate(divide="ignore", invalid="ignore"):
        crossing = np.where(span > 0.0, 0.5 * (d0**2 + d1**2) / np.where(span > 0, span, 1.0) * w, 0.0)
    return float(np.sum(np.where(d0 * d1 >= 0.0, trapezoid, crossing)))


# ---------------------------------------------------------------------------
# Closed forms of the one-step linear-Gaussian model
# ---------------------------------------------------------------------------


def implied_noise(x, x1_prime, r, gamma, t):
    """Invert the current interpolant for fixed (x1', r): the noise that maps to x."""
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"t must lie in [0, 1), got {t}")
    if t == 1.0:
        raise SingularMapError("implied noise is undefined at t = 1")
    return (x - t * (r + gamma * x1_prime)) / (1.0 - t)


def gaussian_beta(t: float, sigma: float) -> float:
    """Regression slope of the successor velocity on the successor interpolant."""
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"t must lie in [0, 1], got {t}")
    denom = t**2 * sigma**2 + (1.0 - t) ** 2
    if denom == 0.0:
        raise SingularMapError("beta is undefined at t = 1 with sigma = 0")
    return (t * sigma**2 - (1.0 - t)) / denom


def gaussian_vstar_successor(z_prime, t: float, mu: float, sigma: float):
    """Population-optimal successor velocity mu + beta * (z' - t*mu)."""
    return mu + gaussian_beta(t, sigma) * (z_prime - t * mu)


def gaussian_vstar_current(x, t: float, mu: float, sigma: float, gamma: float, r: float):
    """Population velocity of the current interpolant in the Gaussian model.

    The current endpoint r + gamma*Z1' is Gaussian with mean r + gamma*mu and
    scale gamma*sigma, so the successor formula applies with those values.
    """
    m1 = r + gamma * mu
    return m1 + gaussian_beta(t, gamma * sigma) * (x - t * m1)


def kappa(t: float, gamma: float, sigma: float, rho: float) -> float:
    """Slope of E[control variate | current interpolant] about its center."""
    d_succ = t**2 * sigma**2 + (1.0 - t) ** 2
    d_curr = (gamma * t) ** 2 * sigma**2 + (1.0 - t) ** 2
    if d_succ == 0.0 or d_curr == 0.0:
        raise SingularMapError("kappa is undefined where an interpolant variance vanishes")
    return t * (1.0 - t) * sigma**2 * (rho - gamma) / (d_succ * d_curr)


def lambda_star(t: float, gamma: float, rho: float) -> float:
    """Variance-minimizing control-variate coefficient gamma*(1-t) + rho*t."""
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"t must lie in [0, 1], got {t}")
    return gamma * (1.0 - t) + rho * t


def target_variance(lam: float, t: float, gamma: float, sigma: float, rho: float) -> float:
    """Closed-form variance of the lambda-target in the linear-Gaussian model."""
    d_t = t**2 * sigma**2 + (1.0 - t) ** 2
    if d_t == 0.0:
        raise SingularMapError("target variance is undefined where D_t vanishes")
    return 1.0 + gamma**2 * sigma**2 + sigma**2 / d_t * (lam**2 - 2.0 * lam * lambda_star(t, gamma, rho))


@dataclass(frozen=True)
class GaussianCase:
    """One-step linear-Gaussian MRP: N(mu, sigma^2) successor, reward r,
    base-noise correlation rho between current and successor flows."""

    mu: float
    sigma: float
    gamma: float
    rho: float
    r: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [-1, 1], got {self.rho}")


def simulate_coupled_gaussian(case: GaussianCase, t: float, n: int, rng: RngStream) -> dict:
    """Draw the coupled model: returns interpolants, control variate, and target pieces.

    Noise representation: x0' = v', x0 = rho*v' + sqrt(1-rho^2)*v with
    independent standard normals (w, v, v'); successor return mu + sigma*w.
    """
    w = rng.normal(n)
    v = rng.normal(n)
    v_prime = rng.normal(n)
    x0_prime = v_prime
    x0 = case.rho * v_prime + math.sqrt(1.0 - case.rho**2) * v
    z1_prime = case.mu + case.sigma * w
    zt_prime = t * z1_prime + (1.0 - t) * x0_prime
    zt = t * (case.r + case.gamma * z1_prime) + (1.0 - t) * x0
    c = gaussian_vstar_successor(zt_prime, t, case.mu, case.sigma) - (z1_prime - x0_prime)
    y = (case.r + case.gamma * z1_prime) - x0
    return {"zt": zt, "zt_prime": zt_prime, "c": c, "y": y, "z1_prime": z1_prime, "x0": x0}


def simulate_lambda_targets(case: GaussianCase, lam: float, t: float, n: int, rng: RngStream) -> np.ndarray:
    """Samples of the lambda-target y + lam*c under the coupled Gaussian model."""
    draws = simulate_coupled_gaussian(case, t, n, rng)
    return draws["y"] + lam * draws["c"]


@dataclass(frozen=True)
class KappaCheck:
    slope_estimate: float
    kappa_exact: float
    rel_error: float
    slope_stderr: float
    n_samples: int

    def passed(self, rel_tol: float = 0.10, zero_se_mult: float = 3.0) -> bool:
        if self.kappa_exact == 0.0:
            return abs(self.slope_estimate) <= zero_se_mult * self.slope_stderr
        return self.rel_error <= rel_tol


def verify_kappa_mc(case: GaussianCase, t: float, n_samples: int, rng: RngStream) -> KappaCheck:
    """Regress the intrinsic control variate on the centered current interpolant.

    Through-origin regression; the closed form is exactly linear through the
    centered origin, so the slope estimates kappa directly.
    """
    if n_samples < 100_000:
        raise UsageError(f"n_samples must be >= 1e5 for a stable slope, got {n_samples}")
    draws = simulate_coupled_gaussian(case, t, n_samples, rng)
    x_c = draws["zt"] - t * (case.r + case.gamma * case.mu)
    sxx = float(np.dot(x_c, x_c))
    if sxx == 0.0:
        raise NumericError("degenerate regressor variance")
    slope = float(np.dot(draws["c"], x_c)) / sxx
    resid = draws["c"] - slope * x_c
    stderr = math.sqrt(float(np.dot(resid, resid)) / (n_samples - 1) / sxx)
    exact = kappa(t, case.gamma, case.sigma, case.rho)
    rel = abs(slope - exact) / abs(exact) if exact != 0.0 else math.inf
    return KappaCheck(slope, exact, rel, stderr, n_samples)


@dataclass(frozen=True)
class PosteriorVelocityCheck:
    x_grid: np.ndarray
    estimates: np.ndarray
    exact: np.ndarray
    max_rel_error: float
    bandwidth: float


def verify_posterior_velocity_mc(
    case: GaussianCase,
    t: float,
    n_samples: int,
    rng: RngStream,
    x_grid: np.ndarray | None = None,
    bandwidth: float | None = None,
) -> PosteriorVelocityCheck:
    """Kernel-regression check of the population current-path velocity.

    Nadaraya-Watson with a Gaussian kernel and a Silverman-style bandwidth
    estimates E[pathwise velocity | current interpolant] and is compared to
    the closed form on a grid spanning +/- 1.5 sd of the interpolant.
    """
    draws = simulate_coupled_gaussian(case, t, n_samples, rng)
    zt, g = draws["zt"], draws["y"]
    sd = float(np.std(zt))
    if bandwidth is None:
        bandwidth = 1.06 * sd * n_samples ** (-0.2)
    if x_grid is None:
        center = t * (case.r + case.gamma * case.mu)
        x_grid = center + np.linspace(-1.5, 1.5, 9) * sd
    x_grid = np.asarray(x_grid, dtype=float)
    est = np.empty(x_grid.size)
    for i, x in enumerate(x_grid):
        wts = np.exp(-0.5 * ((zt - x) / bandwidth) ** 2)
        total = wts.sum()
        if total == 0.0:
            raise NumericError(f"no kernel mass at grid point {x}")
        est[i] = float(np.dot(wts, g) / total)
    exact = gaussian_vstar_current(x_grid, t, case.mu, case.sigma, case.gamma, case.r)
    rel = float(np.max(np.abs(est - exact) / np.abs(exact)))
    return PosteriorVelocityCheck(x_grid, est, exact, rel, bandwidth)


@dataclass(frozen=True)
class LambdaStarCheck:
    lam_grid: np.ndarray
    empirical_var: np.ndarray
    closed_form_var: np.ndarray
    argmin_empirical: float
    lambda_star_exact: float
    max_var_rel_error: float


def verify_lambda_star_mc(
    case: GaussianCase,
    t: float,
    n_samples: int,
    rng: RngStream,
    lam_grid: np.ndarray | None = None,
) -> LambdaStarCheck:
    """Empirical variance of the lambda-target over a lambda grid.

    Common random numbers across grid points: one draw set is reused for all
    lambdas, so the empirical variance is an exact quadratic in lambda and
    the argmin is stable.
    """
    if lam_grid is None:
        lam_grid = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)
    lam_grid = np.asarray(lam_grid, dtype=float)
    draws = simulate_coupled_gaussian(case, t, n_samples, rng)
    y, c = draws["y"], draws["c"]
    emp = np.array([float(np.var(y + lam * c, ddof=1)) for lam in lam_grid])
    closed = np.array([target_variance(lam, t, case.gamma, case.sigma, case.rho) for lam in lam_grid])
    rel = float(np.max(np.abs(emp - closed) / closed))
    return LambdaStarCheck(
        lam_grid, emp, closed,
        argmin_empirical=float(lam_grid[int(np.argmin(emp))]),
        lambda_star_exact=lambda_star(t, case.gamma, case.rho),
        max_var_rel_error=rel,
    )


# ---------------------------------------------------------------------------
# Shared-noise contraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReturnGenerator:
    """Affine per-state return generator g_s(xi) = offset_s + scale_s * xi.

    Rich enough to exercise the sup over states while keeping pathwise
    differences exactly computable. Generators are defined on every state a
    one-step transition can land in, absorbing states included, so the
    shared-coupling update gap is exactly gamma times the generator gap at
    the landing state.
    """

    offsets: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=float))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float))

    def value(self, states: np.ndarray, xi: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        return self.offsets[states] + self.scales[states] * np.asarray(xi, dtype=float)

    @classmethod
    def random(cls, n_states: int, rng: RngStream, offset_span: float = 5.0, scale_span: float = 2.0):
        return cls(
            offsets=rng.uniform(-offset_span, offset_span, n_states),
            scales=rng.uniform(0.0, scale_span, n_states),
        )

    def shifted(self, c: float) -> ReturnGenerator:
        return ReturnGenerator(self.offsets + c, self.scales)


def generator_state_count(spec: MrpSpec) -> int:
    """States a generator must cover: reachable landing states included.

    The solitaire stop outcome is modeled as landing in an absorbing
    pseudo-state (index 1); the Bernoulli chain never leaves state 0; the
    nearest-neighbor chain can land in its absorbing boundary states.
    """
    if spec.kind == "solitaire":
        return 2
    if spec.kind == "bernoulli":
        return 1
    return spec.n_states


def _landing_step_batch(spec: MrpSpec, kernel: np.ndarray | None, state: int, n: int, rng: RngStream):
    """Vectorized one-step draws (landing state, reward) from a state."""
    u = rng.random(n)
    if spec.kind == "solitaire":
        stop = u < 1.0 / 6.0
        landings = np.where(stop, 1, 0)
        rewards = np.where(stop, 0.0, 1.0)
    elif spec.kind == "bernoulli":
        landings = np.zeros(n, dtype=int)
        rewards = (u < 0.5).astype(float)
    else:
        row = kernel[state]
        lo, stay = row[state - 1], row[state]
        landings = np.where(u < lo, state - 1, np.where(u < lo + stay, state, state + 1))
        rewards = np.where((landings == 0) | (landings == spec.n_states - 1), 0.0, 1.0)
    return landings, rewards


@dataclass(frozen=True)
class ContractionCheck:
    d_before: float
    d_after: float
    ratio: float
    gamma: float


def contraction_check(
    gen_g: ReturnGenerator,
    gen_h: ReturnGenerator,
    spec: MrpSpec,
    gamma: float,
    p: int,
    n_seeds: int,
    rng: RngStream,
) -> ContractionCheck:
    """Estimate the generator gap before/after one shared-coupling update.

    The same transition, reward, and successor seed drive both generators, so
    the reward cancels pathwise and the post-update gap contracts by gamma.
    Both gaps are sup-over-states Monte Carlo estimates of the p-norm.
    """
    if p < 1:
        raise UsageError(f"p must be >= 1, got {p}")
    kernel = discrete_mc_kernel(spec.n_states) if spec.kind == "discrete_mc" else None

    d_before = 0.0
    for s in range(generator_state_count(spec)):
        xi = rng.child("before", s).normal(n_seeds)
        s_arr = np.full(n_seeds, s)
        gap = np.abs(gen_g.value(s_arr, xi) - gen_h.value(s_arr, xi))
        d_before = max(d_before, float(np.mean(gap**p) ** (1.0 / p)))

    d_after = 0.0
    for s in spec.nonterminal_states:
        sub = rng.child("after", s)
        landings, rewards = _landing_step_batch(spec, kernel, s, n_seeds, sub)
        xi_prime = sub.normal(n_seeds)
        tg = rewards + gamma * gen_g.value(landings, xi_prime)
        th = rewards + gamma * gen_h.value(landings, xi_prime)
        d_after = max(d_after, float(np.mean(np.abs(tg - th) ** p) ** (1.0 / p)))

    ratio = d_after / d_before if d_before > 0.0 else 0.0
    return ContractionCheck(d_before, d_after, ratio, gamma)


@dataclass(frozen=True)
class InterpolantContractionCheck:
    gap: float
    d_p: float
    bound: float
    ratio: float
    t: float


def interpolant_contraction_check(
    gen_g: ReturnGenerator,
    gen_h: ReturnGenerator,
    spec: MrpSpec,
    gamma: float,
    t: float,
    p: int,
    n_seeds: int,
    rng: RngStream,
) -> InterpolantContractionCheck:
    """Gap between coupled interpolants of two generators at a fixed time.

    The shared base noise cancels pathwise, leaving a t*gamma-scaled copy of
    the post-update generator gap; the bound compares the measured sup gap to
    t * gamma * D_p(G, H).
    """
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"t must lie in [0, 1], got {t}")
    kernel = discrete_mc_kernel(spec.n_states) if spec.kind == "discrete_mc" else None

    d_p = 0.0
    for s in range(generator_state_count(spec)):
        xi = rng.child("dp", s).normal(n_seeds)
        s_arr = np.full(n_seeds, s)
        gap_s = np.abs(gen_g.value(s_arr, xi) - gen_h.value(s_arr, xi))
        d_p = max(d_p, float(np.mean(gap_s**p) ** (1.0 / p)))

    gap = 0.0
    for s in spec.nonterminal_states:
        sub = rng.child("interp", s)
        landings, rewards = _landing_step_batch(spec, kernel, s, n_seeds, sub)
        xi_prime = sub.normal(n_seeds)
        x0 = sub.normal(n_seeds)
        xg = (1.0 - t) * x0 + t * (rewards + gamma * gen_g.value(landings, xi_prime))
        xh = (1.0 - t) * x0 + t * (rewards + gamma * gen_h.value(landings, xi_prime))
        gap = max(gap, float(np.mean(np.abs(xg - xh) ** p) ** (1.0 / p)))

    bound = t * gamma * d_p
    ratio = gap / d_p if d_p > 0.0 else 0.0
    return InterpolantContractionCheck(gap, d_p, bound, ratio, t)


# ---------------------------------------------------------------------------
# Euler endpoint sensitivity of the lambda-target
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EulerSensitivity:
    measured: float
    bound: float
    holds: bool


def euler_sensitivity_check(
    field: Callable[[float, float], float],
    lipschitz_const: float,
    delta: float,
    lam: float,
    gamma: float,
    t: float,
    x0: float = 0.0,
    x_prime: float = 0.0,
    r: float = 0.0,
) -> EulerSensitivity:
    """Check |target(perturbed endpoint) - target(exact)| <= (|gamma-lam| + lam*L*t)|delta|.

    The field must be Lipschitz in z with the stated constant over the probed
    range; the inequality is algebraic, so it is asserted with float slack
    only (no statistical tolerance).
    """
    if lam < 0.0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"t must lie in [0, 1], got {t}")
    z = (1.0 - t) * x0 + t * x_prime
    z_hat = (1.0 - t) * x0 + t * (x_prime + delta)
    u = r + gamma * x_prime - x0 + lam * (field(t, z) - (x_prime - x0))
    u_hat = r + gamma * (x_prime + delta) - x0 + lam * (field(t, z_hat) - (x_prime + delta - x0))
    measured = abs(u_hat - u)
    bound = (abs(gamma - lam) + lam * lipschitz_const * t) * abs(delta)
    holds = measured <= bound * (1.0 + 1e-12) + 1e-15
    return EulerSensitivity(measured, bound, holds)


# ---------------------------------------------------------------------------
# Corrected pathwise residual under coarse integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualGrid:
    """Mean absolute residual per (t, nfe) cell for one coupling mode."""

    t_grid: tuple[float, ...]
    nfe_grid: tuple[int, ...]
    values: np.ndarray
    stderrs: np.ndarray
    stop_times: np.ndarray  # left-grid snapped time actually integrated to
    coupling: str
    n_samples: int


def corrected_residual_sweep(
    online: nn.MlpParams,
    target: nn.MlpParams,
    transitions: Sequence[Transition],
    t_grid: Sequence[float],
    nfe_grid: Sequence[int],
    coupling: str,
    n_samples: int,
    rng: RngStream,
    gamma: float,
) -> ResidualGrid:
    """Mean |integrated current path - closed-form coupled interpolation|.

    Both paths are integrated with step size 1/N up to the nearest grid time
    <= t (the snapped stop time is recorded); the closed form re-applies the
    coupled interpolation at that same time using the integrated successor
    path. Shared coupling reuses one base noise for both paths; independent
    coupling draws a fresh successor noise from a dedicated sub-stream, so
    the common draws match across coupling modes under the same seed.
    """
    if coupling not in ("shared", "independent"):
        raise ConfigError(f"coupling must be 'shared' or 'independent', got {coupling!r}")
    nonterm = [tr for tr in transitions if not tr.done]
    if not nonterm:
        raise UsageError("need at least one non-terminal transition")
    states = np.array([tr.state for tr in nonterm], dtype=int)
    rewards = np.array([tr.reward for tr in nonterm], dtype=float)
    next_states = np.array([tr.next_state for tr in nonterm], dtype=int)
    n_ctx = online.context_dim

    values = np.zeros((len(t_grid), len(nfe_grid)))
    stderrs = np.zeros_like(values)
    stop_times = np.zeros_like(values)
    for i, t in enumerate(t_grid):
        if not 0.0 <= t <= 1.0:
            raise UsageError(f"t must lie in [0, 1], got {t}")
        for j, nfe in enumerate(nfe_grid):
            k = min(int(math.floor(t * nfe)), nfe)
            t_stop = k / nfe
            stop_times[i, j] = t_stop
            common = rng.child("common", i, j)
            idx = common.integers(0, len(nonterm), n_samples)
            x0 = common.normal(n_samples)
            cur_ctx = one_hot_contexts(states[idx], n_ctx)
            succ_ctx = one_hot_contexts(next_states[idx], n_ctx)
            z_cur = flow.euler_integrate_partial_batch(online, x0, cur_ctx, nfe, k)
            succ_x0 = x0 if coupling == "shared" else rng.child("indep", i, j).normal(n_samples)
            z_succ = flow.euler_integrate_partial_batch(target, succ_x0, succ_ctx, nfe, k)
            interp = t_stop * rewards[idx] + gamma * z_succ + (1.0 - t_stop) * (1.0 - gamma) * x0
            resid = np.abs(z_cur - interp)
            values[i, j] = float(resid.mean())
            stderrs[i, j] = float(resid.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return ResidualGrid(tuple(t_grid), tuple(int(n) for n in nfe_grid), values, stderrs, stop_times, coupling, n_samples)


def qhat_mean(params: nn.MlpParams, context: np.ndarray, m_samples: int, rng: RngStream, nfe: int) -> float:
    """Mean terminal return of the learned flow from m base-noise draws."""
    return float(np.mean(flow.sample_returns(params, context, m_samples, rng, nfe)))


# ---------------------------------------------------------------------------
# Aggregate theory checks
# ---------------------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)


def _as_jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _as_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_as_jsonable(v) for v in value]
    return value


def reports_to_json(reports: list[CheckReport]) -> dict:
    return {
        "all_passed": all(r.passed for r in reports),
        "checks": [
            {"name": r.name, "passed": r.passed, "details": _as_jsonable(r.details)} for r in reports
        ],
    }


def _check_kappa(rng: RngStream, n: int) -> CheckReport:
    grid = []
    passed = True
    for t in (0.3, 0.5, 0.7):
        for rho in (0.0, 1.0):
            case = GaussianCase(mu=1.0, sigma=1.0, gamma=0.9, rho=rho, r=0.5)
            res = verify_kappa_mc(case, t, n, rng.child("kappa", int(t * 100), int(rho)))
            ok = res.passed(rel_tol=0.10)
            passed &= ok
            grid.append({"t": t, "rho": rho, "slope": res.slope_estimate,
                         "kappa": res.kappa_exact, "rel_error": res.rel_error, "passed": ok})
    # rho = gamma makes kappa exactly zero; the slope must vanish within 3 SE
    case0 = GaussianCase(mu=1.0, sigma=1.0, gamma=0.9, rho=0.9, r=0.5)
    res0 = verify_kappa_mc(case0, 0.5, n, rng.child("kappa-zero"))
    zero_ok = abs(res0.slope_estimate) <= 3.0 * res0.slope_stderr
    passed &= zero_ok
    return CheckReport(
        "kappa_regression",
        passed,
        {"tolerance_rel": 0.10, "n_samples": n, "grid": grid,
         "zero_case": {"slope": res0.slope_estimate, "stderr": res0.slope_stderr, "passed": zero_ok}},
    )


def _check_lambda_star(rng: RngStream, n: int) -> CheckReport:
    rows = []
    passed = True
    for t in (0.25, 0.5, 0.75):
        for rho in (0.0, 1.0):
            case = GaussianCase(mu=1.0, sigma=1.0, gamma=0.9, rho=rho, r=0.5)
            res = verify_lambda_star_mc(case, t, n, rng.child("lstar", int(t * 100), int(rho)))
            step = float(res.lam_grid[1] - res.lam_grid[0])
            argmin_ok = abs(res.argmin_empirical - res.lambda_star_exact) <= step + 1e-12
            var_ok = res.max_var_rel_error <= 0.02
            passed &= argmin_ok and var_ok
            rows.append({"t": t, "rho": rho, "argmin": res.argmin_empirical,
                         "lambda_star": res.lambda_star_exact,
                         "max_var_rel_error": res.max_var_rel_error,
                         "passed": argmin_ok and var_ok})
    return CheckReport("lambda_star_optimality", passed,
                       {"grid_step": 0.05, "var_tolerance_rel": 0.02, "n_samples": n, "cases": rows})


def _check_target_variance_point(rng: RngStream, n: int) -> CheckReport:
    case = GaussianCase(mu=1.0, sigma=1.0, gamma=0.9, rho=1.0, r=0.5)
    samples = simulate_lambda_targets(case, 0.3, 0.4, n, rng.child("varpoint"))
    emp = float(np.var(samples, ddof=1))
    closed = target_variance(0.3, 0.4, 0.9, 1.0, 1.0)
    rel = abs(emp - closed) / closed
    return CheckReport("target_variance_point", rel <= 0.02,
                       {"lambda": 0.3, "t": 0.4, "empirical": emp, "closed_form": closed,
                        "rel_error": rel, "tolerance_rel": 0.02, "n_samples": n})


def _check_contraction(rng: RngStream, n_pairs: int, n_seeds: int) -> CheckReport:
    rows = []
    passed = True
    specs = [MrpSpec.solitaire(), MrpSpec.discrete_mc()]
    for spec in specs:
        gamma = spec.gamma_default
        for pair in range(n_pairs):
            pair_rng = rng.child("pair", spec.kind, pair)
            gen_g = ReturnGenerator.random(generator_state_count(spec), pair_rng.child("g"))
            gen_h = ReturnGenerator.random(generator_state_count(spec), pair_rng.child("h"))
            for p in (1, 2):
                res = contraction_check(gen_g, gen_h, spec, gamma, p, n_seeds, pair_rng.child("mc", p))
                ok = res.ratio <= gamma + 0.02
                passed &= ok
                rows.append({"env": spec.kind, "pair": pair, "p": p, "ratio": res.ratio,
                             "gamma": gamma, "passed": ok})
        # constant offset: the update gap is exactly gamma * offset pathwise
        base = ReturnGenerator.random(generator_state_count(spec), rng.child("base", spec.kind))
        res = contraction_check(base, base.shifted(1.5), spec, gamma, 1, n_seeds, rng.child("const", spec.kind))
        const_ok = abs(res.ratio - gamma) <= 1e-12
        passed &= const_ok
        rows.append({"env": spec.kind, "pair": "constant_offset", "p": 1, "ratio": res.ratio,
                     "gamma": gamma, "passed": const_ok})
    return CheckReport("shared_noise_contraction", passed,
                       {"slack": 0.02, "n_pairs": n_pairs, "n_seeds": n_seeds, "cases": rows})


def _check_interpolant(rng: RngStream, n_pairs: int, n_seeds: int) -> CheckReport:
    rows = []
    passed = True
    spec = MrpSpec.discrete_mc()
    gamma = spec.gamma_default
    for pair in range(n_pairs):
        pair_rng = rng.child("ipair", pair)
        gen_g = ReturnGenerator.random(generator_state_count(spec), pair_rng.child("g"))
        gen_h = ReturnGenerator.random(generator_state_count(spec), pair_rng.child("h"))
        for t in (0.25, 0.5, 0.75):
            res = interpolant_contraction_check(
                gen_g, gen_h, spec, gamma, t, 1, n_seeds, pair_rng.child("mc", int(t * 100))
            )
            ok = res.gap <= res.bound + 0.02 * res.d_p
            passed &= ok
            rows.append({"pair": pair, "t": t, "gap": res.gap, "bound": res.bound,
                         "d_p": res.d_p, "passed": ok})
    return CheckReport("interpolant_contraction", passed,
                       {"slack_rel": 0.02, "n_pairs": n_pairs, "n_seeds": n_seeds, "cases": rows})


def _lipschitz_field_cases(rng: RngStream, n_cases: int):
    """Construct fields with known Lipschitz constants plus probe parameters."""
    cases = []
    for k in range(n_cases):
        sub = rng.child("field", k)
        kind = k % 4
        a = float(sub.uniform(-2.0, 2.0))
        b = float(sub.uniform(0.2, 3.0))
        if kind == 0:
            fld, lip = (lambda t, z, a=a: a), 0.0
        elif kind == 1:
            fld, lip = (lambda t, z, a=a: a * z), abs(a)
        elif kind == 2:
            fld, lip = (lambda t, z, a=a, b=b: a * math.sin(b * z)), abs(a * b)
        else:
            fld, lip = (lambda t, z, a=a: a * math.tanh(z)), abs(a)
        gamma = float(sub.uniform(0.5, 0.99))
        lam = float(sub.uniform(0.0, 1.0))
        t = float(sub.uniform(0.0, 1.0))
        delta = float(sub.uniform(-0.5, 0.5))
        x0 = float(sub.normal())
        x_prime = float(sub.normal())
        r = float(sub.uniform(-1.0, 1.0))
        cases.append(dict(field=fld, lip=lip, gamma=gamma, lam=lam, t=t, delta=delta,
                          x0=x0, x_prime=x_prime, r=r, kind=kind))
    return cases


def _check_euler_sensitivity(rng: RngStream, n_cases: int = 50) -> CheckReport:
    rows = []
    passed = True
    for i, case in enumerate(_lipschitz_field_cases(rng, n_cases)):
        res = euler_sensitivity_check(
            case["field"], case["lip"], case["delta"], case["lam"], case["gamma"], case["t"],
            x0=case["x0"], x_prime=case["x_prime"], r=case["r"],
        )
        passed &= res.holds
        rows.append({"case": i, "measured": res.measured, "bound": res.bound, "holds": res.holds})
    # lambda = 0 attains the bound gamma*|delta| exactly
    attain = euler_sensitivity_check(lambda t, z: 0.3, 0.0, 0.2, 0.0, 0.9, 0.5)
    attain_ok = attain.holds and attain.measured == attain.bound
    passed &= attain_ok
    return CheckReport("euler_sensitivity_bound", passed,
                       {"n_cases": n_cases, "cases": rows,
                        "lambda0_attainment": {"measured": attain.measured, "bound": attain.bound,
                                               "passed": attain_ok}})


def _check_posterior_velocity(rng: RngStream, n: int) -> CheckReport:
    case = GaussianCase(mu=1.0, sigma=1.0, gamma=0.9, rho=1.0, r=0.5)
    res = verify_posterior_velocity_mc(case, 0.5, n, rng.child("postvel"))
    return CheckReport("posterior_velocity_gaussian", res.max_rel_error <= 0.03,
                       {"t": 0.5, "max_rel_error": res.max_rel_error, "tolerance_rel": 0.03,
                        "bandwidth": res.bandwidth, "n_samples": n,
                        "x_grid": res.x_grid, "estimates": res.estimates, "exact": res.exact})


def run_theory_checks(seed: int, fast: bool = False) -> list[CheckReport]:
    """Run every closed-form verifier; `fast` shrinks sample counts for smoke tests."""
    rng = RngStream(seed).child("theory")
    n_mc = 200_000 if fast else 1_000_000
    n_pairs = 5 if fast else 20
    n_seeds = 20_000 if fast else 100_000
    return [
        _check_kappa(rng, n_mc),
        _check_lambda_star(rng, n_mc),
        _check_target_variance_point(rng, n_mc),
        _check_contraction(rng, n_pairs, n_seeds),
        _check_interpolant(rng, max(3, n_pairs // 4), n_seeds),
        _check_euler_sensitivity(rng),
        _check_posterior_velocity(rng, n_mc),
    ]
