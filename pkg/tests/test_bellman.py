"""Coupled-path algebra and batch-construction tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbf import bellman, flow, nn
from pcbf.envs import TERMINAL, Transition
from pcbf.errors import ConfigError, UsageError
from pcbf.rng import RngStream
from pcbf.trainer import TrainConfig

vals = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False)
ts = st.floats(min_value=0.0, max_value=1.0)
gammas = st.floats(min_value=0.0, max_value=0.999)


def zero_target(ctx_dim: int) -> nn.MlpParams:
    sizes = (2 + ctx_dim, 4, 1)
    return nn.MlpParams(
        sizes,
        (np.zeros((sizes[0], 4)), np.zeros((4, 1))),
        (np.zeros(4), np.zeros(1)),
    )


class TestPathAlgebra:
    def test_successor_path_points(self):
        assert bellman.successor_path(1.0, 3.0, 0.0) == 1.0
        assert bellman.successor_path(1.0, 3.0, 1.0) == 3.0
        assert bellman.successor_path(0.0, 2.0, 0.5) == 1.0

    def test_current_path_boundaries(self):
        assert bellman.current_path(x0=-1.7, x_prime=9.0, r=3.0, gamma_eff=0.5, t=0.0) == -1.7
        assert bellman.current_path(x0=-1.7, x_prime=1.0, r=2.0, gamma_eff=0.9, t=1.0) == pytest.approx(2.9, abs=1e-15)

    def test_two_forms_agree_spot(self):
        a = bellman.current_path(x0=-1.0, x_prime=2.0, r=0.5, gamma_eff=0.9, t=0.3)
        b = bellman.current_path_alt(x0=-1.0, x_prime=2.0, r=0.5, gamma_eff=0.9, t=0.3)
        assert abs(a - b) <= 1e-12

    def test_two_forms_agree_bulk(self):
        rng = np.random.default_rng(0)
        n = 10_000
        x0 = rng.normal(size=n) * 10
        xp = rng.normal(size=n) * 10
        r = rng.normal(size=n) * 5
        g = rng.uniform(0.0, 0.999, size=n)
        t = rng.uniform(0.0, 1.0, size=n)
        a = bellman.current_path(x0, xp, r, g, t)
        b = bellman.current_path_alt(x0, xp, r, g, t)
        assert np.max(np.abs(a - b)) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(x0=vals, xp=vals, r=vals, g=gammas)
    def test_source_boundary_property(self, x0, xp, r, g):
        assert bellman.current_path(x0, xp, r, g, 0.0) == x0

    @settings(max_examples=100, deadline=None)
    @given(x0=vals, xp=vals, r=vals, g=gammas)
    def test_bellman_endpoint_property(self, x0, xp, r, g):
        end = bellman.current_path(x0, xp, r, g, 1.0)
        assert end == pytest.approx(r + g * xp, rel=1e-14, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(x0=vals, r=vals, g=st.floats(min_value=0.1, max_value=0.999))
    def test_uncorrected_path_misses_source(self, x0, r, g):
        # the uncorrected map r + gamma*z'_t starts at r + gamma*x0, which
        # differs from the required source x0 whenever r + (gamma-1)*x0 != 0
        uncorrected_start = r + g * x0
        if abs(r + (g - 1.0) * x0) > 1e-9:
            assert uncorrected_start != pytest.approx(x0, abs=1e-10)

    def test_bcfm_is_time_derivative_of_current_path(self):
        x0, xp, r, g = -0.4, 1.7, 0.5, 0.9
        y = bellman.bcfm_target(r, g, xp, x0)
        h = 1e-6
        for t in (0.2, 0.5, 0.8):
            fd = (
                bellman.current_path(x0, xp, r, g, t + h)
                - bellman.current_path(x0, xp, r, g, t - h)
            ) / (2 * h)
            assert abs(fd - y) <= 1e-8


class TestTargets:
    def test_bcfm_examples(self):
        assert bellman.bcfm_target(0.0, 0.0, 123.0, 1.0) == -1.0
        assert bellman.bcfm_target(1.0, 0.5, 2.0, 0.0) == 2.0

    def test_control_variate_examples(self):
        assert bellman.control_variate(2.0 - 0.0, 2.0, 0.0) == 0.0
        assert bellman.control_variate(1.0, 2.0, 0.0) == -1.0

    def test_control_variate_constant_field(self):
        # target net clamped to a constant field k: C = k - (x' - x0)
        k = 0.7
        for x0, xp in [(0.0, 1.0), (-2.0, 0.5)]:
            assert bellman.control_variate(k, xp, x0) == pytest.approx(k - (xp - x0), abs=1e-15)

    def test_lambda_zero_recovers_plain_target(self):
        assert bellman.lambda_target(3.7, -100.0, 0.0) == 3.7

    def test_lambda_one_cancels(self):
        y = 2.2
        assert bellman.lambda_target(y, -y, 1.0) == 0.0

    def test_lambda_range(self):
        with pytest.raises(ConfigError):
            bellman.lambda_target(1.0, 1.0, 1.5)
        with pytest.raises(ConfigError):
            bellman.lambda_target(1.0, 1.0, -0.1)

    @settings(max_examples=100, deadline=None)
    @given(x0=vals, xp=vals, r=vals, c_t=vals, g=st.floats(min_value=0.1, max_value=0.999))
    def test_lambda_equals_gamma_eliminates_successor(self, x0, xp, r, c_t, g):
        # at lambda = gamma the explicit successor sample cancels:
        # u = r - (1-gamma)*x0 + gamma*c_t
        y = bellman.bcfm_target(r, g, xp, x0)
        c = bellman.control_variate(c_t, xp, x0)
        u = bellman.lambda_target(y, c, g)
        expected = r - (1.0 - g) * x0 + g * c_t
        assert u == pytest.approx(expected, rel=1e-12, abs=1e-9)


class TestTerminalMask:
    def test_nonterminal_passthrough(self):
        assert bellman.terminal_mask(0.99, 0.4, False) == (0.99, 0.4)

    def test_terminal_zeroes_both(self):
        g, lam = bellman.terminal_mask(0.9, 0.7, True)
        assert g == 0.0 and lam == 0.0

    def test_vectorized(self):
        g, lam = bellman.terminal_mask(0.9, 0.5, np.array([False, True]))
        np.testing.assert_array_equal(g, [0.9, 0.0])
        np.testing.assert_array_equal(lam, [0.5, 0.0])

    def test_range_checks(self):
        with pytest.raises(ConfigError):
            bellman.terminal_mask(0.0, 0.5, False)
        with pytest.raises(ConfigError):
            bellman.terminal_mask(0.9, 1.5, False)


class TestBuildCoupledBatch:
    def config(self, lam=0.0, gamma=0.9):
        return TrainConfig(gamma=gamma, lam=lam, total_steps=1, seed=0)

    def test_terminal_transition_masks(self):
        target = nn.init_params([3, 8, 1], seed=3)
        online = target
        batch = [Transition(0, 1.0, TERMINAL, True)]
        items = bellman.build_coupled_batch(batch, online, target, self.config(lam=0.5), RngStream(1))
        it = items[0]
        assert it.gamma_eff == 0.0 and it.lambda_eff == 0.0
        assert it.u == pytest.approx(1.0 - it.x0, abs=1e-12)
        assert it.z_curr == pytest.approx((1 - it.t) * it.x0 + it.t * 1.0, abs=1e-12)

    def test_zero_field_target_pipeline(self):
        # zero target field: x' = x0, c_t = 0, C = 0, u = y = r + g*x0 - x0
        target = zero_target(1)
        batch = [Transition(0, 0.5, 0, False), Transition(0, -1.0, 0, False)]
        cfg = self.config(lam=0.3, gamma=0.8)
        items = bellman.build_coupled_batch(batch, target, target, cfg, RngStream(2))
        for it, tr in zip(items, batch):
            assert it.x_prime == it.x0
            assert it.c_t == 0.0
            assert it.u == pytest.approx(tr.reward + 0.8 * it.x0 - it.x0, abs=1e-12)

    def test_shared_noise_is_one_draw(self):
        # the recorded x0 reproduces x', z_succ, and z_curr exactly
        target = nn.init_params([3, 8, 1], seed=5)
        cfg = self.config(lam=0.4)
        batch = [Transition(0, 1.0, 0, False) for _ in range(4)]
        items = bellman.build_coupled_batch(batch, target, target, cfg, RngStream(3))
        for it in items:
            xp = flow.euler_integrate_batch(target, np.array([it.x0]), np.ones((1, 1)), cfg.nfe)[0]
            assert xp == it.x_prime
            assert bellman.successor_path(it.x0, it.x_prime, it.t) == it.z_succ
            assert bellman.current_path(it.x0, it.x_prime, 1.0, it.gamma_eff, it.t) == it.z_curr

    def test_target_field_defines_c_t(self):
        target = nn.init_params([3, 8, 1], seed=6)
        cfg = self.config(lam=0.2)
        batch = [Transition(0, 0.0, 0, False)]
        (it,) = bellman.build_coupled_batch(batch, target, target, cfg, RngStream(4))
        expected = nn.forward(target, np.array([it.z_succ, it.t, 1.0]))
        assert it.c_t == pytest.approx(expected, rel=1e-12)

    def test_mask_values_partition(self):
        target = nn.init_params([3, 8, 1], seed=7)
        cfg = self.config(lam=0.6, gamma=0.95)
        batch = [
            Transition(0, 1.0, 0, False),
            Transition(0, 0.0, TERMINAL, True),
            Transition(0, 1.0, 0, False),
        ]
        items = bellman.build_coupled_batch(batch, target, target, cfg, RngStream(5))
        for it, tr in zip(items, batch):
            assert it.gamma_eff in (0.95, 0.0)
            assert it.lambda_eff in (0.6, 0.0)
            assert (it.gamma_eff == 0.0 and it.lambda_eff == 0.0) == tr.done

    def test_empty_batch_rejected(self):
        target = nn.init_params([3, 8, 1], seed=0)
        with pytest.raises(UsageError):
            bellman.build_coupled_batch([], target, target, self.config(), RngStream(0))

    def test_deterministic_given_stream(self):
        target = nn.init_params([3, 8, 1], seed=8)
        batch = [Transition(0, 1.0, 0, False)] * 3
        a = bellman.build_coupled_batch(batch, target, target, self.config(), RngStream(6).child("x"))
        b = bellman.build_coupled_batch(batch, target, target, self.config(), RngStream(6).child("x"))
        assert a == b


class TestOneHotContexts:
    def test_basic(self):
        ctx = bellman.one_hot_contexts(np.array([0, 2, TERMINAL]), 3)
        np.testing.assert_array_equal(ctx, [[1, 0, 0], [0, 0, 1], [0, 0, 0]])
