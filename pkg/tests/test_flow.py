"""Interpolant, Euler-map, and return-sampling tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pcbf import flow, nn
from pcbf.errors import ConfigError, NumericError, UsageError
from pcbf.rng import RngStream

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def constant_field_params(c: float, ctx_dim: int = 1) -> nn.MlpParams:
    """A one-layer net whose output is identically c (zero weights, bias c)."""
    sizes = (2 + ctx_dim, 1)
    return nn.MlpParams(sizes, (np.zeros((sizes[0], 1)),), (np.array([c]),))


class TestLinearInterpolant:
    def test_boundaries(self):
        assert flow.linear_interpolant(2.0, 5.0, 0.0) == 2.0
        assert flow.linear_interpolant(2.0, 5.0, 1.0) == 5.0

    def test_quarter(self):
        assert flow.linear_interpolant(0.0, 4.0, 0.25) == 1.0

    @settings(max_examples=60, deadline=None)
    @given(x0=finite_floats, x1=finite_floats)
    def test_boundary_exactness_property(self, x0, x1):
        assert flow.linear_interpolant(x0, x1, 0.0) == x0
        assert flow.linear_interpolant(x0, x1, 1.0) == x1

    @pytest.mark.parametrize("t", [-0.1, 1.1, 2.0])
    def test_t_range(self, t):
        with pytest.raises(UsageError):
            flow.linear_interpolant(0.0, 1.0, t)


class TestCfmTarget:
    def test_values(self):
        assert flow.cfm_target(0.0, 3.0) == 3.0
        assert flow.cfm_target(1.7, 1.7) == 0.0
        assert flow.cfm_target(-1.0, 2.0) == 3.0


class TestEulerIntegrate:
    @pytest.mark.parametrize("nfe", [1, 3, 10, 37])
    def test_constant_field_exact(self, nfe):
        c = -0.7
        out = flow.euler_integrate(lambda t, z, ctx: c, 2.0, np.zeros(1), nfe)
        assert out == pytest.approx(2.0 + c, abs=1e-12)

    @pytest.mark.parametrize("nfe", [1, 2, 5, 20])
    def test_linear_field_closed_form(self, nfe):
        # dz/dt = z from z=1: Euler gives (1 + 1/N)^N exactly
        out = flow.euler_integrate(lambda t, z, ctx: z, 1.0, np.zeros(1), nfe)
        assert out == pytest.approx((1.0 + 1.0 / nfe) ** nfe, rel=1e-14)

    def test_zero_field_identity(self):
        assert flow.euler_integrate(lambda t, z, ctx: 0.0, -3.3, np.zeros(1), 10) == -3.3

    def test_first_order_convergence(self):
        # exact flow of dz/dt = z is e; the endpoint error should halve
        # when the step count doubles (ratio within [1.6, 2.4])
        exact = np.e
        for nfe in (8, 16, 32):
            e1 = abs(flow.euler_integrate(lambda t, z, ctx: z, 1.0, np.zeros(1), nfe) - exact)
            e2 = abs(flow.euler_integrate(lambda t, z, ctx: z, 1.0, np.zeros(1), 2 * nfe) - exact)
            assert 1.6 <= e1 / e2 <= 2.4

    def test_nonfinite_field_reports_step(self):
        def bad(t, z, ctx):
            return np.inf if t >= 0.5 else 1.0

        with pytest.raises(NumericError, match="step 5"):
            flow.euler_integrate(bad, 0.0, np.zeros(1), 10)

    def test_nfe_validaton(self):
        with pytest.raises(ConfigError):
            flow.euler_integrate(lambda t, z, ctx: 0.0, 0.0, np.zeros(1), 0)

    def test_batch_matches_scalar_loop(self):
        params = nn.init_params([3, 8, 1], seed=3)
        x0 = np.array([0.1, -1.0, 2.0])
        ctxs = np.ones((3, 1))

        def field(t, z, ctx):
            return nn.forward(params, np.array([z, t, 1.0]))

        batch = flow.euler_integrate_batch(params, x0, ctxs, 7)
        singles = [flow.euler_integrate(field, x, np.ones(1), 7) for x in x0]
        np.testing.assert_allclose(batch, singles, rtol=1e-12, atol=1e-12)

    def test_partial_integration_stops_short(self):
        params = constant_field_params(1.0)
        x0 = np.zeros(4)
        ctxs = np.ones((4, 1))
        out = flow.euler_integrate_partial_batch(params, x0, ctxs, 10, 3)
        np.testing.assert_allclose(out, 0.3, atol=1e-15)


class TestSampleReturns:
    def test_zero_field_returns_base_noise(self):
        params = constant_field_params(0.0)
        rng = RngStream(5).child("s")
        samples = flow.sample_returns(params, np.ones(1), 100, rng, 10)
        expected = RngStream(5).child("s").normal(100)
        np.testing.assert_array_equal(samples, expected)

    def test_deterministic_given_stream(self):
        params = nn.init_params([3, 8, 1], seed=0)
        a = flow.sample_returns(params, np.ones(1), 3, RngStream(9).child("x"), 10)
        b = flow.sample_returns(params, np.ones(1), 3, RngStream(9).child("x"), 10)
        np.testing.assert_array_equal(a, b)

    def test_constant_field_shifts_noise(self):
        c = 1.8
        params = constant_field_params(c)
        n = 40_000
        samples = flow.sample_returns(params, np.ones(1), n, RngStream(2).child("c"), 10)
        # each sample is its base noise + c, so the mean concentrates at c
        assert abs(samples.mean() - c) <= 4.0 / np.sqrt(n)

    def test_source_preservation_ks(self):
        # zero field: the output law must stay standard normal
        params = constant_field_params(0.0)
        samples = flow.sample_returns(params, np.ones(1), 100_000, RngStream(7).child("ks"), 10)
        ks = stats.kstest(samples, "norm").statistic
        crit_1pct = 1.6276 / np.sqrt(100_000)
        assert ks < crit_1pct

    def test_n_validation(self):
        with pytest.raises(UsageError):
            flow.sample_returns(constant_field_params(0.0), np.ones(1), 0, RngStream(0), 10)
