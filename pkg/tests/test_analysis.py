import math

import numpy as np
import pytest

from waveconsensus.analysis import (FunctionalSample, FunctionalWeights,
                                    TimeSeries, agmon_check, decay_fit,
                                    iss_check, l2_norm_scalar, l2_norm_vector,
                                    lyapunov_sample, monotone_decay_report,
                                    open_loop_energy, open_loop_energy_fields,
                                    pointwise_bound_check, poincare_check,
                                    sandwich_report, spatial_derivative)
from waveconsensus.certificate import (certificate_constants_unperturbed,
                                       optimize_certificate)
from waveconsensus.graph import eig_extremes_sym
from waveconsensus.wavesim import Grid, WaveState

K1, K2, C0 = 30.0, 10.0, 2.5


def smooth_field(rng, nx, kmax=6):
    """Random trig polynomial with uniform coefficients on a unit grid."""
    x = np.linspace(0.0, 1.0, nx)
    f = rng.uniform(-1, 1) * np.ones(nx)
    for k in range(1, kmax + 1):
        f += rng.uniform(-1, 1) * np.cos(k * np.pi * x)
        f += rng.uniform(-1, 1) * np.sin(k * np.pi * x)
    return f


class TestNorms:
    def test_constant_unit_field(self):
        grid = Grid(nx=201)
        assert l2_norm_scalar(np.ones(201), grid) == pytest.approx(1.0, abs=1e-14)

    def test_linear_field(self):
        grid = Grid(nx=201)
        val = l2_norm_scalar(grid.points, grid)
        assert val == pytest.approx(math.sqrt(1.0 / 3.0), abs=1e-4)

    def test_zero_field(self):
        grid = Grid(nx=51)
        assert l2_norm_scalar(np.zeros(51), grid) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="nx"):
            l2_norm_scalar(np.ones(10), Grid(nx=51))

    def test_vector_of_unit_fields(self):
        grid = Grid(nx=101)
        val = l2_norm_vector(np.ones((3, 101)), grid)
        assert val == pytest.approx(math.sqrt(3.0), abs=1e-14)

    def test_single_agent_reduces_to_scalar(self):
        grid = Grid(nx=101)
        rng = np.random.default_rng(0)
        z = smooth_field(rng, 101)
        assert l2_norm_vector(z[None, :], grid) == pytest.approx(
            l2_norm_scalar(z, grid), rel=1e-15)

    def test_reference_error_fields_against_fine_quadrature(self):
        # initial deviation fields of the reference setup; oracle is the
        # same integrand on a 40x finer trapezoid grid
        grid = Grid(nx=201)
        x = grid.points
        fields = np.stack([
            5 * np.cos(2 * np.pi * x) - 10 * np.cos(2 * np.pi * x),
            np.cos(np.pi * x) - 10 * np.cos(2 * np.pi * x),
            -5 * np.cos(np.pi * x) - 10 * np.cos(2 * np.pi * x)])
        xf = np.linspace(0.0, 1.0, 8001)
        fine = np.stack([
            5 * np.cos(2 * np.pi * xf) - 10 * np.cos(2 * np.pi * xf),
            np.cos(np.pi * xf) - 10 * np.cos(2 * np.pi * xf),
            -5 * np.cos(np.pi * xf) - 10 * np.cos(2 * np.pi * xf)])
        oracle = math.sqrt(sum(np.trapezoid(row ** 2, xf) for row in fine))
        val = l2_norm_vector(fields, grid)
        assert val > 0
        assert val == pytest.approx(oracle, rel=5e-4)

    def test_quadrature_second_order_convergence(self):
        errs = []
        for nx in (51, 101, 201):
            grid = Grid(nx=nx)
            val = l2_norm_scalar(grid.points ** 2, grid)
            errs.append(abs(val - math.sqrt(0.2)))
        assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.5)
        assert errs[1] / errs[2] == pytest.approx(4.0, abs=0.5)


class TestSpatialDerivative:
    def test_linear_exact(self):
        grid = Grid(nx=101)
        d = spatial_derivative(3.0 * grid.points + 1.0, grid)
        assert np.max(np.abs(d - 3.0)) < 1e-10

    def test_cosine(self):
        grid = Grid(nx=201)
        d = spatial_derivative(np.cos(np.pi * grid.points), grid)
        exact = -np.pi * np.sin(np.pi * grid.points)
        assert np.max(np.abs(d - exact)) < 1e-3

    def test_constant_zero(self):
        grid = Grid(nx=51)
        assert not spatial_derivative(np.full(51, 2.5), grid).any()

    def test_too_few_points(self):
        grid = Grid(nx=3)
        with pytest.raises(ValueError, match="length"):
            spatial_derivative(np.ones(2), grid)


class TestLyapunovSample:
    def test_zero_state(self, reference_matrix):
        grid = Grid(nx=101)
        w = FunctionalWeights(k1=K1, k2=K2, rho1=0.1, rho2=0.5)
        s = lyapunov_sample(np.zeros((3, 101)), np.zeros((3, 101)), w,
                            reference_matrix, grid)
        assert s.V == 0.0 and s.V0 == 0.0 and s.E == 0.0

    def test_constant_deviation(self, reference_matrix):
        grid = Grid(nx=101)
        w = FunctionalWeights(k1=K1, k2=K2, rho1=0.1, rho2=0.5)
        c = np.array([1.0, -2.0, 0.5])
        ut = np.repeat(c[:, None], 101, axis=1)
        s = lyapunov_sample(ut, np.zeros_like(ut), w, reference_matrix, grid)
        quad = float(c @ reference_matrix @ c)
        assert s.E == pytest.approx(0.5 * K1 * quad, rel=1e-14)
        assert s.G1 == pytest.approx(0.5 * 0.1 * K2 * quad, rel=1e-14)
        assert s.G2 == 0.0
        assert s.V == pytest.approx(s.E + s.G1 + s.G2, rel=1e-15)

    def test_consistency_identity(self, reference_matrix):
        grid = Grid(nx=101)
        w = FunctionalWeights(k1=K1, k2=K2, rho1=0.1, rho2=0.5)
        rng = np.random.default_rng(4)
        ut = np.stack([smooth_field(rng, 101) for _ in range(3)])
        vt = np.stack([smooth_field(rng, 101) for _ in range(3)])
        s = lyapunov_sample(ut, vt, w, reference_matrix, grid)
        assert s.V == pytest.approx(s.E + s.G1 + s.G2, rel=1e-14)
        h1sq = s.h1_seminorm ** 2
        vsq = s.V0 - h1sq - s.boundary_err_sq
        assert vsq >= 0

    def test_sandwich_on_random_smooth_states(self, reference_matrix):
        grid = Grid(nx=201)
        ext = eig_extremes_sym(reference_matrix)
        rho1, rho2 = 0.1, 0.5
        tau1, tau2, _mu = certificate_constants_unperturbed(
            rho1, rho2, K1, K2, ext.lambda_min, ext.lambda_max, C0)
        w = FunctionalWeights(k1=K1, k2=K2, rho1=rho1, rho2=rho2)
        rng = np.random.default_rng(12)
        for _ in range(200):
            ut = np.stack([smooth_field(rng, 201) for _ in range(3)])
            vt = np.stack([smooth_field(rng, 201) for _ in range(3)])
            s = lyapunov_sample(ut, vt, w, reference_matrix, grid)
            assert tau1 * s.V0 <= s.V * (1 + 1e-8)
            assert s.V <= tau2 * s.V0 * (1 + 1e-8)

    def test_flush_below_floor(self, reference_matrix):
        grid = Grid(nx=101)
        w = FunctionalWeights(k1=K1, k2=K2, rho1=0.1, rho2=0.5)
        tiny = np.full((3, 101), 1e-160)
        s = lyapunov_sample(tiny, tiny, w, reference_matrix, grid)
        assert s.V == 0.0 and s.V0 == 0.0 and s.l2_error == 0.0


class TestOpenLoopEnergy:
    def test_zero_state(self):
        grid = Grid(nx=51)
        state = WaveState(0.0, np.zeros((2, 51)), np.zeros((2, 51)))
        assert open_loop_energy(state, grid, leader=True) == 0.0
        assert open_loop_energy(state, grid, leader=False) == 0.0

    def test_standing_wave_initial_energy(self):
        grid = Grid(nx=201)
        u = np.cos(np.pi * grid.points)[None, :]
        val = open_loop_energy_fields(u, np.zeros_like(u), grid)
        assert val == pytest.approx(math.pi ** 2 / 4.0, abs=1e-3)


class TestDecayFit:
    def test_exact_exponential(self):
        t = np.linspace(0.0, 10.0, 200)
        rate, r2 = decay_fit(t, np.exp(-0.5 * t))
        assert rate == pytest.approx(0.5, abs=1e-9)
        assert r2 == pytest.approx(1.0, abs=1e-9)

    def test_constant_series(self):
        t = np.linspace(0.0, 1.0, 50)
        rate, _ = decay_fit(t, np.ones(50))
        assert rate == pytest.approx(0.0, abs=1e-12)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            decay_fit([0.0, 1.0], [1.0, 0.0])

    def test_window_selection(self):
        t = np.linspace(0.0, 10.0, 500)
        v = np.exp(-2.0 * t)
        rate, _ = decay_fit(t, v, window=(2.0, 8.0))
        assert rate == pytest.approx(2.0, abs=1e-9)


def synthetic_series(times, V, V0=None, ptwise=None):
    ts = TimeSeries(grid=None, gains=None, certificate=None)
    V0 = V if V0 is None else V0
    ptwise = V if ptwise is None else ptwise
    for i, t in enumerate(times):
        ts.append(FunctionalSample(
            time=float(t), E=V[i], G1=0.0, G2=0.0, V=V[i], V0=V0[i],
            l2_error=math.sqrt(max(V0[i], 0.0)), h1_seminorm=0.0,
            ptwise_max_sq=ptwise[i], boundary_err_sq=0.0))
    return ts


class TestBoundChecks:
    def test_monotone_report(self):
        t = np.arange(5.0)
        ts = synthetic_series(t, np.array([4.0, 3.0, 2.0, 2.5, 1.0]))
        rep = monotone_decay_report(ts)
        assert not rep.ok
        assert rep.violations[0][0] == 3.0

    def test_pointwise_detector_catches_halved_delta(self, reference_matrix):
        ext = eig_extremes_sym(reference_matrix)
        cert = optimize_certificate("unperturbed", K1, K2, C0,
                                    ext.lambda_min, ext.lambda_max, resolution=50)
        t = np.linspace(0.0, 5.0, 40)
        v0 = 2.0
        envelope = cert.delta_factor * v0 * np.exp(-cert.alpha * t)
        ts = synthetic_series(t, np.full_like(t, v0), ptwise=envelope * 0.99)
        assert pointwise_bound_check(ts, cert, v_initial=v0).ok
        # halving delta (doubling the observed peak) must be detected at t=0
        ts_bad = synthetic_series(t, np.full_like(t, v0), ptwise=envelope * 2.01)
        rep = pointwise_bound_check(ts_bad, cert, v_initial=v0)
        assert not rep.ok
        assert rep.violations[0][0] == 0.0

    def test_sandwich_report_flags_outliers(self, reference_matrix):
        ext = eig_extremes_sym(reference_matrix)
        cert = optimize_certificate("unperturbed", K1, K2, C0,
                                    ext.lambda_min, ext.lambda_max, resolution=50)
        t = np.arange(3.0)
        good = synthetic_series(t, np.full(3, cert.tau1 * 2.0), V0=np.full(3, 2.0))
        assert sandwich_report(good, cert).ok
        bad = synthetic_series(t, np.full(3, cert.tau2 * 2.0 * 1.1),
                               V0=np.full(3, 2.0))
        assert not sandwich_report(bad, cert).ok

    def test_iss_check_reports_violations(self, reference_matrix):
        ext = eig_extremes_sym(reference_matrix)
        cert = optimize_certificate("perturbed", K1, K2, C0,
                                    ext.lambda_min, ext.lambda_max, resolution=50)
        t = np.linspace(0.0, 50.0, 30)
        ok_series = synthetic_series(t, 0.9 * np.exp(-cert.alpha * t))
        rep = iss_check(ok_series, cert)
        assert rep.ok and rep.verbatim.ok
        # a non-decaying series violates the conservative envelope once the
        # transient term has decayed through the tau2/tau1 headroom
        t_long = np.linspace(0.0, 3.0 * math.log(cert.tau2 / cert.tau1) / cert.alpha, 50)
        bad_series = synthetic_series(t_long, np.full_like(t_long, 7.0))
        rep_bad = iss_check(bad_series, cert)
        assert not rep_bad.ok
        assert rep_bad.conservative.violations


class TestClassicalInequalities:
    def test_poincare_constant_field(self):
        grid = Grid(nx=101)
        lhs, rhs, holds = poincare_check(np.full((2, 101), 3.0), grid, endpoint=1)
        assert holds
        assert lhs == pytest.approx(18.0, rel=1e-12)
        assert rhs == pytest.approx(36.0, rel=1e-12)

    def test_poincare_linear_field(self):
        grid = Grid(nx=201)
        lhs, rhs, holds = poincare_check(grid.points[None, :], grid, endpoint=1)
        assert holds
        assert lhs == pytest.approx(1.0 / 3.0, abs=1e-3)
        assert rhs == pytest.approx(4.0, abs=1e-3)

    def test_poincare_property(self):
        grid = Grid(nx=201)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            f = np.stack([smooth_field(rng, 201) for _ in range(2)])
            for endpoint in (0, 1):
                _, _, holds = poincare_check(f, grid, endpoint)
                assert holds

    def test_agmon_constant_equality(self):
        grid = Grid(nx=101)
        lhs, rhs, holds = agmon_check(np.full(101, -2.0), grid)
        assert holds
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_agmon_cosine(self):
        grid = Grid(nx=201)
        lhs, rhs, holds = agmon_check(np.cos(np.pi * grid.points), grid)
        assert holds
        assert lhs == pytest.approx(1.0, rel=1e-6)
        assert rhs == pytest.approx(1.0 + (1 / math.sqrt(2)) * (math.pi / math.sqrt(2)),
                                    rel=1e-3)

    def test_agmon_detects_peaked_counterexample(self):
        # the stated single-endpoint product form is not a theorem; the
        # checker must report the violation for a concentrated field
        grid = Grid(nx=201)
        x = grid.points
        f = np.sum(np.cos(np.outer(np.arange(0, 7), np.pi * x)), axis=0)
        lhs, rhs, holds = agmon_check(f, grid)
        assert not holds
        assert lhs > rhs
