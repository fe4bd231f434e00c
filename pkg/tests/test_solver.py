import math

import numpy as np
import pytest

from dscatter.errors import ConfigurationError, DivergenceError, NumericalError, PreconditionError
from dscatter.norms import WeightedNormSpec
from dscatter.solver import (
    LinearFlow,
    SolverConfig,
    _right_cumulative,
    duhamel_backward,
    duhamel_hat,
    extend_forward,
    midpoint_interpolate,
    picard_run,
    picard_solve,
    refine_log_grid,
    scan_T,
    tail_bound,
    uniqueness_probe,
    verify_scattering,
)
from dscatter.spectral import Grid, SpectralField, Trajectory
from dscatter.systems import free_system, quadratic_system, scalar_power

GRID = Grid(1, 512, 128.0)


def gaussian(grid, amplitude, sigma=4.0, components=1):
    r2 = grid.radius**2
    return SpectralField(grid, np.repeat((amplitude * np.exp(-r2 / (2 * sigma**2)))[np.newaxis], components, 0))


@pytest.fixture(scope="module")
def small_cubic():
    cfg = SolverConfig(T=1, T_max=20, n_time=65, tol=1e-10)
    spec = scalar_power(3.0)
    u_plus = gaussian(GRID, 0.03)
    return spec, u_plus, cfg, picard_run(spec, u_plus, cfg)


class TestQuadrature:
    def test_cubic_exact_on_uniform_grid(self):
        tau = np.linspace(0, 2, 11)
        y = tau**3 - 2 * tau + 1
        prim = lambda s: s**4 / 4 - s**2 + s
        out = _right_cumulative(tau, y)
        assert np.max(np.abs(out - (prim(tau[-1]) - prim(tau)))) < 1e-13

    @pytest.mark.parametrize("uniform", [True, False])
    def test_convergence_order(self, uniform):
        errs = []
        for n in (17, 33, 65):
            tau = np.linspace(0, 1, n) if uniform else np.linspace(0, 1, n) ** 1.3
            out = _right_cumulative(tau, np.exp(tau))
            errs.append(np.max(np.abs(out - (math.e - np.exp(tau)))))
        order = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
        assert min(order) > (3.7 if uniform else 2.7)

    def test_complex_nonuniform(self):
        tau = np.linspace(0, 1, 33) ** 1.2
        y = np.exp(1j * tau)
        out = _right_cumulative(tau, y)
        assert np.max(np.abs(out - (np.exp(1j) - np.exp(1j * tau)) / 1j)) < 1e-6

    def test_needs_four_nodes(self):
        with pytest.raises(ConfigurationError):
            _right_cumulative(np.arange(3.0), np.ones(3))

    def test_midpoint_interpolation_exact_on_cubics(self):
        x = np.arange(8.0)
        vals = np.stack([x**3, 2 * x**2 - x], axis=1)
        mid = x[:-1] + 0.5
        out = midpoint_interpolate(vals)
        assert np.allclose(out[:, 0], mid**3, atol=1e-12)
        assert np.allclose(out[:, 1], 2 * mid**2 - mid, atol=1e-12)

    def test_refine_log_grid(self):
        t = np.geomspace(1, 16, 5)
        fine = refine_log_grid(t)
        assert fine.size == 9 and np.allclose(fine[1::2], np.sqrt(t[1:] * t[:-1]))


class TestDuhamel:
    def test_free_source_oracle(self):
        # F(s) = U(s) a gives i (T_max - t) U(t) a
        grid = Grid(1, 64, 20.0)
        flow = LinearFlow.nls(grid, [1.0])
        a = grid.fft(np.exp(-grid.coords[0] ** 2))[np.newaxis]
        t = np.geomspace(1, 10, 129)
        out = duhamel_hat(t, flow.evolve(a, t), flow)
        exact = 1j * (10 - t)[:, None, None] * flow.evolve(a, t)
        assert np.max(np.abs(out - exact)) < 1e-8 * np.max(np.abs(exact))

    def test_error_estimate_and_backward_wrapper(self):
        grid = Grid(1, 64, 20.0)
        t = np.geomspace(1, 10, 65)
        flow = LinearFlow.nls(grid, [1.0])
        a = grid.fft(np.exp(-grid.coords[0] ** 2))[np.newaxis]
        data = grid.ifft(flow.evolve(a, t))
        traj, err = duhamel_backward(Trajectory(grid, t, data), 1.0)
        assert err < 1e-4
        assert np.all(traj.data[-1] == 0)
        sub, _ = duhamel_backward(Trajectory(grid, t, data), 1.0, t_out=t[[3, 10]])
        assert np.allclose(sub.data, traj.data[[3, 10]])
        with pytest.raises(ConfigurationError):
            duhamel_backward(Trajectory(grid, t, data), 1.0, t_out=[1.5])

    def test_rejects_nonfinite_source(self):
        grid = Grid(1, 16, 8.0)
        flow = LinearFlow.nls(grid, [1.0])
        F = np.full((5, 1, 16), np.nan, dtype=complex)
        with pytest.raises(NumericalError):
            duhamel_hat(np.geomspace(1, 2, 5), F, flow)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"T": 0.5}, {"T": 10, "T_max": 5}, {"tol": 0}, {"n_time": 4}, {"max_iter": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            SolverConfig(**kw)

    def test_with_T_keeps_ratio(self):
        cfg = SolverConfig(T=2, T_max=50).with_T(8)
        assert (cfg.T, cfg.T_max) == (8, 200)


def test_free_system_has_zero_correction():
    cfg = SolverConfig(T=1, T_max=20, n_time=33, tol=1e-12)
    u_plus = gaussian(GRID, 1.0, components=2)
    run = picard_run(free_system(2), u_plus, cfg, check_precondition=False)
    assert np.all(run.correction_hat == 0)
    assert run.report.converged and run.report.iterations == 1
    assert tail_bound(free_system(2), run) == (0.0, math.inf)
    w = WeightedNormSpec(2, 2, 0.1, 1.0)
    rep = verify_scattering(free_system(2), run.trajectory(), u_plus, w)
    assert all(rep.passes.values()) and np.max(rep.differences) < 1e-13


def test_small_cubic_converges(small_cubic):
    spec, u_plus, cfg, run = small_cubic
    rep = run.report
    assert rep.converged
    assert rep.residual <= 10 * cfg.tol
    assert rep.geometric_decay()
    assert rep.smallness < cfg.eta_target
    assert "epsilon_outside_window" not in rep.flags
    # correction is much smaller than the free part
    assert rep.solution_norm < 0.01 * rep.smallness


def test_small_cubic_is_unique(small_cubic):
    spec, u_plus, cfg, run = small_cubic
    probe = uniqueness_probe(spec, u_plus, cfg, run, seed=5)
    assert probe["agrees"]


def test_small_cubic_scatters(small_cubic):
    spec, u_plus, cfg, run = small_cubic
    traj = run.trajectory()
    rep = verify_scattering(spec, traj, u_plus, WeightedNormSpec(4, 4, run.report.epsilon, cfg.T, cfg.time_grid()),
                            tail=run.report.tail_bound)
    assert rep.monotone
    assert rep.differences[0] > rep.differences[-1]


def test_oversized_tail_enters_reduction_not_fit(small_cubic):
    spec, u_plus, cfg, run = small_cubic
    w = WeightedNormSpec(4, 4, run.report.epsilon, cfg.T, cfg.time_grid())
    bare = verify_scattering(spec, run.trajectory(), u_plus, w, tail=0.0)
    big = verify_scattering(spec, run.trajectory(), u_plus, w, tail=10 * bare.differences[0])
    assert not big.tail_in_fit and bare.tail_in_fit
    assert big.decay_exponent == bare.decay_exponent
    assert big.reduction < 0.1


def test_picard_solve_returns_trajectory(small_cubic):
    spec, u_plus, cfg, _ = small_cubic
    traj, rep = picard_solve(spec, u_plus, cfg)
    assert traj.times[0] == cfg.T and traj.data.shape == (cfg.n_time, 1, GRID.n)


def test_precondition_error():
    cfg = SolverConfig(T=1, T_max=20, n_time=33)
    with pytest.raises(PreconditionError):
        picard_run(scalar_power(3.0), gaussian(GRID, 5.0), cfg)


def test_large_data_diverges():
    cfg = SolverConfig(T=1, T_max=20, n_time=33, max_iter=60)
    with pytest.raises((DivergenceError, NumericalError)):
        picard_run(scalar_power(3.0), gaussian(GRID, 5.0), cfg, check_precondition=False)


def test_component_mismatch():
    with pytest.raises(ConfigurationError):
        picard_run(quadratic_system(), gaussian(GRID, 0.01), SolverConfig(T=1, T_max=20, n_time=33))


def test_scan_T_climbs_ladder():
    # the smallness norm of this datum dips by a few percent from T=1 to T=2
    grid = Grid(1, 2048, 512.0)
    cfg = SolverConfig(T=1, T_max=20, n_time=33)
    trial, value = scan_T(scalar_power(3.0), gaussian(grid, 0.215, sigma=0.5), cfg)
    assert trial.T == 2 and value <= cfg.eta_target
    assert trial.T_max / trial.T == pytest.approx(20)
    with pytest.raises(PreconditionError):
        scan_T(scalar_power(3.0), gaussian(GRID, 50.0), cfg, cap=4)


class TestForward:
    def test_step_limit(self):
        with pytest.raises(ConfigurationError):
            extend_forward(scalar_power(3.0), gaussian(GRID, 0.1), (0, 1), dt=1.0)

    def test_strang_is_second_order(self):
        grid = Grid(1, 64, 32.0)
        spec = scalar_power(2.0)
        u0 = gaussian(grid, 1.0, sigma=2.0)
        end = lambda dt: extend_forward(spec, u0, (0, 1), dt, max_phase=2.0).data[-1]
        ref = end(1 / 1024)
        e1 = np.max(np.abs(end(1 / 32) - ref))
        e2 = np.max(np.abs(end(1 / 64) - ref))
        assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.2)

    def test_backward_then_forward_returns(self):
        grid = Grid(1, 128, 32.0)
        spec = quadratic_system()
        u0 = gaussian(grid, 0.5, sigma=2.0, components=2)
        back = extend_forward(spec, u0, (2, 1), 0.004)
        assert back.times[0] == 1 and back.times[-1] == 2
        fwd = extend_forward(spec, back.field(0), (1, 2), 0.004)
        assert np.max(np.abs(fwd.data[-1] - u0.values())) < 1e-9

    def test_forward_matches_backward_construction(self, small_cubic):
        spec, u_plus, cfg, run = small_cubic
        traj = run.trajectory()
        j = 16
        fwd = extend_forward(spec, traj.field(0), (traj.times[0], traj.times[j]), 0.004)
        gap = np.max(np.abs(fwd.data[-1] - traj.data[j])) / np.max(np.abs(traj.data[j]))
        assert gap < 1e-6
