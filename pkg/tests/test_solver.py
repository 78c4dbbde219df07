import logging
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mbeslope import grid as g
from mbeslope import model
from mbeslope.grid import Field, GridSpec
from mbeslope.model import ModelParams
from mbeslope.solver import (
    SolverConfig,
    SolverError,
    SolverState,
    march,
    spectral_solve,
    step,
)
from mbeslope.timekernels import TimeMesh

TWO_PI = 2.0 * math.pi


def make_params(M=32, delta=0.1):
    return ModelParams(delta=delta, grid=GridSpec(L=TWO_PI, M=M))


class TestSpectralSolve:
    def test_constant_mode(self):
        grid = GridSpec(L=TWO_PI, M=16)
        rhs = Field(grid, np.full((16, 16), 3.0))
        out = spectral_solve(rhs, b0=1.5, delta=0.1)
        assert_allclose(out.values, 2.0, rtol=1e-14)

    def test_sine_eigenfunction(self):
        grid = GridSpec(L=TWO_PI, M=32)
        v = Field.sample(grid, lambda X, Y: np.sin(X))
        lam = -(4.0 / grid.h**2) * math.sin(math.pi / 32) ** 2
        b0, delta = 2.0, 0.1
        out = spectral_solve(v, b0, delta)
        assert_allclose(out.values, v.values / (b0 + delta * lam**2), atol=1e-14)

    def test_apply_then_solve_roundtrip(self):
        grid = GridSpec(L=TWO_PI, M=32)
        rng = np.random.default_rng(0)
        rhs = Field(grid, rng.standard_normal((32, 32)))
        b0, delta = 4.0, 0.2
        u = spectral_solve(rhs, b0, delta)
        applied = b0 * u.values + delta * g.bilaplacian(u).values
        assert g.l2_array(applied - rhs.values, grid.h) < 1e-11 * g.norm_l2(rhs)

    def test_rejects_nonpositive_shift(self):
        grid = GridSpec(L=TWO_PI, M=16)
        with pytest.raises(ValueError):
            spectral_solve(Field.zeros(grid), b0=0.0, delta=0.1)


class TestStep:
    def test_local_third_order(self):
        # one step from exact two-level history; halving tau cuts the error
        # by about eight
        params = make_params(M=32)
        grid = params.grid
        t0 = 0.3
        errs = []
        for tau in (0.04, 0.02):
            state = SolverState(model.manufactured(t0, grid))
            state.commit(model.manufactured(t0 + tau, grid), tau)
            forcing = model.manufactured_forcing(t0 + 2 * tau, grid, params, "discrete")
            u, _ = step(state, SolverConfig(mode="discrete"), params, tau, forcing)
            exact = model.manufactured(t0 + 2 * tau, grid)
            errs.append(g.l2_array(u.values - exact.values, grid.h))
        ratio = errs[0] / errs[1]
        assert 6.0 < ratio < 10.5

    def test_fixed_point_converges_immediately(self):
        # constant profiles solve the step equation exactly, so the sweep
        # stops within two iterations
        params = make_params(M=16)
        c = Field(params.grid, np.full((16, 16), 0.7))
        state = SolverState(c)
        state.commit(c.copy(), 0.05)
        u, stats = step(state, SolverConfig(), params, 0.05)
        assert stats.iterations <= 2
        assert stats.increment <= 1e-12
        assert_allclose(u.values, 0.7, rtol=1e-13)

    def test_residual_within_bound(self):
        params = make_params(M=32)
        state = SolverState(model.coarsening_initial(params.grid))
        u, stats = step(state, SolverConfig(), params, 1e-3)
        assert stats.residual <= stats.residual_bound

    def test_nonconvergence_error_carries_increment(self):
        params = make_params(M=16)
        state = SolverState(model.coarsening_initial(params.grid))
        with pytest.raises(SolverError) as err:
            step(state, SolverConfig(max_picard=1), params, 1e-2)
        assert err.value.level == 1
        assert err.value.last_increment > 0.0

    def test_overflow_detected(self):
        params = make_params(M=8)
        state = SolverState(Field(params.grid, np.full((8, 8), 1e160)))
        state.u_prev[0, 0] = -1e160
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(SolverError):
                step(state, SolverConfig(), params, 1e-3)

    def test_rejects_bad_tau(self):
        params = make_params(M=8)
        state = SolverState(Field.zeros(params.grid))
        with pytest.raises(ValueError):
            step(state, SolverConfig(), params, -0.1)

    def test_relaxed_sweep_still_converges(self):
        params = make_params(M=16)
        state = SolverState(model.coarsening_initial(params.grid))
        u_full, _ = step(state, SolverConfig(), params, 1e-3)
        u_damped, stats = step(state, SolverConfig(relaxation=0.7), params, 1e-3)
        assert g.l2_array(u_full.values - u_damped.values, params.grid.h) < 1e-10
        assert stats.iterations >= 1

    def test_relative_increment_metric(self):
        params = make_params(M=16)
        state = SolverState(model.coarsening_initial(params.grid))
        cfg = SolverConfig(picard_tol=1e-10, increment_metric="relative")
        u, stats = step(state, cfg, params, 1e-3)
        assert stats.iterations >= 1


class TestMarch:
    def test_zero_equilibrium(self):
        params = make_params(M=16)
        mesh = TimeMesh.uniform(0.1, 20)
        result = march(Field.zeros(params.grid), mesh, SolverConfig(), params)
        assert np.all(result.final.values == 0.0)
        energies = [rec.E for rec in result.trace]
        assert_allclose(energies, params.grid.L**2 / 4.0, rtol=1e-14)

    def test_trace_layout(self):
        params = make_params(M=16)
        mesh = TimeMesh.uniform(0.05, 10)
        u0 = model.initial_data(model.coarsening_initial(params.grid), params, mesh.tau(1))
        result = march(u0, mesh, SolverConfig(), params)
        assert len(result.trace) == 11
        assert result.trace[0].step == 0 and result.trace[0].tau == 0.0
        assert result.trace[0].E_mod == result.trace[0].E
        # final level has no next ratio, so modified and raw energies agree
        assert result.trace[-1].E_mod == result.trace[-1].E
        assert result.trace[-1].t == pytest.approx(0.05, rel=1e-12)

    def test_energy_dissipation_small_run(self):
        params = make_params(M=64)
        mesh = TimeMesh.uniform(0.2, 200)
        u0 = model.initial_data(model.coarsening_initial(params.grid), params, mesh.tau(1))
        result = march(u0, mesh, SolverConfig(), params)
        e_mod = np.array([rec.E_mod for rec in result.trace])
        assert np.all(np.diff(e_mod) <= 1e-10)
        e_raw = np.array([rec.E for rec in result.trace])
        assert np.all(e_raw <= e_raw[0] + 1e-10)
        assert result.dissipation_violations == 0

    def test_solution_bounds(self):
        params = make_params(M=32)
        mesh = TimeMesh.uniform(0.5, 250)
        u0 = model.initial_data(model.coarsening_initial(params.grid), params, mesh.tau(1))
        result = march(u0, mesh, SolverConfig(), params)
        c0 = model.solution_bound(result.E0, params)
        assert result.max_grad_l2 <= c0
        assert result.max_grad_l4 <= c0
        assert result.max_lap_l2 <= c0

    def test_residual_bound_every_step(self):
        params = make_params(M=32)
        mesh = TimeMesh.graded(0.5, 40, 2.0)
        u0 = model.initial_data(model.coarsening_initial(params.grid), params, mesh.tau(1))
        result = march(u0, mesh, SolverConfig(), params)
        assert np.all(result.residuals[1:] <= result.residual_bounds[1:])

    def test_deterministic(self):
        params = make_params(M=32)
        mesh = TimeMesh.graded(0.3, 20, 2.0)
        u0 = model.initial_data(model.coarsening_initial(params.grid), params, mesh.tau(1))
        r1 = march(u0, mesh, SolverConfig(), params)
        r2 = march(u0.copy(), mesh, SolverConfig(), params)
        assert np.array_equal(r1.final.values, r2.final.values)
        for a, b in zip(r1.trace, r2.trace):
            assert a == b

    def test_restriction_warnings_counted(self, caplog):
        # a tiny corner-width coefficient puts every step past both bounds;
        # the march warns and keeps going
        params = make_params(M=16, delta=1e-5)
        mesh = TimeMesh.uniform(0.05, 5)
        u0 = Field(params.grid, 1e-3 * np.sin(GridSpec(L=TWO_PI, M=16).meshgrid()[0]))
        with caplog.at_level(logging.WARNING, logger="mbeslope.solver"):
            result = march(u0, mesh, SolverConfig(), params)
        assert result.solvability_violations == 5
        assert result.dissipation_violations == 5
        assert any("unique-solvability" in rec.message for rec in caplog.records)

    def test_snapshots(self):
        params = make_params(M=16)
        mesh = TimeMesh.uniform(0.1, 10)
        u0 = Field.zeros(params.grid)
        result = march(u0, mesh, SolverConfig(), params,
                       snapshot_times=(0.0, 0.05, 0.1))
        assert set(result.snapshots) == {0.0, 0.05, 0.1}
        t_real, field = result.snapshots[0.05]
        assert t_real == pytest.approx(0.05, abs=1e-12)
        assert field.grid == params.grid

    def test_rejects_inadmissible_mesh(self):
        params = make_params(M=16)
        mesh = TimeMesh.from_steps([0.01, 0.06])
        with pytest.raises(ValueError):
            march(Field.zeros(params.grid), mesh, SolverConfig(), params)

    def test_rejects_grid_mismatch(self):
        params = make_params(M=16)
        u0 = Field.zeros(GridSpec(L=TWO_PI, M=32))
        with pytest.raises(ValueError):
            march(u0, TimeMesh.uniform(0.1, 2), SolverConfig(), params)

    def test_forced_run_tracks_exact_solution(self):
        params = make_params(M=32)
        provider = model.forcing_provider(params, "discrete")
        mesh = TimeMesh.graded(1.0, 40, 2.0)
        phi0 = model.manufactured(0.0, params.grid)
        u0 = model.initial_data(phi0, params, mesh.tau(1), forcing_at_0=provider(0.0))
        result = march(u0, mesh, SolverConfig(mode="discrete"), params,
                       forcing_provider=provider)
        exact = model.manufactured(1.0, params.grid)
        err = g.l2_array(result.final.values - exact.values, params.grid.h)
        assert err < 1e-3
