import numpy as np
import pytest

from sropinf.errors import BlowUpError
from sropinf.models import (
    FomConfig,
    QuadraticPde,
    advection_diffusion,
    evaluate_f,
    kse,
    read_simulation,
    simulate,
    step,
    write_simulation,
)
from sropinf.pipeline import KSE_INITIAL_CONDITION
from sropinf.spectral_field import Field, inner_product, norm, shift

from conftest import random_field

NU = 4.0 / 87.0


def modes(grid, *terms):
    return Field.from_modes(grid, terms)


@pytest.fixture
def ks(grid):
    return kse(NU, grid)


class TestKse:
    def test_linear_symbol(self, ks, grid):
        c = modes(grid, (1, "cos", 1.0))
        assert ks.linear(c).allclose(modes(grid, (1, "cos", 83 / 87)), atol=1e-15)

    def test_bilinear_closed_form(self, ks, grid):
        c = modes(grid, (1, "cos", 1.0))
        assert ks.bilinear(c, c).allclose(modes(grid, (2, "sin", 0.5)), atol=1e-15)

    def test_f_closed_form(self, ks, grid):
        c = modes(grid, (1, "cos", 1.0))
        expect = modes(grid, (1, "cos", 83 / 87), (2, "sin", 0.5))
        assert evaluate_f(ks, c).allclose(expect, atol=1e-15)

    def test_f_zero(self, ks, grid):
        assert norm(evaluate_f(ks, Field.zeros(grid))) == 0.0

    def test_bad_nu(self):
        with pytest.raises(ValueError):
            kse(0.0)

    def test_bilinear_symmetric(self, ks, grid, rng):
        for _ in range(20):
            u, v = random_field(rng, grid), random_field(rng, grid)
            assert ks.bilinear(u, v).allclose(ks.bilinear(v, u), atol=1e-12)

    def test_energy_neutral(self, ks, grid, rng):
        for _ in range(100):
            u = random_field(rng, grid, decay=0.1)
            assert abs(inner_product(ks.bilinear(u, u), u)) <= 1e-12 * norm(u) ** 3

    def test_equivariance(self, ks, grid, rng):
        for _ in range(100):
            u = random_field(rng, grid)
            th = rng.uniform(-10, 10)
            lhs = evaluate_f(ks, shift(u, th))
            rhs = shift(evaluate_f(ks, u), th)
            assert norm(lhs - rhs) <= 1e-10 * norm(rhs)


class TestAdvectionDiffusion:
    def test_bilinear_zero(self, grid, rng):
        ad = advection_diffusion(1.0, 0.1, grid)
        u = random_field(rng, grid)
        assert norm(ad.bilinear(u, u)) == 0.0

    def test_symbol(self, grid):
        ad = advection_diffusion(2.0, 0.5, grid)
        c = modes(grid, (1, "cos", 1.0))
        # -2 u_x + 0.5 u_xx = 2 sin x - 0.5 cos x
        assert evaluate_f(ad, c).allclose(modes(grid, (1, "sin", 2.0), (1, "cos", -0.5)), atol=1e-15)

    def test_negative_kappa(self):
        with pytest.raises(ValueError):
            advection_diffusion(1.0, -0.1)

    @pytest.mark.parametrize("scheme", ["ars343", "cnrk3"])
    def test_stepper_matches_exact_solution(self, grid, scheme):
        a, kappa = 1.0, 0.1
        ad = advection_diffusion(a, kappa, grid)
        u = modes(grid, (1, "cos", 1.0))
        sim = simulate(ad, u, FomConfig(dt=1e-3, t_final=1.0, record_interval=1.0, scheme=scheme), velocities=None)
        exact = shift(modes(grid, (1, "cos", np.exp(-kappa))), a * 1.0)
        assert np.max(np.abs(sim.snapshots[-1].coeffs - exact.coeffs)) <= 1e-6


class TestStep:
    def test_zero_fixed_point(self, ks, grid):
        assert norm(step(ks, Field.zeros(grid), 1e-3)) == 0.0

    def test_deterministic(self, ks, grid, rng):
        u = random_field(rng, grid)
        assert np.array_equal(step(ks, u, 1e-3).coeffs, step(ks, u, 1e-3).coeffs)

    @pytest.mark.parametrize("scheme", ["ars343", "cnrk3"])
    def test_equivariance(self, ks, grid, rng, scheme):
        for _ in range(20):
            u = random_field(rng, grid)
            th = rng.uniform(-5, 5)
            lhs = step(ks, shift(u, th), 1e-3, scheme)
            rhs = shift(step(ks, u, 1e-3, scheme), th)
            assert norm(lhs - rhs) <= 1e-10 * norm(rhs)

    def test_bad_dt(self, ks, grid):
        with pytest.raises(ValueError):
            step(ks, Field.zeros(grid), 0.0)

    def test_unknown_scheme(self, ks, grid):
        with pytest.raises(ValueError, match="unknown time stepper"):
            step(ks, Field.zeros(grid), 1e-3, "euler")

    def test_blow_up_detected(self, grid):
        # anti-diffusion with an explicit constant forcing of NaN
        bad = QuadraticPde(grid, np.full(grid.n_modes, np.nan + 0j), np.zeros(grid.n_modes, complex))
        with pytest.raises(BlowUpError):
            step(bad, Field.zeros(grid), 1e-3)

    def _endpoint(self, ks, u0, dt, scheme):
        cfg = FomConfig(dt=dt, t_final=1.0, record_interval=0.01, scheme=scheme)
        return simulate(ks, u0, cfg, velocities=None).snapshots[-1]

    def test_self_convergence_order(self, ks, grid):
        u0 = modes(grid, *KSE_INITIAL_CONDITION)
        sols = [self._endpoint(ks, u0, dt, "ars343") for dt in (2e-3, 1e-3, 5e-4)]
        e1, e2 = norm(sols[0] - sols[1]), norm(sols[1] - sols[2])
        assert np.log2(e1 / e2) >= 2.7

    def test_cnrk3_is_second_order(self, ks, grid):
        u0 = modes(grid, *KSE_INITIAL_CONDITION)
        sols = [self._endpoint(ks, u0, dt, "cnrk3") for dt in (2e-3, 1e-3, 5e-4)]
        order = np.log2(norm(sols[0] - sols[1]) / norm(sols[1] - sols[2]))
        assert 1.8 <= order <= 2.2

    def test_self_convergence_magnitude(self, ks, grid):
        # Δt = 1e-3 and Δt = 5e-4 solutions at t = 1 from the drifting-wave initial condition
        u0 = modes(grid, *KSE_INITIAL_CONDITION)
        diff = norm(self._endpoint(ks, u0, 1e-3, "ars343") - self._endpoint(ks, u0, 5e-4, "ars343"))
        assert diff <= 1e-6


class TestFomConfig:
    def test_record_multiple(self):
        with pytest.raises(ValueError, match="integer multiple"):
            FomConfig(dt=1e-3, record_interval=0.0015)

    def test_horizon_multiple(self):
        with pytest.raises(ValueError):
            FomConfig(dt=1e-3, t_final=1.005, record_interval=0.01)

    def test_counts(self):
        cfg = FomConfig(dt=1e-3, t_final=130.0, record_interval=0.01)
        assert cfg.steps_per_record == 10 and cfg.n_records == 13000


class TestSimulate:
    def test_t_final_zero(self, ks, grid, rng):
        u0 = random_field(rng, grid)
        sim = simulate(ks, u0, FomConfig(t_final=0.0))
        assert len(sim.times) == 1
        assert np.array_equal(sim.snapshots[0].coeffs, u0.coeffs)

    def test_window_count(self, ks, grid):
        u0 = modes(grid, *KSE_INITIAL_CONDITION)
        sim = simulate(ks, u0, FomConfig(t_final=0.5))
        w = sim.window(0.2, 0.5)
        assert len(w.times) == 31
        assert w.times[0] == pytest.approx(0.2) and w.times[-1] == pytest.approx(0.5)

    def test_velocities_exact(self, ks, grid):
        u0 = modes(grid, *KSE_INITIAL_CONDITION)
        sim = simulate(ks, u0, FomConfig(t_final=0.1))
        assert sim.velocities[3].allclose(evaluate_f(ks, sim.snapshots[3]), atol=0)

    def test_velocities_finite_difference(self, ks, grid):
        u0 = modes(grid, *KSE_INITIAL_CONDITION)
        cfg = FomConfig(dt=1e-4, t_final=0.01, record_interval=1e-3)
        sim = simulate(ks, u0, cfg, velocities="finite-difference")
        exact = evaluate_f(ks, sim.snapshots[0])
        assert len(sim.velocities.coeffs) == len(sim.times)
        assert norm(sim.velocities[0] - exact) <= 0.05 * norm(exact)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blow_up_propagates(self, ks, grid):
        # the explicit quadratic term overflows for an absurd amplitude
        u0 = Field.from_modes(grid, [(1, "cos", 1e200)])
        with pytest.raises(BlowUpError) as info:
            simulate(ks, u0, FomConfig(dt=1e-3, t_final=1.0))
        assert info.value.step_index is not None

    def test_files_round_trip(self, ks, grid, tmp_path):
        u0 = modes(grid, *KSE_INITIAL_CONDITION)
        sim = simulate(ks, u0, FomConfig(t_final=0.05))
        d = write_simulation(sim, tmp_path / "run", {"initial_condition": "test"})
        back = read_simulation(d, grid)
        assert np.allclose(back.snapshots.coeffs, sim.snapshots.coeffs, atol=1e-13)
        assert np.allclose(back.velocities.coeffs, sim.velocities.coeffs, atol=1e-11)
        assert np.array_equal(back.times, sim.times)
        assert back.meta["params"]["nu"] == pytest.approx(NU)
        assert back.meta["initial_condition"] == "test"

    @pytest.mark.slow
    def test_training_window_size(self, kse_run):
        _, sim = kse_run
        assert len(sim.window(120.0, 130.0).times) == 1001

    @pytest.mark.slow
    def test_beating_wave_travels_upstream(self, kse_train_window):
        # the aligned profile stays bounded while the shift drifts steadily
        _, _, win = kse_train_window
        assert abs(win.c[-1] - win.c[0]) > 0.3
        assert np.all(np.abs(np.diff(win.c)) < 0.05)
