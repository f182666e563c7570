import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from zakai_mimc import spde
from zakai_mimc.errors import DomainMisaligned, InvalidLevel
from zakai_mimc.spde import (
    DensityState,
    ModelParams,
    Scheme,
    TridiagonalOperator,
    build_grid,
    discrete_mass,
    evolve,
    exact_density,
    exact_loss_sample,
    expected_loss,
    initial_state,
    loss_rectangle,
    loss_trapezoidal,
    rhs_bands,
    step_scheme_a,
    step_scheme_b,
)


class TestBuildGrid:
    def test_baseline_grid(self, params):
        g = build_grid(params, -10.0, 20.0, 1.0, 0.25, 0, 0)
        assert g.n_cells == 30
        assert g.j0 == 15
        assert g.h == 1.0 and g.k == 0.25
        assert g.n_steps == 20
        assert g.i_zero == 10

    def test_spatial_refinement(self, params):
        g = build_grid(params, -10.0, 20.0, 1.0, 0.25, 3, 0)
        assert g.h == 0.125
        assert g.j0 == 120

    def test_time_refinement(self, params):
        g = build_grid(params, -10.0, 20.0, 1.0, 0.25, 0, 2)
        assert g.n_steps == 320

    def test_refinement_telescopes(self, params):
        g = build_grid(params, -10.0, 20.0, 1.0, 0.25, 2, 1)
        finer_space = build_grid(params, -10.0, 20.0, 1.0, 0.25, 3, 1)
        finer_time = build_grid(params, -10.0, 20.0, 1.0, 0.25, 2, 2)
        assert finer_space.h == g.h / 2
        assert finer_time.k == g.k / 4

    def test_rejects_misaligned_domain(self, params):
        with pytest.raises(DomainMisaligned):
            build_grid(params, -10.0, 20.3, 1.0, 0.25, 0, 0)

    def test_rejects_x0_off_grid(self):
        p = ModelParams(mu=0.0, rho=0.2, T=5.0, x0=5.5)
        with pytest.raises(DomainMisaligned):
            build_grid(p, -10.0, 20.0, 1.0, 0.25, 0, 0)

    def test_rejects_non_integer_steps(self):
        p = ModelParams(mu=0.0, rho=0.2, T=5.0, x0=5.0)
        with pytest.raises(DomainMisaligned):
            build_grid(p, -10.0, 20.0, 1.0, 0.3, 0, 0)

    def test_rejects_negative_level(self, params):
        with pytest.raises(InvalidLevel):
            build_grid(params, -10.0, 20.0, 1.0, 0.25, -1, 0)

    def test_rejects_drift_breaking_dominance(self):
        p = ModelParams(mu=1.5, rho=0.2, T=5.0, x0=5.0)
        with pytest.raises(DomainMisaligned):
            build_grid(p, -10.0, 20.0, 1.0, 0.25, 0, 0)


class TestInitialState:
    def test_unit_mesh(self, params, base):
        g = base.grid(params, 0, 0)
        s = initial_state(g)
        assert s.values[g.j0 - 1] == 1.0
        assert np.count_nonzero(s.values) == 1

    def test_half_mesh(self, params, base):
        g = base.grid(params, 1, 0)
        s = initial_state(g)
        assert s.values[g.j0 - 1] == 2.0

    @pytest.mark.parametrize("l1,l2", [(0, 0), (1, 0), (0, 1), (2, 2), (3, 1)])
    def test_mass_exactly_one(self, params, base, l1, l2):
        g = base.grid(params, l1, l2)
        assert discrete_mass(initial_state(g), g) == 1.0


class TestTridiagonal:
    def test_band_values(self, params, base):
        g = base.grid(params, 1, 1)
        op = TridiagonalOperator.from_grid(g, params)
        h, k = g.h, g.k
        assert op.sub == -params.mu * k / (2 * h) - k / (2 * h * h)
        assert op.diag == 1.0 + k / (h * h)
        assert op.sup == params.mu * k / (2 * h) - k / (2 * h * h)
        assert op.diagonally_dominant

    @pytest.mark.parametrize("n", [5, 59, 257, 1000])
    def test_solve_matches_dense_oracle(self, params, base, rng, n):
        g = base.grid(params, 1, 1)
        op = TridiagonalOperator.from_grid(g, params)
        rhs = rng.standard_normal(n)
        dense = np.linalg.solve(op.to_dense(n), rhs)
        fast = op.solve(rhs)
        assert np.max(np.abs(dense - fast)) <= 1e-12


def _dense_step_matrices(grid, params, z, scheme):
    """Dense interior LHS/RHS built from the production band coefficients."""
    n = grid.interior_count
    lhs = TridiagonalOperator.from_grid(grid, params).to_dense(n)
    rhs = np.zeros((n, n))
    for off, coef in rhs_bands(grid, params, z, scheme).items():
        rhs += np.diag(np.full(n - abs(off), coef), off)
    return lhs, rhs


class TestSteps:
    def test_rho_zero_is_deterministic_advection_diffusion(self, base):
        p = ModelParams(mu=0.081, rho=0.0, T=5.0, x0=5.0)
        g = base.grid(p, 1, 1)
        s0 = initial_state(g)
        s1 = step_scheme_a(s0, g, p, z=0.0)
        s2 = step_scheme_a(s0, g, p, z=1.7)
        assert np.array_equal(s1.values, s2.values)
        assert discrete_mass(s1, g) <= discrete_mass(s0, g) + 1e-14

    def test_schemes_agree_when_z_squared_one(self, params, base):
        g = base.grid(params, 1, 1)
        s0 = initial_state(g)
        for z in (1.0, -1.0):
            a = step_scheme_a(s0, g, params, z)
            b = step_scheme_b(s0, g, params, z)
            assert np.array_equal(a.values, b.values)

    def test_schemes_differ_otherwise(self, params, base):
        g = base.grid(params, 1, 1)
        s0 = initial_state(g)
        a = step_scheme_a(s0, g, params, 0.3)
        b = step_scheme_b(s0, g, params, 0.3)
        assert not np.allclose(a.values, b.values)

    @pytest.mark.parametrize("scheme", [Scheme.A, Scheme.B])
    def test_step_matches_dense_solve(self, params, scheme):
        # 5-interior-node system solved independently with a dense solver
        g = build_grid(params, 2.0, 8.0, 1.0, 0.25, 0, 0)
        assert g.interior_count == 5
        s0 = initial_state(g)
        z = 0.83
        stepper = step_scheme_a if scheme is Scheme.A else step_scheme_b
        got = stepper(s0, g, params, z)
        lhs, rhs = _dense_step_matrices(g, params, z, scheme)
        want = np.linalg.solve(lhs, rhs @ s0.values)
        assert np.max(np.abs(got.values - want)) <= 1e-13

    @pytest.mark.parametrize("scheme", [Scheme.A, Scheme.B])
    @pytest.mark.parametrize("mode", [1, 3, 7])
    def test_fourier_amplification_matches_symbol(self, params, scheme, mode):
        # periodic wrap of the production bands applied to a plane wave
        from zakai_mimc.analysis import one_step_factor

        g = build_grid(params, -10.0, 20.0, 1.0, 0.25, 1, 1)
        n = 60
        gamma = 2 * math.pi * mode / (n * g.h)
        z = -0.62

        def circulant(bands):
            m = np.zeros((n, n))
            for off, coef in bands.items():
                for i in range(n):
                    m[i, (i + off) % n] += coef
            return m

        op = TridiagonalOperator.from_grid(g, params)
        lhs = circulant({-1: op.sub, 0: op.diag, +1: op.sup})
        rhs = circulant(rhs_bands(g, params, z, scheme))
        wave = np.exp(1j * gamma * g.h * np.arange(n))
        stepped = np.linalg.solve(lhs, rhs @ wave)
        ratio = stepped[1] / wave[1]
        want = one_step_factor(
            gamma, g.h, g.k, params.rho, z, scheme=scheme.value, mu=params.mu
        )
        assert abs(ratio - want) <= 1e-10


class TestEvolve:
    def test_reproducible(self, params, base, rng):
        g = base.grid(params, 1, 1)
        z = rng.standard_normal(g.n_steps)
        a = evolve(g, params, z)
        b = evolve(g, params, z)
        assert np.array_equal(a.values, b.values)

    def test_rejects_wrong_draw_count(self, params, base):
        g = base.grid(params, 0, 0)
        with pytest.raises(ValueError):
            evolve(g, params, np.zeros(g.n_steps + 1))

    def test_linear_in_initial_state(self, params, base, rng):
        g = base.grid(params, 1, 0)
        z = rng.standard_normal(g.n_steps)
        u = DensityState(rng.standard_normal(g.interior_count), 0)
        w = DensityState(rng.standard_normal(g.interior_count), 0)
        a, b = 0.7, -1.3
        combo = DensityState(a * u.values + b * w.values, 0)
        lhs = evolve(g, params, z, initial=combo).values
        rhs = a * evolve(g, params, z, initial=u).values
        rhs += b * evolve(g, params, z, initial=w).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_mean_location_drifts_with_mu(self, params, base):
        # E[density centre at T] = x0 + mu T; average over 2000 paths
        from zakai_mimc._kernels import evolve_batch

        g = base.grid(params, 1, 1)
        op = TridiagonalOperator.from_grid(g, params)
        c1 = math.sqrt(params.rho * g.k) / (2 * g.h)
        c2 = params.rho * g.k / (8 * g.h * g.h)
        n_paths = 2000
        z = np.random.default_rng(5).standard_normal((n_paths, g.n_steps))
        states = evolve_batch(
            z, initial_state(g).values, op.sub, op.diag, op.sup, c1, c2, True
        )
        x = g.x_interior()
        centers = g.h * states @ x
        want = params.x0 + params.mu * params.T
        sem = math.sqrt(params.rho * params.T / n_paths)
        assert abs(centers.mean() - want) <= 3 * sem + 0.05

    def test_mass_leakage_at_baseline(self, params, base):
        # truncation leak at T=5: below 1e-6 from level (1,1) on; the h0-level
        # discrete density has slightly fatter tails than the continuum
        # Gaussian and leaks a few 1e-6
        rng = np.random.default_rng(9)
        g0 = base.grid(params, 0, 0)
        for _ in range(50):
            s = evolve(g0, params, rng.standard_normal(g0.n_steps))
            assert 0.0 <= 1.0 - discrete_mass(s, g0) < 1e-5
            s.validate(g0)
        g1 = base.grid(params, 1, 1)
        for _ in range(20):
            s = evolve(g1, params, rng.standard_normal(g1.n_steps))
            assert 0.0 <= 1.0 - discrete_mass(s, g1) < 1e-6

    def test_mean_square_stability(self, params, base):
        # sample E ||V^n||^2 decays once the density has spread
        g = base.grid(params, 1, 1)
        rng = np.random.default_rng(11)
        mid, end = [], []
        for _ in range(300):
            s = initial_state(g)
            for n, z in enumerate(rng.standard_normal(g.n_steps), 1):
                s = step_scheme_a(s, g, params, float(z))
                if n == g.n_steps // 2:
                    mid.append(float(s.values @ s.values))
            end.append(float(s.values @ s.values))
        assert np.mean(end) <= np.mean(mid)

    def test_rho_zero_heat_kernel_convergence(self, base):
        p = ModelParams(mu=0.081, rho=0.0, T=5.0, x0=5.0)
        errs = []
        for lev in (1, 2):
            g = base.grid(p, lev, lev)
            s = evolve(g, p, np.zeros(g.n_steps))
            exact = exact_density(p, 0.0, g.x_interior())
            errs.append(np.max(np.abs(s.values - exact)))
        # h^2 + k error: one level halves h and quarters k => ratio ~ 4
        assert 2.5 <= errs[0] / errs[1] <= 6.5


class TestLosses:
    def test_all_zero_state_gives_one(self, params, base):
        g = base.grid(params, 1, 0)
        s = DensityState(np.zeros(g.interior_count), 0)
        assert loss_trapezoidal(s, g) == 1.0
        assert loss_rectangle(s, g) == 1.0

    def test_trap_minus_rect_is_half_cell_at_zero(self, params, base, rng):
        g = base.grid(params, 2, 0)
        s = DensityState(rng.standard_normal(g.interior_count), 0)
        v0 = s.values[g.i_zero - 1]
        diff = loss_trapezoidal(s, g) - loss_rectangle(s, g)
        assert diff == pytest.approx(0.5 * g.h * v0, abs=1e-15)

    def test_requires_node_at_zero(self, params):
        # h = 2 grid aligned on x0 = 5 has nodes at odd x only
        g = build_grid(params, -9.0, 21.0, 2.0, 0.25, 0, 0)
        assert g.i_zero is None
        s = DensityState(np.zeros(g.interior_count), 0)
        with pytest.raises(DomainMisaligned):
            loss_trapezoidal(s, g)

    def test_symmetric_density_gives_half(self, base):
        p = ModelParams(mu=0.0, rho=0.0, T=5.0, x0=0.0)
        g = build_grid(p, -15.0, 15.0, 1.0, 0.25, 2, 0)
        s = DensityState(exact_density(p, 0.0, g.x_interior()), 0)
        assert loss_trapezoidal(s, g) == pytest.approx(0.5, abs=2e-3)

    def test_trapezoidal_matches_quadrature(self, params, base):
        # exact density sampled at h = 1/8 vs adaptive quadrature of the tail
        g = base.grid(params, 3, 0)
        m_T = 0.4
        s = DensityState(exact_density(params, m_T, g.x_interior()), 0)
        tail, _ = quad(lambda x: exact_density(params, m_T, x), -np.inf, 0.0)
        assert abs(loss_trapezoidal(s, g) - tail) <= 5e-3

    def test_rectangle_first_order_and_worse(self, params):
        m_T = 0.4
        tail, _ = quad(lambda x: exact_density(params, m_T, x), -np.inf, 0.0)

        def errors(l1):
            g = build_grid(params, -10.0, 20.0, 1.0, 0.25, l1, 0)
            s = DensityState(exact_density(params, m_T, g.x_interior()), 0)
            return (
                abs(loss_trapezoidal(s, g) - tail),
                abs(loss_rectangle(s, g) - tail),
            )

        trap_h, rect_h = errors(1)  # h = 1/2
        trap_h2, rect_h2 = errors(2)  # h = 1/4
        assert rect_h > trap_h
        # rectangle halves with h, trapezoidal quarters
        assert rect_h / rect_h2 == pytest.approx(2.0, rel=0.35)
        assert trap_h / trap_h2 == pytest.approx(4.0, rel=0.5)


class TestExactLoss:
    def test_symmetric_case(self):
        p = ModelParams(mu=0.0, rho=0.0, T=5.0, x0=0.0)
        for m in (-2.0, 0.0, 3.5):
            assert exact_loss_sample(p, m) == pytest.approx(0.5)

    def test_monotone_decreasing_in_m(self, params):
        ms = np.linspace(-3, 3, 13)
        vals = [exact_loss_sample(params, m) for m in ms]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_expectation_matches_gaussian_closure(self, params):
        # integrate the conditional loss against the N(0, T) law of M_T
        def integrand(m):
            w = math.exp(-m * m / (2 * params.T)) / math.sqrt(2 * math.pi * params.T)
            return exact_loss_sample(params, m) * w

        num, _ = quad(integrand, -12 * math.sqrt(params.T), 12 * math.sqrt(params.T))
        closed = expected_loss(params)
        assert closed == pytest.approx(0.00782, abs=2e-5)
        assert num == pytest.approx(closed, rel=1e-8)

    def test_closed_form_value(self, params):
        want = norm.cdf(-(params.x0 + params.mu * params.T) / math.sqrt(params.T))
        assert expected_loss(params) == want
