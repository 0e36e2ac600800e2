"""Terminal-value solver: operator sweeps, fixed point, extension, residual."""

import math

import numpy as np
import pytest

from semitick import (
    ConstantIntensity,
    ConvergenceError,
    GridSpec,
    ProblemSpec,
    STATES,
    SemiMarkovKernel,
    alpha,
    apply_age_zero_operator,
    contraction_bound,
    expected_price_ode_oracle,
    extend_to_age,
    extension_slice,
    load_field_csv,
    pde_residual,
    save_field_csv,
    solve_expected_price,
    solve_fixed_point,
)
from semitick.lattice import PriceLattice, max_jumps_for_tail
from semitick.solver import _extension_point

STATE_IDX = {s: k for k, s in enumerate(STATES)}

# adaptive-quadrature oracle values for one operator sweep applied to the
# identity payoff on the age-dependent kernel below (regenerate with
# scipy.integrate.quad on the definition; epsabs=1e-13)
SWEEP_ORACLE = [
    (0.0, 1.0, 1, 0.9985395027231272),
    (0.25, 1.0, 2, 1.0010785851883202),
    (0.5, 1.01, 3, 1.009403146329427),
    (0.75, 0.99, 4, 0.990115936032367),
    (0.9, 1.0201, 2, 1.0200690570058037),
]

IDENTITY = ProblemSpec(g=lambda p: p)
ZERO = ProblemSpec(g=lambda p: np.zeros_like(np.asarray(p, dtype=float)))


class TestLattice:
    def test_node_layout(self):
        lat = PriceLattice(p0=1.0, delta=0.01, n_max=3)
        assert lat.n_nodes == 10
        n = lat.index_of(1, 1)
        assert lat.prices[n] == pytest.approx(1.01 * 0.99)
        up = lat.up_index[lat.index_of(0, 0)]
        assert lat.prices[up] == pytest.approx(1.01)

    def test_locate(self):
        lat = PriceLattice(p0=1.0, delta=0.01, n_max=6)
        for a, b in ((0, 0), (3, 2), (0, 6)):
            n = lat.index_of(a, b)
            assert lat.locate(lat.prices[n] * (1 + 2e-10)) == n
        with pytest.raises(KeyError):
            lat.locate(1.5)

    def test_boundary_envelope(self):
        lat = PriceLattice(p0=1.0, delta=0.01, n_max=2)
        idx, scale = lat.image_maps(+1)
        corner = lat.index_of(2, 0)
        assert idx[corner] == corner
        p = lat.prices[corner]
        assert scale[corner] == pytest.approx((1 + p * 1.01) / (1 + p))

    def test_tail_budget_monotone(self):
        assert max_jumps_for_tail(1.0, 1.0, 1e-10) > max_jumps_for_tail(1.0, 1.0, 1e-4)


class TestOperatorSweep:
    def test_terminal_row_is_payoff(self, saturating_kernel):
        grid = GridSpec(n_t=40)
        field = solve_expected_price(saturating_kernel, grid, 1.0, 1.0, extend=False)
        out = apply_age_zero_operator(
            saturating_kernel, IDENTITY, field.t_grid, field.lattice, field.core
        )
        assert np.array_equal(out[-1], np.broadcast_to(field.lattice.prices[:, None], out[-1].shape))

    def test_zero_problem_stays_zero(self, saturating_kernel):
        field = solve_expected_price(saturating_kernel, GridSpec(n_t=40), 1.0, 1.0, extend=False)
        core = np.zeros_like(field.core)
        out = apply_age_zero_operator(saturating_kernel, ZERO, field.t_grid, field.lattice, core)
        assert np.all(out == 0.0)

    def test_single_sweep_matches_quadrature_oracle(self, saturating_kernel):
        grid = GridSpec(n_t=160)
        t_grid = np.linspace(0.0, 1.0, 161)
        lattice = PriceLattice(p0=1.0, delta=0.01, n_max=20)
        core = np.broadcast_to(
            lattice.prices[None, :, None], (161, lattice.n_nodes, 4)
        ).copy()
        out = apply_age_zero_operator(saturating_kernel, IDENTITY, t_grid, lattice, core)
        for t, p, i, expect in SWEEP_ORACLE:
            k = int(round(t / (1.0 / 160)))
            assert t_grid[k] == pytest.approx(t, abs=1e-12)
            node = lattice.locate(p, rtol=1e-4)
            got = out[k, node, STATE_IDX[i]]
            # rescale the frozen oracle to the exact lattice price
            expect_here = expect * lattice.prices[node] / p
            assert got == pytest.approx(expect_here, abs=2e-8)


class TestFixedPoint:
    def test_zero_converges_immediately(self, saturating_kernel):
        field = solve_fixed_point(saturating_kernel, ZERO, GridSpec(n_t=40), 1.0, 1.0)
        assert field.iterations == 1
        assert np.all(field.core == 0.0)

    def test_symmetric_martingale(self, symmetric_kernel):
        field = solve_expected_price(symmetric_kernel, GridSpec(n_t=200), 1.0, 1.0, extend=False)
        mask = field.lattice.report_mask
        prices = field.lattice.prices[mask]
        rel = np.abs(field.core[:, mask, :] - prices[None, :, None]) / prices[None, :, None]
        assert rel.max() <= 1e-6

    def test_asymmetric_matches_matrix_exponential(self, asymmetric_kernel):
        field = solve_expected_price(asymmetric_kernel, GridSpec(n_t=200), 1.0, 1.0, extend=False)
        taus = 1.0 - field.t_grid
        factors = expected_price_ode_oracle(0.8, 0.4, 0.01, taus)
        mask = field.lattice.report_mask
        worst = 0.0
        for ii, i in enumerate(STATES):
            col = 0 if alpha(i) > 0 else 1
            oracle = field.lattice.prices[None, mask] * factors[:, col][:, None]
            worst = max(worst, np.max(np.abs(field.core[:, mask, ii] - oracle) / oracle))
        assert worst <= 1e-4

    def test_contraction_ratios_below_bound(self, saturating_kernel):
        grid = GridSpec(n_t=120, s_max=1.25)
        field = solve_expected_price(saturating_kernel, grid, 1.0, 1.0, extend=False)
        kappa = contraction_bound(saturating_kernel, 1.0, np.linspace(0.0, 1.25, 9))
        assert all(r <= kappa + 0.01 for r in field.ratios)
        budget = math.ceil(math.log(grid.tol_fp) / math.log(kappa)) + 5
        assert field.iterations <= budget

    def test_linearity(self, saturating_kernel):
        grid = GridSpec(n_t=60)
        w1 = lambda t, p, i, s: 0.3 * np.asarray(p) / (1.0 + np.asarray(p)) + 0.0 * s
        w2 = lambda t, p, i, s: np.cos(np.asarray(p)) * math.exp(-float(np.ravel(s)[0]) if np.ndim(s) == 0 else 1.0)
        w2 = lambda t, p, i, s: np.cos(np.asarray(p)) * np.exp(-np.asarray(s))
        g1 = lambda p: p
        g2 = lambda p: np.sqrt(np.asarray(p))
        f1 = solve_fixed_point(saturating_kernel, ProblemSpec(g=g1, w=w1), grid, 1.0, 1.0)
        f2 = solve_fixed_point(saturating_kernel, ProblemSpec(g=g2, w=w2), grid, 1.0, 1.0)
        f12 = solve_fixed_point(
            saturating_kernel,
            ProblemSpec(
                g=lambda p: g1(p) + g2(p),
                w=lambda t, p, i, s: w1(t, p, i, s) + w2(t, p, i, s),
            ),
            grid,
            1.0,
            1.0,
        )
        assert f12.vnorm(f12.core - f1.core - f2.core) <= 5e-8

    def test_positive_data_positive_solution(self, saturating_kernel):
        problem = ProblemSpec(
            g=lambda p: np.maximum(np.asarray(p) - 1.0, 0.0),
            w=lambda t, p, i, s: 0.2 * np.ones_like(np.asarray(p, dtype=float)),
        )
        field = solve_fixed_point(saturating_kernel, problem, GridSpec(n_t=60), 1.0, 1.0)
        assert field.core.min() >= -1e-12

    def test_nonconvergence_carries_history(self, saturating_kernel):
        grid = GridSpec(n_t=40, max_iter=2)
        with pytest.raises(ConvergenceError) as err:
            solve_fixed_point(saturating_kernel, IDENTITY, grid, 1.0, 1.0)
        assert len(err.value.diff_norms) == 2

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            GridSpec(n_t=1)
        with pytest.raises(ValueError):
            GridSpec(n_t=10, tol_fp=0.0)


class TestExtension:
    def test_age_zero_slice_reproduces_core(self, saturating_kernel):
        field = solve_expected_price(saturating_kernel, GridSpec(n_t=80), 1.0, 1.0, extend=False)
        gap = field.vnorm(extension_slice(field, 0.0) - field.core)
        assert gap <= 2e-8

    def test_terminal_layer_is_payoff_at_all_ages(self, saturating_kernel):
        grid = GridSpec(n_t=80, n_s=4, s_max=1.0)
        field = solve_expected_price(saturating_kernel, grid, 1.0, 1.0)
        assert np.array_equal(
            field.full[-1],
            np.broadcast_to(
                field.lattice.prices[:, None, None], field.full[-1].shape
            ),
        )

    def test_flat_hazard_field_is_age_invariant(self, asymmetric_kernel):
        field = solve_expected_price(asymmetric_kernel, GridSpec(n_t=100), 1.0, 1.0, extend=False)
        assert field.age_invariant
        for sigma in (0.3, 0.9, 1.7):
            gap = field.vnorm(extension_slice(field, sigma) - field.core)
            assert gap <= 1e-8

    def test_point_extension_matches_slice(self, saturating_kernel):
        field = solve_expected_price(saturating_kernel, GridSpec(n_t=80), 1.0, 1.0, extend=False)
        sl = extension_slice(field, 0.42)
        for k, node, i in ((0, 0, 1), (20, 3, 2), (60, 7, 4)):
            assert _extension_point(field, k, node, i, 0.42) == pytest.approx(
                sl[k, node, STATE_IDX[i]], rel=1e-12
            )

    def test_eval_interpolates(self, saturating_kernel):
        grid = GridSpec(n_t=80, n_s=8, s_max=1.0)
        field = solve_expected_price(saturating_kernel, grid, 1.0, 1.0)
        exact = extension_slice(field, float(field.s_grid[3]))
        got = field.eval(field.t_grid[10], 1.0, 2, float(field.s_grid[3]))
        node = field.lattice.locate(1.0)
        assert got == pytest.approx(exact[10, node, 1], rel=1e-12)

    def test_zero_tick_expected_price_is_identity(self):
        kernel = SemiMarkovKernel(ConstantIntensity(0.6), ConstantIntensity(0.6), 0.0)
        field = solve_expected_price(kernel, GridSpec(n_t=40), 1.0, 1.0, extend=False)
        assert np.allclose(field.core, 1.0, atol=1e-12)


class TestResidual:
    def _solved_band(self, kernel, n_t, horizon=1.0, n_band=5):
        grid = GridSpec(n_t=n_t)
        field = solve_expected_price(kernel, grid, horizon, 1.0, extend=False)
        h = field.t_grid[1] - field.t_grid[0]
        return extend_to_age(field, s_grid=h * np.arange(n_band + 1))

    def test_zero_problem_zero_residual(self, saturating_kernel):
        grid = GridSpec(n_t=40)
        field = solve_fixed_point(saturating_kernel, ZERO, grid, 1.0, 1.0)
        h = field.t_grid[1] - field.t_grid[0]
        field = extend_to_age(field, s_grid=h * np.arange(4))
        res = pde_residual(saturating_kernel, ZERO, field)
        assert res.max_abs == 0.0

    def test_perturbation_spikes_residual(self, asymmetric_kernel):
        field = self._solved_band(asymmetric_kernel, 60)
        base = pde_residual(asymmetric_kernel, IDENTITY, field)
        field.full[30, field.lattice.index_of(0, 0), 1, 2] += 1.0
        spiked = pde_residual(asymmetric_kernel, IDENTITY, field)
        assert spiked.max_abs > base.max_abs + 1.0

    def test_mismatched_steps_rejected(self, asymmetric_kernel):
        field = solve_expected_price(asymmetric_kernel, GridSpec(n_t=40), 1.0, 1.0, extend=False)
        field = extend_to_age(field, s_grid=np.linspace(0.0, 1.0, 7))
        with pytest.raises(ValueError, match="matching steps"):
            pde_residual(asymmetric_kernel, IDENTITY, field)

    def test_residual_shrinks_with_refinement(self, asymmetric_kernel):
        r_coarse = pde_residual(
            asymmetric_kernel, IDENTITY, self._solved_band(asymmetric_kernel, 60)
        )
        r_fine = pde_residual(
            asymmetric_kernel, IDENTITY, self._solved_band(asymmetric_kernel, 120)
        )
        order = math.log2(r_coarse.max_abs / r_fine.max_abs)
        assert order >= 1.7


class TestFieldIO:
    def test_roundtrip(self, saturating_kernel, tmp_path):
        grid = GridSpec(n_t=20, n_s=3, s_max=0.5)
        field = solve_expected_price(saturating_kernel, grid, 1.0, 1.0)
        out = tmp_path / "field.csv"
        save_field_csv(field, out, header_meta={"master_seed": 1})
        loaded = load_field_csv(out)
        mask = field.lattice.report_mask
        # the saved age axis holds extension slices; its age-0 slice agrees
        # with the iterated core to the fixed-point tolerance
        np.testing.assert_allclose(loaded.core, field.full[..., 0][:, mask, :], rtol=1e-15)
        np.testing.assert_allclose(loaded.full, field.full[:, mask, :, :], rtol=1e-15)
        assert np.max(np.abs(loaded.core - field.core[:, mask, :])) <= 1e-7
        assert loaded.eval(0.3, 1.0, 2, 0.0) == pytest.approx(
            field.eval(0.3, 1.0, 2, 0.0), rel=1e-7
        )


class TestDiagnostics:
    def test_bad_payoff_raises_solver_error(self, saturating_kernel):
        from semitick import SolverError

        bad = ProblemSpec(g=lambda p: np.where(np.asarray(p) > 1.0, np.nan, p))
        with pytest.raises(SolverError, match="non-finite"):
            solve_fixed_point(saturating_kernel, bad, GridSpec(n_t=20), 1.0, 1.0)

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_bad_source_raises_solver_error(self, saturating_kernel):
        from semitick import SolverError

        bad = ProblemSpec(
            g=lambda p: p,
            w=lambda t, p, i, s: np.full_like(np.asarray(p, dtype=float), np.inf),
        )
        with pytest.raises(SolverError, match="non-finite"):
            solve_fixed_point(saturating_kernel, bad, GridSpec(n_t=20), 1.0, 1.0)
