import math

import numpy as np
import pytest

from sinkflow.errors import DomainError, MaxIterExceeded
from sinkflow.grids import DensitySpec, Grid, discretize, kl_divergence
from sinkflow.sinkhorn import (
    coupling,
    eot_cost,
    initial_state,
    ipfp_marginal_view,
    laplace_residual,
    product_coupling,
    run_to_tolerance,
    s_step,
    state_to_csv,
    u_operator,
    v_operator,
)
from sinkflow.transport import ConvexPotential

GRID = Grid(-8.0, 8.0, 512)
MU_SPEC = DensitySpec.gaussian(0.0, 1.0)
MU = discretize(MU_SPEC, GRID)
NU = discretize(DensitySpec.gaussian(0.5, 1.0), GRID)


def quad_u0():
    u = 0.5 * GRID.nodes**2
    return u - u[GRID.n // 2]


def random_smooth_potentials(count, seed):
    """Bounded random test potentials: quadratic plus a few Fourier modes."""
    rng = np.random.default_rng(seed)
    xs = GRID.nodes
    out = []
    for _ in range(count):
        a = rng.uniform(0.3, 1.5)
        b = rng.uniform(-0.5, 0.5)
        vals = 0.5 * a * xs**2 + b * xs
        for k in range(1, 4):
            vals += rng.uniform(-0.3, 0.3) * np.sin(k * xs / 4 + rng.uniform(0, 6.28))
        out.append(vals)
    return out


class TestOperators:
    def test_shift_equivariance_v(self):
        u = quad_u0()
        base = v_operator(u, MU, 0.1)
        shifted = v_operator(u + 2.3, MU, 0.1)
        assert np.max(np.abs(shifted - (base - 2.3))) < 1e-10

    def test_shift_equivariance_u(self):
        v = quad_u0()
        base = u_operator(v, NU, 0.1)
        shifted = u_operator(v + 2.3, NU, 0.1)
        assert np.max(np.abs(shifted - (base - 2.3))) < 1e-10

    def test_quadrature_oracle(self):
        # direct quadrature with explicit weights, no log-sum-exp
        eps = 0.5
        u = quad_u0()
        got = v_operator(u, MU, eps)
        w = GRID.trapezoid_weights
        direct = np.empty(GRID.n)
        for j, y in enumerate(GRID.nodes):
            integrand = np.exp((GRID.nodes * y - u) / eps) * MU.values
            direct[j] = eps * math.log(float(np.sum(w * integrand)))
        assert np.max(np.abs(got - direct)) < 1e-8

    def test_closed_form_gaussian(self):
        # for u = x^2/2 and a standard normal marginal the smoothing is
        # y^2/(2(1+eps)) + (eps/2) log(eps/(1+eps)) plus the u0 gauge
        eps = 0.5
        u_raw = 0.5 * GRID.nodes**2
        got = v_operator(u_raw, MU, eps)
        ref = GRID.nodes**2 / (2 * (1 + eps)) + 0.5 * eps * math.log(eps / (1 + eps))
        keep = GRID.interior_slice()
        assert np.max(np.abs(got - ref)[keep]) < 1e-8

    @pytest.mark.parametrize("op,marg", [(v_operator, MU), (u_operator, NU)])
    def test_contraction_100_pairs(self, op, marg):
        pots = random_smooth_potentials(200, seed=5)
        for p1, p2 in zip(pots[::2], pots[1::2]):
            gap_in = float(np.max(np.abs(p1 - p2)))
            gap_out = float(np.max(np.abs(op(p1, marg, 0.1) - op(p2, marg, 0.1))))
            assert gap_out <= gap_in * (1 + 1e-9) + 1e-12

    def test_row_partition_independence(self):
        # evaluating the operator on row subsets must reproduce the full
        # evaluation exactly (each output node is an independent reduction)
        u = quad_u0()
        full = v_operator(u, MU, 0.1)
        halves = np.concatenate([
            v_operator(u, MU, 0.1, y_grid=None)[:GRID.n // 2],
            v_operator(u, MU, 0.1)[GRID.n // 2:],
        ])
        assert np.array_equal(full, halves)

    def test_non_finite_potential_rejected(self):
        from sinkflow.errors import NumericOverflow
        bad = quad_u0()
        bad = bad.copy()
        bad[3] = np.nan
        with pytest.raises(NumericOverflow):
            v_operator(bad, MU, 0.1)

    def test_normalization_100_potentials(self):
        # the two-step increment always yields a probability density
        for u in random_smooth_potentials(100, seed=9):
            st = initial_state(u, MU, NU, NU, 0.1)
            nxt = s_step(st)
            log_rho = (u_operator(st.v, NU, 0.1, GRID) - st.u) / 0.1 + MU.log_values
            assert abs(GRID.integrate(np.exp(log_rho)) - 1.0) < 1e-8
            assert abs(GRID.integrate(nxt.rho.values) - 1.0) < 1e-8

    def test_symmetric_composition_fixed_point(self):
        # iterating from a constant with equal marginals reaches the
        # self-potential, whose curvature solves a^2 + eps*a = 1
        eps = 0.5
        st = initial_state(np.zeros(GRID.n), MU, MU, MU, eps)
        res = run_to_tolerance(st, tol=1e-9, max_iter=500)
        keep = GRID.interior_slice()
        coeffs = np.polyfit(GRID.nodes[keep], res.state.u[keep], 2)
        alpha_star = (-eps + math.sqrt(eps * eps + 4.0)) / 2.0
        assert 2 * coeffs[0] == pytest.approx(alpha_star, abs=1e-6)
        probe = s_step(res.state)
        delta = probe.u - res.state.u
        assert np.max(np.abs(delta - delta.mean())) < 1e-6


class TestTwoStep:
    def test_fixed_point_is_stationary(self):
        eps = 0.5
        st = initial_state(np.zeros(GRID.n), MU, MU, MU, eps)
        converged = run_to_tolerance(st, tol=1e-10, max_iter=1000).state
        nxt = s_step(converged)
        delta = nxt.u - converged.u
        assert np.max(np.abs(delta - delta.mean())) < 1e-8
        assert np.max(np.abs(nxt.rho.values - MU.values)) < 1e-7

    def test_marginal_normalized_every_step(self):
        st = initial_state(quad_u0(), MU, NU, NU, 0.1)
        for _ in range(5):
            st = s_step(st)
            assert abs(GRID.integrate(st.rho.values) - 1.0) < 1e-8

    def test_kl_to_target_decreases(self):
        st = initial_state(quad_u0(), MU, NU, NU, 0.1)
        prev = None
        for _ in range(50):
            st = s_step(st)
            kl = kl_divergence(MU, st.rho)
            if prev is not None:
                assert kl < prev
            prev = kl

    def test_gauge_invariance_of_derived_quantities(self):
        eps = 0.1
        a = initial_state(quad_u0(), MU, NU, NU, eps)
        b = initial_state(quad_u0() + 7.0, MU, NU, NU, eps)
        for _ in range(3):
            a, b = s_step(a), s_step(b)
        assert np.max(np.abs(a.rho.values - b.rho.values)) < 1e-10
        ca, cb = coupling(a), coupling(b)
        assert np.max(np.abs(ca.log_gamma - cb.log_gamma)) < 1e-9
        assert abs(eot_cost(ca, MU, NU, eps) - eot_cost(cb, MU, NU, eps)) < 1e-10


@pytest.fixture(scope="module")
def state():
    st = initial_state(quad_u0(), MU, NU, NU, 0.1)
    for _ in range(3):
        st = s_step(st)
    return st


class TestCoupling:
    def test_mass(self, state):
        assert coupling(state).mass() == pytest.approx(1.0, abs=1e-6)

    def test_y_marginal_exact(self, state):
        assert np.max(np.abs(coupling(state).y_marginal() - NU.values)) < 1e-5

    def test_x_marginal_is_next_iterate(self, state):
        nxt = s_step(state)
        assert np.max(np.abs(coupling(state).x_marginal() - nxt.rho.values)) < 1e-5


class TestEotCost:
    def test_product_coupling_cost(self):
        # KL term vanishes exactly; cost is half the expected squared gap
        cost = eot_cost(product_coupling(MU, NU), MU, NU, 0.2)
        assert cost == pytest.approx(0.5 * (1.0 + 1.0 + 0.25), abs=1e-6)

    def test_converged_cost_beats_product(self):
        st = initial_state(quad_u0(), MU, NU, NU, 0.2)
        res = run_to_tolerance(st, 1e-8, 2000)
        assert eot_cost(coupling(res.state), MU, NU, 0.2) <= \
            eot_cost(product_coupling(MU, NU), MU, NU, 0.2)

    def test_self_coupling_cost_shrinks_with_eps(self):
        costs = []
        for eps in (0.5, 0.25, 0.1):
            st = initial_state(np.zeros(GRID.n), MU, MU, MU, eps)
            res = run_to_tolerance(st, 1e-8, 4000)
            costs.append(eot_cost(coupling(res.state), MU, MU, eps))
        assert costs[0] > costs[1] > costs[2] > 0.0


class TestRunToTolerance:
    def test_zero_iterations_at_fixed_point(self):
        st = initial_state(np.zeros(GRID.n), MU, MU, MU, 0.5)
        first = run_to_tolerance(st, 1e-9, 1000)
        again = run_to_tolerance(first.state, 1e-6, 50)
        assert again.iterations == 0
        assert again.state is first.state

    def test_gaussian_pair_converges_quickly(self):
        st = initial_state(quad_u0(), MU, NU, NU, 0.1)
        res = run_to_tolerance(st, 1e-6, 500)
        assert res.iterations < 500

    def test_zero_budget_raises(self):
        st = initial_state(quad_u0(), MU, NU, NU, 0.1)
        with pytest.raises(MaxIterExceeded) as exc:
            run_to_tolerance(st, 1e-6, 0)
        assert exc.value.state is st

    def test_bad_tolerance(self):
        st = initial_state(quad_u0(), MU, NU, NU, 0.1)
        with pytest.raises(DomainError):
            run_to_tolerance(st, 0.0, 10)


def test_ipfp_view_matches_potential_iteration():
    st = initial_state(quad_u0(), MU, NU, NU, 0.1)
    for _ in range(5):
        st = s_step(st)
    alt = ipfp_marginal_view(quad_u0(), MU, NU, 0.1, 5)
    assert np.max(np.abs(alt.values - st.rho.values)) < 1e-8


class TestLaplaceResidual:
    def test_quadratic_slope(self):
        u = ConvexPotential.quadratic(GRID)
        eps_list = [0.2, 0.1, 0.05, 0.025]
        res = [laplace_residual(u, MU, MU_SPEC, e) for e in eps_list]
        slope = np.polyfit(np.log(eps_list), np.log(res), 1)[0]
        assert slope >= 1.7

    def test_matches_analytic_residual(self):
        # closed form for the quadratic/Gaussian pair:
        # residual(y) = y^2 eps^2 / (2(1+eps)) - (eps/2) log(1+eps)
        u = ConvexPotential.quadratic(GRID)
        for eps in (0.2, 0.05):
            got = laplace_residual(u, MU, MU_SPEC, eps)
            a = eps * eps / (2 * (1 + eps))
            b = 0.5 * eps * math.log(1 + eps)
            expected = max(abs(4.0 * a - b), abs(b))
            assert got == pytest.approx(expected, rel=1e-6)

    def test_ablation_destroys_the_fit(self):
        u = ConvexPotential.quadratic(GRID)
        eps_list = [0.2, 0.1, 0.05, 0.025]
        res = [laplace_residual(u, MU, MU_SPEC, e, include_entropy_term=False)
               for e in eps_list]
        slope = np.polyfit(np.log(eps_list), np.log(res), 1)[0]
        assert slope < 1.0


def test_state_csv(tmp_path):
    st = initial_state(quad_u0(), MU, NU, NU, 0.1)
    state_to_csv(st, tmp_path / "x.csv", tmp_path / "y.csv")
    assert (tmp_path / "x.csv").read_text().splitlines()[0] == "x,u,rho"
    assert (tmp_path / "y.csv").read_text().splitlines()[0] == "y,v"


def test_coupling_csv(tmp_path):
    st = initial_state(quad_u0(), MU, NU, NU, 0.5)
    cp = coupling(st)
    cp.to_csv(tmp_path / "gamma.csv")
    data = np.loadtxt(tmp_path / "gamma.csv", delimiter=",")
    assert data.shape == (GRID.n, GRID.n)
