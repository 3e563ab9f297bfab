"""Hamiltonian, measure derivatives, adjoint construction/solve, cost
estimation, and the sufficient-condition verifier."""

import numpy as np
import pytest

from mvfbdsde.control import (
    ControlledDynamics,
    ControlProblem,
    CostTerm,
    JacobianBank,
    MomentFunctional,
    RunningCost,
    build_adjoint_coefficients,
    estimate_cost,
    first_order_candidate,
    grad_hamiltonian_block,
    gradient_consistency,
    hamiltonian,
    l_derivative,
    lq_control_scenario,
    lq_deterministic_oracle,
    mean_control_gradient,
    solve_adjoint,
    solve_state,
    verify_smp,
)
from mvfbdsde.measure import EmpiricalLaw
from mvfbdsde.model import Dimensions, Quad, quad_law
from mvfbdsde.paths import TimeGrid, sample_driver_pair
from mvfbdsde.solver import RegressionConfig

REG = RegressionConfig()


@pytest.fixture(scope="module")
def lq():
    problem = lq_control_scenario()
    drivers = sample_driver_pair(problem.grid, 1, 1, 1000, seed=909)
    return problem, drivers


def quad_batch(rng, m, dims, scale=1.0):
    return Quad(
        scale * rng.standard_normal((m, dims.d)),
        scale * rng.standard_normal((m, dims.d)),
        scale * rng.standard_normal((m, dims.d, dims.d_b)),
        scale * rng.standard_normal((m, dims.d, dims.d_w)),
    )


def zero_cost_problem(grid=None) -> ControlProblem:
    grid = grid or TimeGrid(1.0, 30)
    dims = Dimensions(1, 1, 1)
    dynamics = ControlledDynamics(
        f=lambda t, v, u, law: u.copy(),
        g=lambda t, v, u, law: np.zeros_like(v.Z),
        F=lambda t, v, u, law: v.y.copy(),
        G=lambda t, v, u, law: np.zeros_like(v.z),
        law_dependence="none",
    )
    return ControlProblem(
        dims=dims,
        d_u=1,
        grid=grid,
        x=np.array([1.0]),
        c=0.5,
        dynamics=dynamics,
        running_cost=RunningCost.zero(),
        terminal_cost=CostTerm.zero(),
        initial_cost=CostTerm.zero(),
        u_lo=np.array([-2.0]),
        u_hi=np.array([2.0]),
        theta1=0.25,
        name="zero_cost",
    )


class TestHamiltonian:
    def test_zero_adjoints_give_negative_cost(self, lq):
        problem, _ = lq
        rng = np.random.default_rng(0)
        m = 8
        v = quad_batch(rng, m, problem.dims)
        u = rng.uniform(-1, 1, size=(m, 1))
        chi = Quad.zeros(m, problem.dims)
        law = quad_law(v)
        h = hamiltonian(problem, 0.3, v, u, chi, law)
        ell = problem.running_cost.value(0.3, v, u, law)
        assert np.allclose(h, -ell, atol=1e-14)

    def test_pure_quadratic_cost(self):
        problem = zero_cost_problem()
        problem.running_cost = RunningCost(
            value=lambda t, v, u, law: np.sum(u**2, axis=1)
        )
        problem.dynamics = ControlledDynamics(
            f=lambda t, v, u, law: np.zeros_like(v.y),
            g=lambda t, v, u, law: np.zeros_like(v.Z),
            F=lambda t, v, u, law: np.zeros_like(v.y),
            G=lambda t, v, u, law: np.zeros_like(v.z),
            law_dependence="none",
        )
        rng = np.random.default_rng(1)
        m = 6
        v = quad_batch(rng, m, problem.dims)
        chi = quad_batch(rng, m, problem.dims)
        u = rng.uniform(-2, 2, size=(m, 1))
        h = hamiltonian(problem, 0.0, v, u, chi, quad_law(v))
        assert np.allclose(h, -np.sum(u**2, axis=1), atol=1e-14)

    def test_lq_hand_expansion(self, lq):
        # H = p (y - my/2) - P (mY/2 - Y + u) + q (z/4 - mz/8)
        #     - Q (mZ/8 - Z/4) - (u^2 + rho y^2)/2, rho = 1/2
        problem, _ = lq
        m = 16
        rng = np.random.default_rng(2)
        v = quad_batch(rng, m, problem.dims)
        chi = quad_batch(rng, m, problem.dims)
        u = rng.uniform(-1, 1, size=(m, 1))
        law = quad_law(v)
        my, m_big, mz, m_big_z = (
            v.y.mean(), v.Y.mean(), v.z.mean(), v.Z.mean(),
        )
        p, big_p, q, big_q = chi.y[:, 0], chi.Y[:, 0], chi.z[:, 0, 0], chi.Z[:, 0, 0]
        by_hand = (
            p * (v.y[:, 0] - 0.5 * my)
            - big_p * (0.5 * m_big - v.Y[:, 0] + u[:, 0])
            + q * (0.25 * v.z[:, 0, 0] - 0.125 * mz)
            - big_q * (0.125 * m_big_z - 0.25 * v.Z[:, 0, 0])
            - 0.5 * u[:, 0] ** 2
            - 0.25 * v.y[:, 0] ** 2
        )
        h = hamiltonian(problem, 0.4, v, u, chi, law)
        assert np.allclose(h, by_hand, atol=1e-12)

    def test_cost_sign_audit(self, lq):
        # negating the running cost negates exactly its term in H
        problem, _ = lq
        rng = np.random.default_rng(3)
        m = 8
        v = quad_batch(rng, m, problem.dims)
        chi = quad_batch(rng, m, problem.dims)
        u = rng.uniform(-1, 1, size=(m, 1))
        law = quad_law(v)
        h = hamiltonian(problem, 0.1, v, u, chi, law)
        ell = problem.running_cost.value(0.1, v, u, law)
        base_cost = problem.running_cost
        problem.running_cost = RunningCost.zero()
        try:
            h0 = hamiltonian(problem, 0.1, v, u, chi, law)
        finally:
            problem.running_cost = base_cost
        assert np.allclose(h + ell, h0, atol=1e-14)


class TestLDerivative:
    def test_half_squared_mean(self):
        fn = MomentFunctional(fn=lambda m: 0.5 * float(m @ m))
        rng = np.random.default_rng(4)
        samples = rng.standard_normal((40, 1)) + 2.0
        law = EmpiricalLaw.from_samples(samples)
        pts = rng.standard_normal((7, 1))
        deriv = l_derivative(fn, law, pts)
        assert np.allclose(deriv, law.mean[0], atol=1e-7)

    def test_constant_functional(self):
        fn = MomentFunctional(fn=lambda m: 3.0)
        law = EmpiricalLaw.from_samples(np.ones((5, 2)))
        assert np.allclose(l_derivative(fn, law, np.zeros((3, 2))), 0.0, atol=1e-9)

    def test_linear_lift(self):
        fn = MomentFunctional(fn=lambda m: float(m[0]))
        law = EmpiricalLaw.from_samples(np.ones((5, 1)))
        assert np.allclose(l_derivative(fn, law, np.zeros((3, 1))), 1.0, atol=1e-9)

    def test_unavailable(self):
        fn = MomentFunctional(structure="general")
        law = EmpiricalLaw.from_samples(np.ones((5, 1)))
        with pytest.raises(ValueError, match="L-derivative unavailable"):
            l_derivative(fn, law, np.zeros((3, 1)))

    def test_lift_consistency_superlinear_remainder(self):
        # perturbing every atom by eps*h moves the lifted value by
        # eps * E<deriv, h> + o(eps)
        fn = MomentFunctional(
            fn=lambda m: float(np.cos(m[0]) + 0.5 * m[0] ** 2)
        )
        rng = np.random.default_rng(5)
        samples = rng.standard_normal((64, 1))
        law = EmpiricalLaw.from_samples(samples)
        h = rng.standard_normal((64, 1))
        deriv = l_derivative(fn, law, samples)
        linear = float(np.mean(np.sum(deriv * h, axis=1)))
        remainders = []
        for eps in (1e-3, 1e-4):
            lifted = fn.fn(EmpiricalLaw.from_samples(samples + eps * h).mean)
            base = fn.fn(law.mean)
            remainders.append(abs(lifted - base - eps * linear))
        # halving-by-10 the step shrinks the remainder ~100x (quadratic)
        assert remainders[1] <= 0.05 * remainders[0] + 1e-14


class TestAdjointConstruction:
    def test_hand_checkable_linear_dynamics(self):
        # f = u, F = y, g = G = 0, zero costs: the adjoint drift/noise entries
        # collapse to F_adj = p and everything else zero
        problem = zero_cost_problem()
        grid = problem.grid
        m = 20
        state_rng = np.random.default_rng(6)
        from mvfbdsde.model import EnsembleState

        state = EnsembleState.zeros(m, problem.dims, grid, x=problem.x)
        state.Y[:] = state_rng.standard_normal(state.Y.shape)
        controls = np.zeros((grid.steps + 1, 1))
        system = build_adjoint_coefficients(problem, state, controls)
        chi = quad_batch(state_rng, m, problem.dims)
        law = quad_law(chi)
        t = float(grid.nodes[3])
        assert np.allclose(system.coefficients.f(t, chi, law), 0.0, atol=1e-9)
        assert np.allclose(system.coefficients.F(t, chi, law), chi.y, atol=1e-9)
        assert np.allclose(system.coefficients.g(t, chi, law), 0.0, atol=1e-9)
        assert np.allclose(system.coefficients.G(t, chi, law), 0.0, atol=1e-9)
        assert np.allclose(system.p0, 0.0)
        assert np.allclose(system.shift, 0.0)
        assert system.c_adj == -problem.c

    def test_law_free_problem_has_no_mean_terms(self):
        problem = zero_cost_problem()
        m = 10
        from mvfbdsde.model import EnsembleState

        state = EnsembleState.zeros(m, problem.dims, problem.grid, x=problem.x)
        controls = np.zeros((problem.grid.steps + 1, 1))
        laws = state.node_laws()
        bank = JacobianBank(problem, state, controls, laws)
        rng = np.random.default_rng(7)
        chi = quad_batch(rng, m, problem.dims)
        for block in ("my", "mY", "mz", "mZ"):
            grad = grad_hamiltonian_block(problem, bank, 2, chi, block)
            assert np.allclose(grad, 0.0, atol=1e-12)

    def test_fd_matches_analytic_jacobians(self, lq):
        problem, drivers = lq
        m = 200
        rep = solve_state(problem, np.zeros((problem.grid.steps + 1, 1)), drivers_subset(drivers, m), REG)
        state = rep.final_state
        controls = np.zeros((problem.grid.steps + 1, 1))
        laws = state.node_laws()
        bank_analytic = JacobianBank(problem, state, controls, laws)
        stripped = ControlledDynamics(
            f=problem.dynamics.f, g=problem.dynamics.g, F=problem.dynamics.F,
            G=problem.dynamics.G, law_dependence="first_moment", jacobians={},
        )
        fd_problem = ControlProblem(
            dims=problem.dims, d_u=1, grid=problem.grid, x=problem.x, c=problem.c,
            dynamics=stripped, running_cost=problem.running_cost,
            terminal_cost=problem.terminal_cost, initial_cost=problem.initial_cost,
            u_lo=problem.u_lo, u_hi=problem.u_hi,
        )
        bank_fd = JacobianBank(fd_problem, state, controls, laws)
        rng = np.random.default_rng(8)
        chi = quad_batch(rng, m, problem.dims)
        for block in ("y", "Y", "z", "Z", "u", "my", "mY", "mz", "mZ"):
            ga = grad_hamiltonian_block(problem, bank_analytic, 5, chi, block)
            gf = grad_hamiltonian_block(fd_problem, bank_fd, 5, chi, block)
            scale = max(1.0, float(np.max(np.abs(ga))))
            assert np.max(np.abs(ga - gf)) <= 1e-4 * scale, block


def drivers_subset(drivers, m):
    from mvfbdsde.paths import BrownianPair

    return BrownianPair(
        dW=drivers.dW[:m], dB=drivers.dB[:m], grid=drivers.grid, seed=drivers.seed
    )


class TestAdjointSolve:
    def test_zero_cost_zero_adjoint(self):
        problem = zero_cost_problem()
        drivers = sample_driver_pair(problem.grid, 1, 1, 200, seed=30)
        rep = solve_state(problem, np.zeros((problem.grid.steps + 1, 1)), drivers, REG)
        adj = solve_adjoint(
            problem, rep.final_state, np.zeros((problem.grid.steps + 1, 1)),
            drivers, REG,
        )
        for arr in (adj.adjoint.p, adj.adjoint.P, adj.adjoint.q, adj.adjoint.Q):
            assert np.max(np.abs(arr)) <= 1e-10

    def test_lq_adjoint_matches_bvp_oracle(self, lq):
        problem, drivers = lq
        oracle = lq_deterministic_oracle(problem)
        rep = solve_state(problem, oracle.u[:, None], drivers, REG, tol=1e-6)
        adj = solve_adjoint(problem, rep.final_state, oracle.u[:, None], drivers,
                            REG, tol=1e-8)
        assert adj.report.converged
        mean_p = adj.adjoint.p[:, :, 0].mean(axis=0)
        mean_big = adj.adjoint.P[:, :, 0].mean(axis=0)
        assert np.max(np.abs(mean_p - oracle.p)) <= 0.02
        assert np.max(np.abs(mean_big - oracle.P)) <= 0.02
        # boundary data hold by construction: p_0 exactly, P_T within solver tol
        big_y0 = rep.final_state.Y[:, 0]
        assert np.allclose(adj.adjoint.p[:, 0], -0.5 * big_y0, atol=1e-12)
        assert adj.report.residuals.terminal <= 1e-3

    def test_cost_scaling_scales_adjoint(self, lq):
        problem, drivers = lq
        u = np.full((problem.grid.steps + 1, 1), 0.2)
        rep = solve_state(problem, u, drivers, REG)
        adj1 = solve_adjoint(problem, rep.final_state, u, drivers, REG, tol=1e-10)
        doubled = lq_control_scenario(problem.grid)
        base_rc = doubled.running_cost
        doubled.running_cost = RunningCost(
            value=lambda t, v, uu, law: 2.0 * base_rc.value(t, v, uu, law),
            grads={k: (lambda fn: (lambda t, v, uu, law: 2.0 * fn(t, v, uu, law)))(fn)
                   for k, fn in base_rc.grads.items()},
            mean_grads={k: (lambda fn: (lambda t, v, uu, law: 2.0 * fn(t, v, uu, law)))(fn)
                        for k, fn in base_rc.mean_grads.items()},
            law_dependence=base_rc.law_dependence,
        )
        base_tc = doubled.terminal_cost
        doubled.terminal_cost = CostTerm(
            value=lambda x, law: 2.0 * base_tc.value(x, law),
            grad=lambda x, law: 2.0 * base_tc.grad(x, law),
            mean_grad=lambda law: 2.0 * base_tc.mean_grad(law),
            law_dependence=base_tc.law_dependence,
        )
        base_ic = doubled.initial_cost
        doubled.initial_cost = CostTerm(
            value=lambda x, law: 2.0 * base_ic.value(x, law),
            grad=lambda x, law: 2.0 * base_ic.grad(x, law),
            mean_grad=lambda law: 2.0 * base_ic.mean_grad(law),
            law_dependence=base_ic.law_dependence,
        )
        rep2 = solve_state(doubled, u, drivers, REG)
        adj2 = solve_adjoint(doubled, rep2.final_state, u, drivers, REG, tol=1e-10)
        assert np.max(np.abs(adj2.adjoint.p - 2.0 * adj1.adjoint.p)) <= 1e-3
        assert np.max(np.abs(adj2.adjoint.P - 2.0 * adj1.adjoint.P)) <= 1e-3


class TestCost:
    def test_zero_costs(self):
        problem = zero_cost_problem()
        drivers = sample_driver_pair(problem.grid, 1, 1, 100, seed=31)
        est = estimate_cost(problem, np.zeros((problem.grid.steps + 1, 1)), drivers, REG)
        assert est.value == 0.0

    def test_constant_running_cost_gives_horizon(self):
        problem = zero_cost_problem(TimeGrid(0.75, 30))
        problem.running_cost = RunningCost(
            value=lambda t, v, u, law: np.ones(v.particles)
        )
        drivers = sample_driver_pair(problem.grid, 1, 1, 100, seed=32)
        est = estimate_cost(problem, np.zeros((problem.grid.steps + 1, 1)), drivers, REG)
        assert est.value == pytest.approx(0.75, abs=1e-12)
        assert est.stderr <= 1e-12

    def test_lq_candidate_cost_matches_oracle(self, lq):
        problem, drivers = lq
        oracle = lq_deterministic_oracle(problem)
        est = estimate_cost(problem, oracle.u[:, None], drivers, REG, tol=1e-6)
        # the ensemble collapses onto the mean path, so the gap is the order-one
        # discretization bias of the Euler state solve, not Monte Carlo noise
        assert abs(est.value - oracle.cost_grid) <= max(3 * est.stderr, 0.01)

    def test_out_of_box_control_names_node(self, lq):
        problem, drivers = lq
        u = np.zeros((problem.grid.steps + 1, 1))
        u[7] = 5.0
        with pytest.raises(ValueError, match="node 7"):
            estimate_cost(problem, u, drivers, REG)

    def test_time_callable_control(self, lq):
        problem, drivers = lq
        est = estimate_cost(problem, lambda k, t: np.array([0.1 * np.cos(t)]),
                            drivers, REG)
        assert np.isfinite(est.value)

    def test_feedback_on_forward_feature(self, lq):
        from mvfbdsde.control import FeedbackControl

        problem, drivers = lq
        fb = FeedbackControl(lambda k, t, y: problem.project(-0.5 * y))
        est = estimate_cost(problem, fb, drivers, REG)
        assert np.isfinite(est.value)
        # an unprojected feedback that leaves the box is rejected with a node
        runaway = FeedbackControl(lambda k, t, y: y + 10.0)
        with pytest.raises(ValueError, match="node"):
            estimate_cost(problem, runaway, drivers, REG)


class TestVerifySmp:
    def test_lq_candidate_passes(self, lq):
        problem, drivers = lq
        cand = first_order_candidate(problem, drivers, REG, iters=6, tol=1e-6)
        report = verify_smp(problem, cand, n_perturbations=8, drivers=drivers,
                            reg=REG, tol=1e-6, seed=17)
        assert report.verdict, report.text()
        assert report.convexity_margin >= -1e-9
        assert report.concavity_margin >= -1e-7
        assert report.max_condition_gap >= -1e-4
        assert min(report.cost_margins) >= 0.0

    def test_suboptimal_control_fails(self, lq):
        problem, drivers = lq
        bad = np.full((problem.grid.steps + 1, 1), 1.5)
        report = verify_smp(problem, bad, n_perturbations=8, drivers=drivers,
                            reg=REG, tol=1e-6, seed=18)
        assert not (report.checks["max_condition"] and report.checks["cost_dominance"])

    def test_out_of_box_candidate_rejected(self, lq):
        problem, drivers = lq
        bad = np.full((problem.grid.steps + 1, 1), 5.0)
        with pytest.raises(ValueError, match="node"):
            verify_smp(problem, bad, n_perturbations=2, drivers=drivers, reg=REG)


class TestGradientConsistency:
    def test_zero_direction(self, lq):
        problem, drivers = lq
        u = np.zeros((problem.grid.steps + 1, 1))
        report = gradient_consistency(problem, u, np.zeros((problem.grid.steps + 1, 1)),
                                      drivers=drivers, reg=REG)
        assert report.fd_value == 0.0 and report.adjoint_value == 0.0

    def test_lq_agreement(self, lq):
        problem, drivers = lq
        u = np.full((problem.grid.steps + 1, 1), 0.3)
        rng = np.random.default_rng(3)
        direction = rng.standard_normal((problem.grid.steps + 1, 1))
        report = gradient_consistency(problem, u, direction, drivers=drivers,
                                      reg=REG, tol=1e-6)
        assert report.rel_error <= 0.05

    def test_first_order_optimality_at_candidate(self, lq):
        # at the stationary candidate the adjoint-side derivative is ~0 in
        # every direction: no first-order descent exists
        problem, drivers = lq
        cand = first_order_candidate(problem, drivers, REG, iters=6, tol=1e-6)
        rep = solve_state(problem, cand, drivers, REG, tol=1e-6)
        adj = solve_adjoint(problem, rep.final_state, cand, drivers, REG, tol=1e-8)
        grad = mean_control_gradient(problem, rep.final_state, adj.adjoint, cand)
        rng = np.random.default_rng(4)
        n = problem.grid.steps
        dt = problem.grid.dt
        for _ in range(5):
            direction = rng.standard_normal((n + 1, 1))
            dj = -float(np.sum(grad[:n] * direction[:n]) * dt)
            assert dj >= -5e-3 * float(np.max(np.abs(direction)))
