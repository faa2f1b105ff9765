"""
Unit tests for control problems and Hamiltonian minimization
"""

import unittest

import numpy as np
from scipy.optimize import brentq

from mirrorflow.core.mirror import BallMirror
from mirrorflow.core.problem import (
    FiniteActionProblem,
    LQBallProblem,
    affine_quadratic_problem,
    epsilon_root,
)
from mirrorflow.errors import DomainError


def cubic(radius, tau, m, eps):
    return eps ** 3 + (m - 3 * radius) * eps ** 2 + (2 * radius ** 2 - 2 * tau - 2 * radius * m) * eps + 2 * radius * tau


def lq_problem(tau):
    return LQBallProblem(M1=[[0.3]], N=[[1.0]], M2=[[1.0]], M3=[[0.5]], radius=1.5, tau=tau)


def finite_problem(tau):
    return FiniteActionProblem(
        beta=[[-1.0], [0.0], [1.0]],
        phi=[0.2, 0.0, 0.2],
        sigma=[[1.0]],
        terminal_matrix=[[0.5]],
        reference=[0.2, 0.5, 0.3],
        tau=tau,
        state_weight=1.0,
    )


class TestEpsilonRoot(unittest.TestCase):
    """Test cases for the barrier cubic root"""

    def setUp(self):
        """Set up test fixtures"""
        self.radius = 1.5
        self.tau = 0.5
        self.m = np.linspace(0.0, 20.0, 50)

    def test_residual_and_bracket(self):
        """Test that the root solves the cubic inside (0, R)"""
        eps = epsilon_root(self.radius, self.tau, self.m[1:])
        self.assertTrue(np.all(eps > 0) and np.all(eps < self.radius))
        residual = cubic(self.radius, self.tau, self.m[1:], eps)
        self.assertLessEqual(float(np.max(np.abs(residual))), 1e-10)

    def test_agrees_with_bisection(self):
        """Test agreement with a bracketing root finder"""
        eps = epsilon_root(self.radius, self.tau, self.m[1:])
        for m, value in zip(self.m[1:], eps):
            oracle = brentq(lambda e: cubic(self.radius, self.tau, m, e), 0.0, self.radius, xtol=1e-15, rtol=1e-15)
            self.assertAlmostEqual(float(value), oracle, delta=1e-12)

    def test_monotone_in_m(self):
        """Test that the distance to the sphere shrinks as |N^T z| grows"""
        eps = epsilon_root(self.radius, self.tau, self.m)
        self.assertTrue(np.all(np.diff(eps) < 0))

    def test_zero_m_and_scalar(self):
        """Test the m = 0 convention and scalar input"""
        self.assertEqual(epsilon_root(self.radius, self.tau, 0.0), self.radius)
        self.assertIsInstance(float(epsilon_root(self.radius, self.tau, 2.0)), float)

    def test_invalid_arguments(self):
        """Test that invalid radius, tau or m is rejected"""
        with self.assertRaises(DomainError):
            epsilon_root(-1.0, 0.5, 1.0)
        with self.assertRaises(DomainError):
            epsilon_root(1.0, 0.0, 1.0)
        with self.assertRaises(DomainError):
            epsilon_root(1.0, 0.5, -1.0)


class TestLQBallProblem(unittest.TestCase):
    """Test cases for the linear-quadratic ball problem"""

    def setUp(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(3)
        self.x = self.rng.uniform(-2.0, 2.0, size=(20, 1))
        self.z = self.rng.uniform(-4.0, 4.0, size=(20, 1))

    def brute_force(self, problem, x, z, n=10000):
        actions = problem.mirror.sample_interior(self.rng, n)
        if problem.tau == 0:
            actions = np.vstack([actions, problem.mirror.project(3.0 * actions[:100])])
        xs = np.repeat(x[None, :], actions.shape[0], axis=0)
        zs = np.repeat(z[None, :], actions.shape[0], axis=0)
        return float(np.min(problem.hamiltonian(0.0, xs, zs, actions)))

    def test_minimum_beats_brute_force(self):
        """Test min_hamiltonian against random actions for tau = 0 and tau > 0"""
        for tau in (0.0, 0.5):
            problem = lq_problem(tau)
            values, _ = problem.min_hamiltonian(0.0, self.x, self.z)
            for i in range(5):
                self.assertLessEqual(values[i], self.brute_force(problem, self.x[i], self.z[i]) + 1e-8)

    def test_argmin_attains_minimum(self):
        """Test that H at the returned argmin equals the returned minimum"""
        for tau in (0.0, 0.5):
            problem = lq_problem(tau)
            values, actions = problem.min_hamiltonian(0.0, self.x, self.z)
            np.testing.assert_allclose(problem.hamiltonian(0.0, self.x, self.z, actions), values, atol=1e-10)

    def test_tau0_argmin_is_clipped_feedback(self):
        """Test a* = -N^T z clipped to the ball"""
        problem = lq_problem(0.0)
        z = np.array([[0.5], [-3.0]])
        _, actions = problem.min_hamiltonian(0.0, np.zeros((2, 1)), z)
        np.testing.assert_allclose(actions, [[-0.5], [1.5]])

    def test_barrier_argmin_is_stationary(self):
        """Test grad_a H = 0 at the interior minimizer when tau > 0"""
        problem = lq_problem(0.5)
        _, actions = problem.min_hamiltonian(0.0, self.x, self.z)
        self.assertTrue(np.all(problem.mirror.is_interior(actions)))
        grad = problem.grad_a_hamiltonian(0.0, self.x, self.z, actions)
        self.assertLessEqual(float(np.max(np.abs(grad))), 1e-8)

    def test_hamiltonian_outside_closure(self):
        """Test that actions outside the ball are rejected"""
        problem = lq_problem(0.0)
        with self.assertRaises(DomainError):
            problem.hamiltonian(0.0, np.zeros((1, 1)), np.zeros((1, 1)), np.array([[2.0]]))

    def test_growth_bound(self):
        """Test |inf_a H(z)| <= C0 + C1 |z|"""
        problem = lq_problem(0.5)
        intercept, slope = problem.hamiltonian_growth_bound(0.0, self.x)
        values, _ = problem.min_hamiltonian(0.0, self.x, self.z)
        self.assertTrue(np.all(np.abs(values) <= intercept + slope * np.abs(self.z[:, 0]) + 1e-12))

    def test_grad_a_matches_finite_differences(self):
        """Test grad_a H against central differences in a at interior actions"""
        problem = lq_problem(0.5)
        actions = 0.8 * problem.mirror.sample_interior(self.rng, self.x.shape[0])
        h = 1e-5
        exact = problem.grad_a_hamiltonian(0.0, self.x, self.z, actions)[:, 0]
        up = problem.hamiltonian(0.0, self.x, self.z, actions + h)
        down = problem.hamiltonian(0.0, self.x, self.z, actions - h)
        np.testing.assert_allclose((up - down) / (2 * h), exact, rtol=1e-6, atol=1e-8)

    def test_minimum_is_lipschitz_in_z(self):
        """Test |inf H(z) - inf H(z')| <= sup |b| |z - z'|"""
        other = self.z + self.rng.uniform(-1.0, 1.0, size=self.z.shape)
        for tau in (0.0, 0.5):
            problem = lq_problem(tau)
            bound = problem.drift_bound(0.0, self.x)
            values, _ = problem.min_hamiltonian(0.0, self.x, self.z)
            shifted, _ = problem.min_hamiltonian(0.0, self.x, other)
            gap = np.abs(values - shifted)
            self.assertTrue(np.all(gap <= bound * np.abs(self.z[:, 0] - other[:, 0]) + 1e-10))

    def test_relative_convexity(self):
        """Test lambda = 2 tau"""
        self.assertEqual(lq_problem(0.5).relative_convexity(), 1.0)
        self.assertEqual(lq_problem(0.0).relative_convexity(), 0.0)

    def test_invalid_matrices(self):
        """Test shape and definiteness checks"""
        with self.assertRaises(DomainError):
            LQBallProblem(M1=[[0.0]], N=[[1.0]], M2=[[-1.0]], M3=[[0.5]], radius=1.0)
        with self.assertRaises(DomainError):
            LQBallProblem(M1=[[0.0, 0.0]], N=[[1.0]], M2=[[1.0]], M3=[[0.5]], radius=1.0)


class TestFiniteActionProblem(unittest.TestCase):
    """Test cases for the finite-action entropic problem"""

    def setUp(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(4)
        self.x = self.rng.uniform(-2.0, 2.0, size=(20, 1))
        self.z = self.rng.uniform(-3.0, 3.0, size=(20, 1))

    def test_softmin_beats_brute_force(self):
        """Test -tau logsumexp against random distributions"""
        problem = finite_problem(0.5)
        values, actions = problem.min_hamiltonian(0.0, self.x, self.z)
        samples = problem.mirror.sample_interior(self.rng, 10000)
        for i in range(5):
            xs = np.repeat(self.x[i][None, :], samples.shape[0], axis=0)
            zs = np.repeat(self.z[i][None, :], samples.shape[0], axis=0)
            brute = float(np.min(problem.hamiltonian(0.0, xs, zs, samples)))
            self.assertLessEqual(values[i], brute + 1e-8)
        np.testing.assert_allclose(problem.hamiltonian(0.0, self.x, self.z, actions), values, atol=1e-10)

    def test_softmin_argmin_is_stationary_on_simplex(self):
        """Test that grad_a H is constant across actions at the Gibbs minimizer"""
        problem = finite_problem(0.5)
        _, actions = problem.min_hamiltonian(0.0, self.x, self.z)
        grad = problem.grad_a_hamiltonian(0.0, self.x, self.z, actions)
        spread = np.max(grad, axis=-1) - np.min(grad, axis=-1)
        self.assertLessEqual(float(np.max(spread)), 1e-10)

    def test_unregularized_argmin_is_a_vertex(self):
        """Test the one-hot minimizer when tau = 0"""
        problem = finite_problem(0.0)
        values, actions = problem.min_hamiltonian(0.0, np.zeros((1, 1)), np.array([[2.0]]))
        np.testing.assert_allclose(actions, [[1.0, 0.0, 0.0]])
        self.assertAlmostEqual(float(values[0]), -1.8)

    def test_growth_bound(self):
        """Test |inf_a H(z)| <= C (1 + |z|) with C = p max(sup |beta|, sup |phi|)"""
        problem = finite_problem(0.5)
        intercept, slope = problem.hamiltonian_growth_bound(0.0, self.x)
        expected = 3.0 * np.maximum(1.0, 0.2 + 0.5 * self.x[:, 0] ** 2)
        np.testing.assert_allclose(intercept, expected)
        np.testing.assert_allclose(slope, expected)
        for scale in (1.0, 50.0):
            z = scale * self.z
            for tau in (0.0, 0.5):
                values, _ = finite_problem(tau).min_hamiltonian(0.0, self.x, z)
                self.assertTrue(np.all(np.abs(values) <= expected * (1.0 + np.abs(z[:, 0])) + 1e-12))

    def test_three_action_softmin_closed_form(self):
        """Test inf H = -log((1 + e^-1 + e^-2)/3) and argmin = softmax(-phi) for phi = (0, 1, 2)"""
        problem = FiniteActionProblem(
            beta=[[0.0], [0.0], [0.0]], phi=[0.0, 1.0, 2.0], sigma=[[1.0]], terminal_matrix=[[0.0]],
            reference=[1 / 3, 1 / 3, 1 / 3], tau=1.0,
        )
        values, actions = problem.min_hamiltonian(0.0, np.zeros((1, 1)), np.array([[0.7]]))
        weights = np.exp(-np.array([0.0, 1.0, 2.0]))
        self.assertAlmostEqual(float(values[0]), -np.log(np.sum(weights) / 3.0), places=12)
        np.testing.assert_allclose(actions[0], weights / np.sum(weights), atol=1e-12)

    def test_softmin_matches_log_partition(self):
        """Test inf H = -tau log sum_i a0_i exp(-(beta_i z + phi_i)/tau) at random states"""
        tau = 0.5
        problem = finite_problem(tau)
        values, actions = problem.min_hamiltonian(0.0, self.x, self.z)
        scores = self.z @ problem.beta.T + problem.action_costs(0.0, self.x)
        weights = problem.reference[None, :] * np.exp(-scores / tau)
        partition = np.sum(weights, axis=-1)
        np.testing.assert_allclose(values, -tau * np.log(partition), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(actions, weights / partition[:, None], atol=1e-12)

    def test_grad_a_matches_finite_differences(self):
        """Test grad_a H along simplex directions e_i - e_j against central differences"""
        problem = finite_problem(0.5)
        actions = 0.5 * self.rng.dirichlet(np.ones(3), size=self.x.shape[0]) + 0.5 / 3.0
        grad = problem.grad_a_hamiltonian(0.0, self.x, self.z, actions)
        h = 1e-5
        for i, j in ((0, 1), (1, 2), (0, 2)):
            direction = np.zeros(3)
            direction[i], direction[j] = 1.0, -1.0
            up = problem.hamiltonian(0.0, self.x, self.z, actions + h * direction)
            down = problem.hamiltonian(0.0, self.x, self.z, actions - h * direction)
            np.testing.assert_allclose((up - down) / (2 * h), grad @ direction, rtol=1e-6, atol=1e-8)

    def test_minimum_is_lipschitz_in_z(self):
        """Test |inf H(z) - inf H(z')| <= max |beta_i| |z - z'|"""
        problem = finite_problem(0.5)
        other = self.z + self.rng.uniform(-1.0, 1.0, size=self.z.shape)
        values, _ = problem.min_hamiltonian(0.0, self.x, self.z)
        shifted, _ = problem.min_hamiltonian(0.0, self.x, other)
        bound = problem.drift_bound(0.0, self.x)
        step = np.abs(self.z[:, 0] - other[:, 0])
        self.assertTrue(np.all(np.abs(values - shifted) <= bound * step + 1e-10))

    def test_reference_checks(self):
        """Test that invalid reference distributions are rejected"""
        with self.assertRaises(DomainError):
            FiniteActionProblem([[1.0], [-1.0]], [0.0, 0.0], [[1.0]], [[0.0]], [0.6, 0.6], tau=0.5)
        with self.assertRaises(DomainError):
            FiniteActionProblem([[1.0], [-1.0]], [0.0, 0.0], [[1.0]], [[0.0]], [1.0, 0.0], tau=0.5)

    def test_ellipticity_check(self):
        """Test that degenerate noise is refused"""
        problem = FiniteActionProblem([[1.0], [-1.0]], [0.0, 0.0], [[1e-5]], [[0.0]], [0.5, 0.5], tau=0.5)
        with self.assertRaises(DomainError):
            problem.check_ellipticity(np.array([0.0]), np.zeros((3, 1)))


class TestGenericProblem(unittest.TestCase):
    """Test cases for problems assembled from callables"""

    def setUp(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(5)
        self.x = self.rng.uniform(-2.0, 2.0, size=(10, 1))
        self.z = self.rng.uniform(-3.0, 3.0, size=(10, 1))

    def test_approximate_minimum_matches_closed_form(self):
        """Test projected-gradient minimization against the LQ closed form"""
        generic = affine_quadratic_problem(
            BallMirror(radius=1.5, dim=1), M1=[[0.3]], N=[[1.0]], sigma=[[1.0]], terminal_matrix=[[0.5]]
        )
        values, actions = generic.min_hamiltonian(0.0, self.x, self.z)
        exact, exact_actions = lq_problem(0.0).min_hamiltonian(0.0, self.x, self.z)
        np.testing.assert_allclose(values, exact, atol=1e-7)
        np.testing.assert_allclose(actions, exact_actions, atol=1e-4)

    def test_coefficients(self):
        """Test drift, cost and terminal cost of the affine-quadratic builder"""
        generic = affine_quadratic_problem(
            BallMirror(radius=1.0, dim=1), M1=[[2.0]], N=[[1.0]], sigma=[[1.0]], offset=[0.5],
            state_weight=2.0, action_weight=1.0, constant=1.0, terminal_matrix=[[3.0]],
        )
        x = np.array([[1.0]])
        a = np.array([[0.5]])
        np.testing.assert_allclose(generic.drift(0.0, x, a), [[3.0]])
        np.testing.assert_allclose(generic.running_cost(0.0, x, a), [1.0 + 0.125 + 1.0])
        np.testing.assert_allclose(generic.terminal_cost(x), [3.0])
        self.assertEqual(generic.kind, "custom")

    def test_shape_check(self):
        """Test that N must match the action dimension"""
        with self.assertRaises(DomainError):
            affine_quadratic_problem(BallMirror(radius=1.0, dim=2), M1=[[0.0]], N=[[1.0]], sigma=[[1.0]])


if __name__ == "__main__":
    unittest.main()
