"""
Unit tests for the Monte Carlo oracle
"""

import math
import unittest

import numpy as np

from mirrorflow.core.grid import Field, GridSpec, build_grid
from mirrorflow.core.pde import evaluate_policy
from mirrorflow.core.problem import LQBallProblem
from mirrorflow.core.sde import field_interpolator, monte_carlo_value, path_rng, splitmix64
from mirrorflow.errors import DomainError

# value of the constant control a = 0.3, T = 0.5, started at (0, 0); exits are negligible on [-4, 4]
CONSTANT_CONTROL_VALUE = 0.348125


def constant_control(t, x):
    return np.full((x.shape[0], 1), 0.3)


class TestSeeding(unittest.TestCase):
    """Test cases for per-path random streams"""

    def test_splitmix_known_values(self):
        """Test the first SplitMix64 outputs for a zero state"""
        self.assertEqual(splitmix64(0), 0xE220A8397B1DCDAF)
        self.assertEqual(splitmix64(1), 0x6E789E6AA1B965F4)

    def test_paths_are_reproducible_and_distinct(self):
        """Test that equal (seed, path) pairs give equal draws and different paths do not"""
        a = path_rng(7, 3).standard_normal(5)
        b = path_rng(7, 3).standard_normal(5)
        c = path_rng(7, 4).standard_normal(5)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.allclose(a, c))


class TestMonteCarloValue(unittest.TestCase):
    """Test cases for monte_carlo_value"""

    def setUp(self):
        """Set up test fixtures"""
        self.problem = LQBallProblem(M1=[[0.0]], N=[[1.0]], M2=[[1.0]], M3=[[0.5]], radius=1.5)
        self.grid = build_grid(GridSpec(dim=1, lo=[-4.0], hi=[4.0], nx=[161], nt=200, horizon=0.5))

    def test_agrees_with_closed_form(self):
        """Test the estimate against the exact value within three standard errors"""
        mean, stderr = monte_carlo_value(
            self.problem, self.grid, constant_control, 0.0, [0.0], n_paths=100000, dt_sim=2e-3, seed=11
        )
        self.assertLess(stderr, 5e-3)
        self.assertLessEqual(abs(mean - CONSTANT_CONTROL_VALUE), 3.0 * stderr + 1e-3)

    def test_agrees_with_policy_evaluation(self):
        """Test Monte Carlo against the PDE value of an interpolated control field"""
        u = Field(self.grid, np.full((201, 161, 1), 0.3))
        value = evaluate_policy(self.problem, self.grid, u)
        mean, stderr = monte_carlo_value(self.problem, self.grid, u, 0.0, [0.0], n_paths=20000, dt_sim=5e-3, seed=3)
        self.assertLessEqual(abs(mean - value.value(0, (81,))), 3.0 * stderr + 1e-2)

    def test_same_seed_same_result(self):
        """Test determinism for a fixed seed and batch size"""
        first = monte_carlo_value(self.problem, self.grid, constant_control, 0.1, [0.5], 500, 1e-2, seed=5, batch_size=128)
        second = monte_carlo_value(self.problem, self.grid, constant_control, 0.1, [0.5], 500, 1e-2, seed=5, batch_size=128)
        self.assertEqual(first, second)

    def test_batch_size_does_not_change_result(self):
        """Test that splitting the same paths into different batches gives the same estimate"""
        args = (self.problem, self.grid, constant_control, 0.1, [0.5], 500, 1e-2)
        whole = monte_carlo_value(*args, seed=5, batch_size=500)
        split = monte_carlo_value(*args, seed=5, batch_size=96)
        np.testing.assert_allclose(split, whole, rtol=1e-12, atol=1e-15)

    def test_exit_adds_boundary_cost(self):
        """Test that paths started next to the wall pay roughly the boundary cost"""
        grid = build_grid(GridSpec(dim=1, lo=[-1.0], hi=[1.0], nx=[31], nt=10, horizon=1.0))
        zero = lambda t, x: np.zeros((x.shape[0], 1))
        mean, _ = monte_carlo_value(self.problem, grid, zero, 0.0, [0.999], n_paths=2000, dt_sim=1e-3, seed=1)
        self.assertGreater(mean, 0.4)
        self.assertLess(mean, 0.55)

    def test_custom_source_without_terminal(self):
        """Test that a unit source with no terminal cost estimates the expected exit time"""
        source = lambda t, x: np.ones(x.shape[0])
        mean, stderr = monte_carlo_value(
            self.problem, self.grid, constant_control, 0.0, [0.0], n_paths=200, dt_sim=1e-2,
            source=source, include_terminal=False,
        )
        self.assertAlmostEqual(mean, 0.5, delta=1e-9)
        self.assertLess(stderr, 1e-9)

    def test_input_checks(self):
        """Test path count, start point and time checks"""
        with self.assertRaises(DomainError):
            monte_carlo_value(self.problem, self.grid, constant_control, 0.0, [0.0], n_paths=10, dt_sim=1e-2)
        with self.assertRaises(DomainError):
            monte_carlo_value(self.problem, self.grid, constant_control, 0.0, [5.0], n_paths=100, dt_sim=1e-2)
        with self.assertRaises(DomainError):
            monte_carlo_value(self.problem, self.grid, constant_control, 0.5, [0.0], n_paths=100, dt_sim=1e-2)


class TestFieldInterpolator(unittest.TestCase):
    """Test cases for control interpolation"""

    def test_linear_field_is_reproduced(self):
        """Test that multilinear interpolation is exact for affine fields and clips outside the hull"""
        grid = build_grid(GridSpec(dim=1, lo=[0.0], hi=[1.0], nx=[9], nt=4, horizon=1.0))
        field = Field.from_function(grid, lambda t, x: 2.0 * x[:, 0] + t)
        evaluate = field_interpolator(field)
        values = evaluate(0.3, np.array([[0.15], [0.55], [0.95]]))
        np.testing.assert_allclose(values[:, 0], [0.6, 1.4, 2.1])
        self.assertTrue(math.isclose(float(evaluate(0.0, np.array([[0.5]]))[0, 0]), 1.0))


if __name__ == "__main__":
    unittest.main()
