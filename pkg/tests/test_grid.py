"""
Unit tests for grids and fields
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from mirrorflow.core.grid import Field, GridSpec, build_grid, level_gradient, spatial_gradient
from mirrorflow.errors import GridError, SolverError


class TestGridSpec(unittest.TestCase):
    """Test cases for GridSpec validation"""

    def test_valid_spec_normalizes_tuples(self):
        """Test that list inputs become tuples of the right type"""
        spec = GridSpec(dim=1, lo=[-1], hi=[1], nx=[9], nt=10, horizon=1.0)
        self.assertEqual(spec.lo, (-1.0,))
        self.assertEqual(spec.nx, (9,))

    def test_rejects_inverted_bounds(self):
        """Test that hi <= lo is an error"""
        with self.assertRaises(GridError):
            GridSpec(dim=1, lo=[1.0], hi=[0.0], nx=[9], nt=10, horizon=1.0)

    def test_rejects_too_few_nodes(self):
        """Test the minimum interior node and level counts"""
        with self.assertRaises(GridError):
            GridSpec(dim=1, lo=[0.0], hi=[1.0], nx=[2], nt=10, horizon=1.0)
        with self.assertRaises(GridError):
            GridSpec(dim=1, lo=[0.0], hi=[1.0], nx=[5], nt=1, horizon=1.0)

    def test_rejects_dimension_mismatch(self):
        """Test that bounds must match dim"""
        with self.assertRaises(GridError):
            GridSpec(dim=2, lo=[0.0], hi=[1.0], nx=[5], nt=10, horizon=1.0)

    def test_rejects_three_dimensions(self):
        """Test that only one and two space dimensions are supported"""
        with self.assertRaises(GridError):
            GridSpec(dim=3, lo=[0, 0, 0], hi=[1, 1, 1], nx=[3, 3, 3], nt=4, horizon=1.0)


class TestGrid(unittest.TestCase):
    """Test cases for built grids"""

    def setUp(self):
        """Set up test fixtures"""
        self.grid = build_grid(GridSpec(dim=1, lo=[0.0], hi=[1.0], nx=[9], nt=10, horizon=2.0))
        self.grid2 = build_grid(GridSpec(dim=2, lo=[-1.0, 0.0], hi=[1.0, 1.0], nx=[5, 4], nt=4, horizon=1.0))

    def test_steps_and_points(self):
        """Test spacing, time steps and interior coordinates"""
        self.assertAlmostEqual(float(self.grid.dx[0]), 0.1)
        self.assertAlmostEqual(self.grid.dt, 0.2)
        self.assertEqual(self.grid.points.shape, (9, 1))
        np.testing.assert_allclose(self.grid.points[:, 0], np.linspace(0.1, 0.9, 9))
        self.assertEqual(self.grid2.points.shape, (20, 2))
        self.assertEqual(self.grid2.padded_shape, (7, 6))

    def test_parabolic_boundary(self):
        """Test that the terminal level is entirely boundary and earlier levels only laterally"""
        boundary = self.grid.parabolic_boundary
        self.assertTrue(np.all(boundary[-1]))
        self.assertTrue(boundary[0, 0] and boundary[0, -1])
        self.assertFalse(np.any(boundary[0, 1:-1]))
        self.assertEqual(int(np.sum(~self.grid2.lateral_boundary)), 20)

    def test_locate_nearest_node(self):
        """Test nearest-level and nearest-node lookup"""
        level, index = self.grid.locate(0.41, [0.52])
        self.assertEqual(level, 2)
        self.assertEqual(index, (4,))

    def test_locate_outside_domain(self):
        """Test that points outside the open box are rejected"""
        with self.assertRaises(GridError):
            self.grid.locate(0.0, [1.0])
        with self.assertRaises(GridError):
            self.grid.locate(3.0, [0.5])

    def test_neighbor_values(self):
        """Test neighbour extraction over the padded level"""
        padded = np.arange(11, dtype=float)
        np.testing.assert_array_equal(self.grid.neighbor_values(padded, 0, +1), np.arange(2, 11))
        np.testing.assert_array_equal(self.grid.neighbor_values(padded, 0, -1), np.arange(0, 9))


class TestField(unittest.TestCase):
    """Test cases for Field"""

    def setUp(self):
        """Set up test fixtures"""
        self.grid = build_grid(GridSpec(dim=1, lo=[0.0], hi=[1.0], nx=[9], nt=4, horizon=1.0))
        self.grid2 = build_grid(GridSpec(dim=2, lo=[0.0, 0.0], hi=[1.0, 2.0], nx=[7, 9], nt=3, horizon=1.0))

    def test_shape_is_checked(self):
        """Test that data must match the grid layout"""
        with self.assertRaises(GridError):
            Field(self.grid, np.zeros((5, 8, 1)))
        field = Field(self.grid, np.zeros((5, 9)))
        self.assertEqual(field.components, 1)

    def test_data_is_read_only(self):
        """Test that stored data cannot be mutated in place"""
        field = Field.zeros(self.grid, 2)
        with self.assertRaises(ValueError):
            field.data[0, 0, 0] = 1.0

    def test_with_boundary_interior(self):
        """Test the interior view of a value field"""
        field = Field.from_function(self.grid, lambda t, x: x[:, 0] + t, with_boundary=True)
        self.assertEqual(field.data.shape, (5, 11, 1))
        np.testing.assert_allclose(field.interior[0, :, 0], self.grid.points[:, 0])

    def test_gradient_of_quadratic_is_exact(self):
        """Test that central differences are exact for quadratics in 2D"""
        v = Field.from_function(self.grid2, lambda t, x: x[:, 0] ** 2 + 3.0 * x[:, 1] ** 2, with_boundary=True)
        grad = spatial_gradient(v)
        expected = np.stack([2.0 * self.grid2.points[:, 0], 6.0 * self.grid2.points[:, 1]], axis=-1)
        np.testing.assert_allclose(grad.level(1), expected, atol=1e-12)
        np.testing.assert_allclose(level_gradient(v.data[1, ..., 0], self.grid2), expected, atol=1e-12)

    def test_gradient_is_second_order(self):
        """Test that halving dx cuts the gradient error of sin(x) by a factor near 4"""
        errors = []
        for nx in (31, 63):
            grid = build_grid(GridSpec(dim=1, lo=[-2.0], hi=[2.0], nx=[nx], nt=2, horizon=1.0))
            v = Field.from_function(grid, lambda t, x: np.sin(x[:, 0]), with_boundary=True)
            error = spatial_gradient(v).level(0)[:, 0] - np.cos(grid.points[:, 0])
            errors.append(float(np.max(np.abs(error))))
        factor = errors[0] / errors[1]
        self.assertGreaterEqual(factor, 3.5)
        self.assertLessEqual(factor, 4.5)

    def test_gradient_needs_boundary(self):
        """Test that interior-only fields cannot be differentiated"""
        with self.assertRaises(GridError):
            spatial_gradient(Field.zeros(self.grid))

    def test_check_finite_reports_node(self):
        """Test that a NaN is reported with its node"""
        field = Field.zeros(self.grid).with_value(2, (3,), 0, np.nan)
        with self.assertRaises(SolverError) as ctx:
            field.check_finite("test")
        self.assertEqual(ctx.exception.node, (2, 3, 0))
        self.assertEqual(ctx.exception.stage, "test")

    def test_arithmetic(self):
        """Test addition, subtraction and scaling"""
        a = Field.from_function(self.grid, lambda t, x: x[:, 0])
        b = a.scaled(3.0) - a + a
        np.testing.assert_allclose(b.data, 3.0 * a.data)

    def test_csv_reload(self):
        """Test that a CSV dump reloads to the same values"""
        field = Field.from_function(
            self.grid2, lambda t, x: np.stack([np.sin(x[:, 0] + t), x[:, 1] / 3.0], axis=-1)
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "field.csv"
            field.to_csv(path)
            header = path.read_text().splitlines()[0]
            self.assertEqual(header, "t,x1,x2,c0,c1")
            loaded = Field.from_csv(self.grid2, path)
        np.testing.assert_array_equal(loaded.data, field.data)

    def test_csv_wrong_grid(self):
        """Test that a dump from another grid is rejected"""
        field = Field.zeros(self.grid)
        other = build_grid(GridSpec(dim=1, lo=[0.0], hi=[1.0], nx=[5], nt=4, horizon=1.0))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "field.csv"
            field.to_csv(path)
            with self.assertRaises(GridError):
                Field.from_csv(other, path)


if __name__ == "__main__":
    unittest.main()
