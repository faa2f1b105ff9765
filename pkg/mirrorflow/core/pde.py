"""
Parabolic Solver - Policy evaluation and Feynman-Kac functionals
Backward-in-time finite differences for d_t v + L^u v + F = 0 with Dirichlet data on the
parabolic boundary, where L^a v = 1/2 Tr(sigma sigma^T D^2 v) + b^a . grad v.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve, spsolve_triangular

from ..errors import CFLViolation, ConfigError, DomainError, SolverError
from .grid import Field, Grid
from .problem import ControlProblem

logger = logging.getLogger(__name__)

SCHEMES = ("implicit", "explicit")
DRIFT_RULES = ("upwind", "hybrid")
SOLVERS = ("gauss_seidel", "direct")


@dataclass(frozen=True)
class SchemeConfig:
    """Time stepping, drift differencing and inner linear solver.

    ``drift="upwind"`` differences b . grad v one-sidedly in the direction of the drift;
    ``"hybrid"`` switches to central differences where |b_i| dx_i <= (sigma sigma^T)_ii, which
    keeps the matrix an M-matrix and makes the discrete operator second order there.
    """
    scheme: str = "implicit"
    tolerance: float = 1e-10
    max_iterations: int = 10000
    safety: float = 0.9
    drift: str = "upwind"
    solver: str = "gauss_seidel"

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ConfigError(errors)

    def problems(self) -> List[str]:
        errors = []
        if self.scheme not in SCHEMES:
            errors.append(f"scheme.scheme: must be one of {SCHEMES}, got '{self.scheme}'")
        if self.drift not in DRIFT_RULES:
            errors.append(f"scheme.drift: must be one of {DRIFT_RULES}, got '{self.drift}'")
        if self.solver not in SOLVERS:
            errors.append(f"scheme.solver: must be one of {SOLVERS}, got '{self.solver}'")
        if not self.tolerance > 0:
            errors.append("scheme.tolerance: must be positive")
        if self.max_iterations < 1:
            errors.append("scheme.max_iterations: must be at least 1")
        if not 0 < self.safety <= 1:
            errors.append("scheme.safety: must lie in (0, 1]")
        return errors


@dataclass
class StencilWeights:
    """Neighbour weights of the discrete generator at one time level, each (n_nodes, d)"""
    plus: np.ndarray
    minus: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return np.sum(self.plus + self.minus, axis=-1)


class ParabolicSolver:
    """Monotone finite-difference solver for the linear backward equations of one problem on one grid"""

    def __init__(self, problem: ControlProblem, grid: Grid, scheme: Optional[SchemeConfig] = None):
        if problem.dim != grid.dim:
            raise DomainError(f"problem has state dimension {problem.dim}, grid has {grid.dim}")
        self.problem = problem
        self.grid = grid
        self.scheme = scheme or SchemeConfig()
        self.logger = logging.getLogger(__name__)
        self._strides = tuple(int(np.prod(grid.shape[axis + 1:])) for axis in range(grid.dim))

    # -- discrete operator --------------------------------------------------

    def weights(self, n: int, controls: np.ndarray) -> StencilWeights:
        """Generator weights at level n for controls of shape (n_nodes, p)"""
        grid = self.grid
        t = float(grid.times[n])
        cov = self.problem.covariance(t, grid.points)
        if grid.dim > 1:
            off = cov - np.einsum("nii->ni", cov)[..., None] * np.eye(grid.dim)
            if np.max(np.abs(off)) > 1e-12 * max(1.0, float(np.max(np.abs(cov)))):
                raise DomainError("two-dimensional problems need a diagonal sigma sigma^T")
        diag = np.einsum("nii->ni", cov)
        drift = self.problem.drift(t, grid.points, controls)
        dx = grid.dx[None, :]
        diffusion = 0.5 * diag / dx ** 2
        upwind_plus = diffusion + np.maximum(drift, 0.0) / dx
        upwind_minus = diffusion + np.maximum(-drift, 0.0) / dx
        if self.scheme.drift == "upwind":
            return StencilWeights(upwind_plus, upwind_minus)
        central = np.abs(drift) * dx <= diag
        plus = np.where(central, diffusion + 0.5 * drift / dx, upwind_plus)
        minus = np.where(central, diffusion - 0.5 * drift / dx, upwind_minus)
        return StencilWeights(plus, minus)

    def apply(self, weights: StencilWeights, padded: np.ndarray) -> np.ndarray:
        """(L v) at interior nodes from a padded level array, flattened to (n_nodes,)"""
        grid = self.grid
        centre = padded[grid.interior_slice()].reshape(-1)
        result = np.zeros(grid.n_nodes)
        for axis in range(grid.dim):
            up = grid.neighbor_values(padded, axis, +1).reshape(-1)
            down = grid.neighbor_values(padded, axis, -1).reshape(-1)
            result += weights.plus[:, axis] * (up - centre) + weights.minus[:, axis] * (down - centre)
        return result

    def boundary_inflow(self, weights: StencilWeights, padded: np.ndarray) -> np.ndarray:
        """Contribution of boundary neighbours to L v, (n_nodes,)"""
        grid = self.grid
        inflow = np.zeros(grid.n_nodes)
        for axis in range(grid.dim):
            for sign, w in ((+1, weights.plus), (-1, weights.minus)):
                mask = grid.touches_boundary(axis, sign).reshape(-1)
                values = grid.neighbor_values(padded, axis, sign).reshape(-1)
                inflow += np.where(mask, w[:, axis] * values, 0.0)
        return inflow

    def system_matrix(self, weights: StencilWeights) -> sparse.csr_matrix:
        """I - dt L restricted to interior unknowns"""
        grid = self.grid
        dt = grid.dt
        n_nodes = grid.n_nodes
        index = np.arange(n_nodes)
        rows = [index]
        cols = [index]
        vals = [1.0 + dt * weights.total]
        for axis in range(grid.dim):
            for sign, w in ((+1, weights.plus), (-1, weights.minus)):
                keep = ~grid.touches_boundary(axis, sign).reshape(-1)
                rows.append(index[keep])
                cols.append(index[keep] + sign * self._strides[axis])
                vals.append(-dt * w[keep, axis])
        matrix = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_nodes, n_nodes)
        )
        return matrix.tocsr()

    def solve_linear(
        self,
        matrix: sparse.csr_matrix,
        rhs: np.ndarray,
        guess: np.ndarray,
        stage: str,
        tolerance: Optional[float] = None,
    ) -> np.ndarray:
        """Solve matrix x = rhs; ``tolerance`` is an absolute bound on the Gauss-Seidel residual.

        Without it the sweeps stop at scheme.tolerance * max(1, |rhs|). The implicit matrices have
        row sums >= 1, so the error in x never exceeds the residual.
        """
        if self.scheme.solver == "direct":
            solution = spsolve(matrix.tocsc(), rhs)
        else:
            if tolerance is None:
                tolerance = self.scheme.tolerance * max(1.0, float(np.max(np.abs(rhs))))
            solution = self._gauss_seidel(matrix, rhs, guess, stage, tolerance)
        if not np.all(np.isfinite(solution)):
            raise SolverError("linear solve produced non-finite values", stage=stage)
        return solution

    def _gauss_seidel(
        self, matrix: sparse.csr_matrix, rhs: np.ndarray, guess: np.ndarray, stage: str, tolerance: float
    ) -> np.ndarray:
        lower = sparse.tril(matrix, format="csr")
        upper = sparse.triu(matrix, k=1, format="csr")
        # residuals below this are rounding noise
        row_norm = float(abs(matrix).sum(axis=1).max())
        floor = 8.0 * np.finfo(float).eps * row_norm * max(1.0, float(np.max(np.abs(rhs))))
        target = max(tolerance, floor)
        x = np.array(guess, dtype=float)
        residual = np.abs(matrix @ x - rhs)
        for sweep in range(self.scheme.max_iterations):
            x = spsolve_triangular(lower, rhs - upper @ x, lower=True)
            residual = np.abs(matrix @ x - rhs)
            if float(np.max(residual)) <= target:
                self.logger.debug(f"Gauss-Seidel converged in {sweep + 1} sweeps")
                return x
        worst = np.unravel_index(int(np.argmax(residual)), self.grid.shape)
        raise SolverError(
            f"Gauss-Seidel did not converge in {self.scheme.max_iterations} sweeps "
            f"(residual {float(np.max(residual)):.3e} > {target:.3e})",
            stage=stage,
            node=tuple(int(i) for i in worst),
        )

    # -- time stepping --------------------------------------------------------

    def implicit_step(
        self, n: int, controls: np.ndarray, source: np.ndarray, next_level: np.ndarray, boundary: np.ndarray,
        stage: str = "policy evaluation", tolerance: Optional[float] = None,
    ) -> np.ndarray:
        """Solve (I - dt L^n) V^n = V^{n+1} + dt (F^n + boundary inflow) for the interior of level n"""
        weights = self.weights(n, controls)
        interior = next_level[self.grid.interior_slice()].reshape(-1)
        rhs = interior + self.grid.dt * (source + self.boundary_inflow(weights, boundary))
        return self.solve_linear(self.system_matrix(weights), rhs, interior, stage, tolerance)

    def generator_residual(
        self, n: int, controls: np.ndarray, level: np.ndarray, next_level: np.ndarray, source: np.ndarray
    ) -> np.ndarray:
        """(V^{n+1} - V^n)/dt + L^n V^n + F^n at interior nodes, for padded levels n and n+1"""
        inner = self.grid.interior_slice()
        dt_term = (next_level[inner].reshape(-1) - level[inner].reshape(-1)) / self.grid.dt
        return dt_term + self.apply(self.weights(n, controls), level) + source

    def check_cfl(self, weights: StencilWeights, n: int) -> None:
        ratio = self.grid.dt * float(np.max(weights.total))
        if ratio > self.scheme.safety:
            worst = np.unravel_index(int(np.argmax(weights.total)), self.grid.shape)
            raise CFLViolation(
                f"explicit step dt={self.grid.dt:.3e} gives dt*max(weights)={ratio:.3f} > safety {self.scheme.safety}",
                stage="explicit step",
                node=(n,) + tuple(int(i) for i in worst),
            )

    def solve_backward(
        self,
        controls: Field,
        source: Callable[[int, np.ndarray], np.ndarray],
        boundary: np.ndarray,
        stage: str = "policy evaluation",
    ) -> Field:
        """March from the terminal level; boundary is the padded Dirichlet data used at every level"""
        grid = self.grid
        data = np.empty((grid.nt + 1,) + grid.padded_shape)
        data[grid.nt] = boundary
        inner = grid.interior_slice()
        for n in range(grid.nt - 1, -1, -1):
            level = np.array(boundary, dtype=float)
            if self.scheme.scheme == "implicit":
                u_n = controls.level(n)
                values = self.implicit_step(n, u_n, source(n, u_n), data[n + 1], boundary, stage)
            else:
                u_next = controls.level(n + 1)
                weights = self.weights(n + 1, u_next)
                self.check_cfl(weights, n + 1)
                current = data[n + 1][inner].reshape(-1)
                values = current + grid.dt * (self.apply(weights, data[n + 1]) + source(n + 1, u_next))
            level[inner] = values.reshape(grid.shape)
            data[n] = level
        return Field(grid, data[..., None], with_boundary=True).check_finite(stage)

    def padded_terminal(self) -> np.ndarray:
        return self.problem.terminal_cost(self.grid.boundary_points()).reshape(self.grid.padded_shape)


def _check_controls(problem: ControlProblem, grid: Grid, u: Field) -> None:
    if u.with_boundary or u.components != problem.p:
        raise DomainError(f"control field must be interior with {problem.p} components")
    values = u.interior.reshape(-1, problem.p)
    if not np.all(np.isfinite(values)):
        raise DomainError("control field has non-finite entries")
    admissible = problem.mirror.is_interior(values) if problem.tau > 0 else problem.mirror.in_closure(values)
    if not np.all(admissible):
        bad = int(np.argmin(admissible))
        raise DomainError(f"control leaves the admissible set at flat node {bad}: {values[bad].tolist()}")


def policy_source(problem: ControlProblem, grid: Grid) -> Callable[[int, np.ndarray], np.ndarray]:
    """f^u + tau rho^u at a level"""

    def source(n: int, controls: np.ndarray) -> np.ndarray:
        t = float(grid.times[n])
        value = problem.running_cost(t, grid.points, controls)
        if problem.tau > 0:
            value = value + problem.tau * problem.regularizer(t, grid.points, controls)
        return value

    return source


def evaluate_policy(
    problem: ControlProblem, grid: Grid, u: Field, scheme: Optional[SchemeConfig] = None
) -> Field:
    """Value of the Markov control u: V = g on the parabolic boundary, source f^u + tau rho^u"""
    _check_controls(problem, grid, u)
    solver = ParabolicSolver(problem, grid, scheme)
    value = solver.solve_backward(u, policy_source(problem, grid), solver.padded_terminal())
    logger.debug(f"Evaluated policy on {grid.n_nodes} nodes x {grid.nt + 1} levels")
    return value


def feynman_kac(
    problem: ControlProblem, grid: Grid, u: Field, F: Field, scheme: Optional[SchemeConfig] = None,
    stage: str = "feynman-kac",
) -> Field:
    """Expected integral of F along the u-controlled dynamics up to the exit time; zero boundary data"""
    _check_controls(problem, grid, u)
    if F.with_boundary or F.components != 1:
        raise DomainError("feynman_kac needs a scalar interior source field")
    if not np.all(np.isfinite(F.data)):
        raise DomainError("feynman_kac source has non-finite entries")
    solver = ParabolicSolver(problem, grid, scheme)
    flat = F.data.reshape(grid.nt + 1, -1)
    zeros = np.zeros(grid.padded_shape)
    return solver.solve_backward(u, lambda n, controls: flat[n], zeros, stage)


def apply_generator(
    problem: ControlProblem, grid: Grid, u: Field, v: Field, scheme: Optional[SchemeConfig] = None
) -> Field:
    """L^{u_n} v_n at every level and interior node, using the boundary data of v"""
    if not v.with_boundary:
        raise DomainError("apply_generator needs a value field with boundary data")
    solver = ParabolicSolver(problem, grid, scheme)
    levels = []
    for n in range(grid.nt + 1):
        weights = solver.weights(n, u.level(n))
        levels.append(solver.apply(weights, v.data[n, ..., 0]))
    return Field.from_levels(grid, levels)


def diagonal_dominance(
    problem: ControlProblem, grid: Grid, u: Field, scheme: Optional[SchemeConfig] = None
) -> Tuple[float, float]:
    """(smallest row margin |a_kk| - sum |a_kj|, smallest off-diagonal weight) of the implicit matrices"""
    solver = ParabolicSolver(problem, grid, scheme)
    margin = np.inf
    weight = np.inf
    for n in range(grid.nt):
        weights = solver.weights(n, u.level(n))
        matrix = solver.system_matrix(weights)
        diagonal = matrix.diagonal()
        off = abs(matrix - sparse.diags(diagonal)).sum(axis=1).A1
        margin = min(margin, float(np.min(np.abs(diagonal) - off)))
        weight = min(weight, float(min(np.min(weights.plus), np.min(weights.minus))))
    return margin, weight
