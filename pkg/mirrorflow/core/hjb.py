"""
HJB Solver - Optimal value and control by policy iteration
Backward sweep over time levels; at each level a Howard loop alternates pointwise
Hamiltonian minimization and implicit linear solves with the frozen minimizer.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import SolverError
from .grid import Field, Grid, level_gradient
from .mirror import MirrorMap
from .pde import ParabolicSolver, SchemeConfig, policy_source
from .problem import ControlProblem

logger = logging.getLogger(__name__)


@dataclass
class HJBSolution:
    """Optimal value (with boundary data), optimal control and convergence record"""
    value: Field
    control: Field
    rounds: List[int] = field(default_factory=list)
    residual: float = 0.0
    approximate: bool = False

    @property
    def max_rounds(self) -> int:
        return max(self.rounds) if self.rounds else 0


@dataclass
class ClampedDual:
    """Dual field grad_psi(clamped u*) and how much clamping moved the control"""
    dual: Field
    clamped: bool
    magnitude: float
    nodes: int


class HJBSolver:
    """Howard policy iteration per time level, reusing the monotone linear operator"""

    def __init__(
        self,
        problem: ControlProblem,
        grid: Grid,
        scheme: Optional[SchemeConfig] = None,
        tolerance: float = 1e-9,
        max_rounds: int = 100,
    ):
        self.problem = problem
        self.grid = grid
        # policy iteration always steps implicitly
        base = scheme or SchemeConfig()
        self.scheme = SchemeConfig(
            scheme="implicit",
            tolerance=base.tolerance,
            max_iterations=base.max_iterations,
            safety=base.safety,
            drift=base.drift,
            solver=base.solver,
        )
        self.tolerance = tolerance
        self.max_rounds = max_rounds
        self.linear = ParabolicSolver(problem, grid, self.scheme)
        self.logger = logging.getLogger(__name__)

    def argmin(self, n: int, padded: np.ndarray) -> np.ndarray:
        z = level_gradient(padded, self.grid)
        _, actions = self.problem.min_hamiltonian(float(self.grid.times[n]), self.grid.points, z)
        return actions

    def solve(self) -> HJBSolution:
        grid = self.grid
        inner = grid.interior_slice()
        source = policy_source(self.problem, grid)
        boundary = self.linear.padded_terminal()
        # absolute Gauss-Seidel residual, an order below the Howard tolerance once divided by dt
        linear_tolerance = 0.1 * self.tolerance * grid.dt

        values = np.empty((grid.nt + 1,) + grid.padded_shape)
        controls = np.empty((grid.nt + 1, grid.n_nodes, self.problem.p))
        values[grid.nt] = boundary
        controls[grid.nt] = self.argmin(grid.nt, boundary)
        rounds = []

        for n in range(grid.nt - 1, -1, -1):
            iterate = np.array(values[n + 1], dtype=float)
            for k in range(1, self.max_rounds + 1):
                actions = self.argmin(n, iterate)
                solution = self.linear.implicit_step(
                    n, actions, source(n, actions), values[n + 1], boundary,
                    stage="hjb", tolerance=linear_tolerance,
                )
                previous = iterate[inner].reshape(-1)
                change = np.abs(solution - previous)
                iterate = np.array(boundary, dtype=float)
                iterate[inner] = solution.reshape(grid.shape)
                self.logger.debug(f"HJB level {n} round {k}: sup change {np.max(change):.3e}")
                if np.max(change) <= self.tolerance:
                    break
            else:
                worst = np.unravel_index(int(np.argmax(change)), grid.shape)
                raise SolverError(
                    f"policy iteration did not converge in {self.max_rounds} rounds at level {n}",
                    stage="hjb",
                    node=(n,) + tuple(int(i) for i in worst),
                )
            values[n] = iterate
            controls[n] = actions
            rounds.append(k)

        value = Field(grid, values[..., None], with_boundary=True).check_finite("hjb")
        control = Field.from_levels(grid, list(controls)).check_finite("hjb")
        residual = self.bellman_residual(value, control)
        rounds.reverse()
        self.logger.info(
            f"HJB solved: {grid.nt} levels, at most {max(rounds)} policy rounds, Bellman residual {residual:.3e}"
        )
        return HJBSolution(value, control, rounds, residual, approximate=not self.problem.closed_form)

    def bellman_residual(self, value: Field, control: Field) -> float:
        """sup over interior nodes and levels n < nt of |(V^{n+1} - V^n)/dt + L^{u_n} V^n + F^{u_n}|

        This is the residual of the discrete equation actually solved: the configured drift rule and
        the converged Howard policy u_n of each level. Its size is set by the linear-solve tolerance.
        """
        grid = self.grid
        source = policy_source(self.problem, grid)
        worst = 0.0
        for n in range(grid.nt):
            actions = control.level(n)
            residual = self.linear.generator_residual(
                n, actions, value.data[n, ..., 0], value.data[n + 1, ..., 0], source(n, actions)
            )
            worst = max(worst, float(np.max(np.abs(residual))))
        return worst


def solve_hjb(
    problem: ControlProblem,
    grid: Grid,
    scheme: Optional[SchemeConfig] = None,
    tolerance: float = 1e-9,
    max_rounds: int = 100,
) -> HJBSolution:
    """Optimal value V* and control u* on the grid"""
    return HJBSolver(problem, grid, scheme, tolerance, max_rounds).solve()


def optimal_dual(mirror: MirrorMap, ustar: Field, clamp: float = 1e-6) -> ClampedDual:
    """Z* = grad_psi(u*) after pulling controls within clamp of the boundary inside"""
    values = ustar.interior.reshape(-1, ustar.components)
    clamped, fired = mirror.clamp_to_interior(values, clamp)
    magnitude = float(np.max(np.linalg.norm(clamped - values, axis=-1))) if np.any(fired) else 0.0
    dual = mirror.grad_psi(clamped).reshape(ustar.interior.shape)
    if np.any(fired):
        logger.info(f"Clamped {int(np.sum(fired))} optimal controls by at most {magnitude:.3e}")
    return ClampedDual(Field(ustar.grid, dual), bool(np.any(fired)), magnitude, int(np.sum(fired)))
