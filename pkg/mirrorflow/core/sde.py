"""
Monte Carlo Oracle - Euler-Maruyama estimates of controlled value functionals
Simulates dX = b(t, X, u(t, X)) dt + sigma dW from (t, x) until the first exit from the box
or the horizon, accumulating running cost and adding the boundary cost at the stopping point.
Path i draws all of its increments from its own stream, so estimates do not depend on the batch size.

Exit detection is discrete in time (no Brownian-bridge correction), so estimates carry an
O(sqrt(dt_sim)) bias near the boundary.
"""

import logging
import math
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..errors import DomainError
from .grid import Field, Grid
from .problem import ControlProblem

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1

NodeFunction = Callable[[float, np.ndarray], np.ndarray]


def splitmix64(i: int) -> int:
    """SplitMix64 output for counter i"""
    z = (int(i) * 0x9E3779B97F4A7C15 + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Independent stream for path i: seed xor splitmix64(i)"""
    return np.random.default_rng((int(seed) & MASK64) ^ splitmix64(path))


def field_interpolator(field: Field) -> NodeFunction:
    """Multilinear interpolation of an interior field in (t, x); queries are clipped to the node hull"""
    grid = field.grid
    interpolator = RegularGridInterpolator((grid.times,) + tuple(grid.axes), field.interior, method="linear")
    lo = np.array([axis[0] for axis in grid.axes])
    hi = np.array([axis[-1] for axis in grid.axes])

    def evaluate(t: float, x: np.ndarray) -> np.ndarray:
        clipped = np.clip(x, lo, hi)
        times = np.full((clipped.shape[0], 1), min(max(t, 0.0), grid.spec.horizon))
        return interpolator(np.hstack([times, clipped]))

    return evaluate


def _as_function(value: Union[Field, NodeFunction, None]) -> Optional[NodeFunction]:
    if value is None or callable(value):
        return value
    return field_interpolator(value)


def monte_carlo_value(
    problem: ControlProblem,
    grid: Grid,
    u: Union[Field, NodeFunction],
    t: float,
    x,
    n_paths: int,
    dt_sim: float,
    seed: int = 0,
    batch_size: int = 4096,
    source: Union[Field, NodeFunction, None] = None,
    include_terminal: bool = True,
) -> Tuple[float, float]:
    """Mean and standard error of the cost functional started at (t, x).

    ``source`` replaces the running cost f^u + tau rho^u (e.g. a Feynman-Kac integrand) and
    ``include_terminal=False`` drops the boundary cost.
    """
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    if not grid.contains(x0):
        raise DomainError(f"start point {x0.tolist()} is not inside the domain")
    if not 0 <= t < grid.spec.horizon:
        raise DomainError(f"start time {t} outside [0, {grid.spec.horizon})")
    if n_paths < 100:
        raise DomainError(f"monte_carlo_value needs at least 100 paths, got {n_paths}")
    if not dt_sim > 0:
        raise DomainError("dt_sim must be positive")

    control = _as_function(u)
    running = _as_function(source)
    lo = np.asarray(grid.spec.lo)
    hi = np.asarray(grid.spec.hi)
    remaining = grid.spec.horizon - t
    n_steps = max(1, int(math.ceil(remaining / dt_sim - 1e-12)))
    m = problem.diffusion(t, x0[None, :]).shape[-1]

    totals = []
    n_batches = int(math.ceil(n_paths / batch_size))
    for batch in range(n_batches):
        size = min(batch_size, n_paths - batch * batch_size)
        first = batch * batch_size
        # (n_steps, size, m) increments, one stream per path
        increments = np.stack(
            [path_rng(seed, first + i).standard_normal((n_steps, m)) for i in range(size)], axis=1
        )
        state = np.repeat(x0[None, :], size, axis=0)
        cost = np.zeros(size)
        alive = np.ones(size, dtype=bool)
        clock = t
        for step in range(n_steps):
            h = min(dt_sim, grid.spec.horizon - clock)
            if h <= 0 or not np.any(alive):
                break
            idx = np.flatnonzero(alive)
            pos = state[idx]
            actions = control(clock, pos)
            if running is None:
                rate = problem.running_cost(clock, pos, actions)
                if problem.tau > 0:
                    rate = rate + problem.tau * problem.regularizer(clock, pos, actions)
            else:
                rate = np.asarray(running(clock, pos), dtype=float).reshape(-1)
            sigma = problem.diffusion(clock, pos)
            noise = increments[step, idx] * math.sqrt(h)
            proposal = pos + problem.drift(clock, pos, actions) * h + np.einsum("nij,nj->ni", sigma, noise)

            # fraction of the step spent inside the box
            delta = proposal - pos
            with np.errstate(divide="ignore", invalid="ignore"):
                below = np.where(proposal <= lo, (lo - pos) / delta, 1.0)
                above = np.where(proposal >= hi, (hi - pos) / delta, 1.0)
            fraction = np.clip(np.min(np.minimum(below, above), axis=-1), 0.0, 1.0)
            exited = np.any((proposal <= lo) | (proposal >= hi), axis=-1)

            cost[idx] += rate * np.where(exited, fraction, 1.0) * h
            state[idx] = np.where(exited[:, None], pos + fraction[:, None] * delta, proposal)
            alive[idx[exited]] = False
            clock += h

        if include_terminal:
            cost += problem.terminal_cost(state)
        totals.append(cost)

    values = np.concatenate(totals)
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size))
    logger.debug(f"Monte Carlo at t={t:.3g} x={x0.tolist()}: {mean:.6g} +/- {stderr:.2g} ({values.size} paths)")
    return mean, stderr
