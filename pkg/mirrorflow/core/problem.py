"""
Control Problems - Coefficients and Hamiltonians
Drift, diffusion, costs and the entropic/barrier regularization of a controlled diffusion,
together with the pre-minimized Hamiltonian H and its pointwise minimum.

Every operation is vectorized over nodes: t is a scalar time, x is (n, d), z is (n, d)
and actions a are (n, p).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from ..errors import DomainError, SolverError
from .mirror import BallMirror, MirrorMap, SimplexMirror

logger = logging.getLogger(__name__)

# generic inner minimizer settings
INNER_ITERATIONS = 200
INNER_TOLERANCE = 1e-10


def _rows(values: np.ndarray, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values.reshape(-1, width) if values.size != width else values[None, :]
    return values


class ControlProblem(ABC):
    """Coefficients b, sigma, f, g with regularization weight tau and a mirror geometry"""

    kind = "abstract"
    closed_form = False

    def __init__(self, dim: int, mirror: MirrorMap, tau: float = 0.0, kappa: float = 1e-8):
        if tau < 0:
            raise DomainError(f"tau must be non-negative, got {tau}")
        if kappa <= 0:
            raise DomainError(f"ellipticity constant must be positive, got {kappa}")
        self.dim = dim
        self.mirror = mirror
        self.tau = float(tau)
        self.kappa = float(kappa)
        self.logger = logging.getLogger(__name__)

    @property
    def p(self) -> int:
        return self.mirror.p

    # -- coefficients -------------------------------------------------------

    @abstractmethod
    def drift(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """b(t, x, a), shape (n, d)"""

    @abstractmethod
    def drift_jacobian(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Derivative of b in a, shape (n, d, p)"""

    @abstractmethod
    def diffusion(self, t: float, x: np.ndarray) -> np.ndarray:
        """sigma(t, x), shape (n, d, d')"""

    @abstractmethod
    def running_cost(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """f(t, x, a), shape (n,)"""

    @abstractmethod
    def cost_gradient(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Derivative of f in a, shape (n, p)"""

    @abstractmethod
    def terminal_cost(self, x: np.ndarray) -> np.ndarray:
        """g(x) on the parabolic boundary, shape (n,)"""

    def reference_control(self, t: float, x: np.ndarray) -> np.ndarray:
        """u0(t, x); the centre of A unless overridden"""
        x = _rows(x, self.dim)
        if isinstance(self.mirror, SimplexMirror):
            return np.full((x.shape[0], self.p), 1.0 / self.p)
        return np.zeros((x.shape[0], self.p))

    def covariance(self, t: float, x: np.ndarray) -> np.ndarray:
        """sigma sigma^T, shape (n, d, d)"""
        sigma = self.diffusion(t, _rows(x, self.dim))
        return np.einsum("nij,nkj->nik", sigma, sigma)

    # -- Hamiltonian ----------------------------------------------------------

    def regularizer(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """rho^a(t, x) = D_psi(a | u0(t, x))"""
        return self.mirror.bregman_psi(a, self.reference_control(t, x))

    def hamiltonian(self, t: float, x: np.ndarray, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        """H(t, x, z, a) = b.z + f + tau rho^a"""
        x = _rows(x, self.dim)
        z = _rows(z, self.dim)
        a = _rows(a, self.p)
        if not np.all(self.mirror.in_closure(a)):
            raise DomainError("hamiltonian needs actions in the closure of A")
        value = np.sum(self.drift(t, x, a) * z, axis=-1) + self.running_cost(t, x, a)
        if self.tau > 0:
            value = value + self.tau * self.regularizer(t, x, a)
        return value

    def grad_a_hamiltonian(self, t: float, x: np.ndarray, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Gradient of H in a at strictly interior actions"""
        x = _rows(x, self.dim)
        z = _rows(z, self.dim)
        a = _rows(a, self.p)
        grad = np.einsum("ndp,nd->np", self.drift_jacobian(t, x, a), z) + self.cost_gradient(t, x, a)
        if self.tau > 0:
            reference = self.reference_control(t, x)
            grad = grad + self.tau * (self.mirror.grad_psi(a) - self.mirror.grad_psi(reference))
        return grad

    def min_hamiltonian(self, t: float, x: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(inf_a H, argmin) per node; generic problems use projected gradient descent"""
        return self._approximate_minimum(t, _rows(x, self.dim), _rows(z, self.dim))

    def _approximate_minimum(self, t: float, x: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # projected gradient with Armijo backtracking, one step length per node
        eps = 1e-12 if self.tau > 0 else 0.0
        a, _ = self.mirror.clamp_to_interior(self.reference_control(t, x), 1e-6)
        value = self.hamiltonian(t, x, z, a)
        step = np.ones(x.shape[0])
        for iteration in range(INNER_ITERATIONS):
            grad = self.grad_a_hamiltonian(t, x, z, a)
            moved = np.zeros(x.shape[0])
            active = np.ones(x.shape[0], dtype=bool)
            for _ in range(40):
                trial = self.mirror.project(a - step[:, None] * grad)
                if eps > 0:
                    trial, _ = self.mirror.clamp_to_interior(trial, eps)
                trial_value = self.hamiltonian(t, x, z, trial)
                decrease = np.sum(grad * (a - trial), axis=-1)
                accepted = np.isfinite(trial_value) & (trial_value <= value - 1e-4 * decrease)
                update = active & accepted
                moved[update] = np.max(np.abs(trial - a), axis=-1)[update]
                a[update] = trial[update]
                value[update] = trial_value[update]
                active &= ~accepted
                if not np.any(active):
                    break
                step[active] *= 0.5
            step = np.minimum(2.0 * step, 1e3)
            if np.max(moved) <= INNER_TOLERANCE:
                break
        else:
            self.logger.debug(f"Approximate minimizer stopped after {INNER_ITERATIONS} iterations")
        return value, a

    # -- structure ------------------------------------------------------------

    def relative_convexity(self) -> float:
        """lambda for which H is (lambda/2) D_psi relatively strongly convex in a"""
        return 2.0 * self.tau

    def drift_bound(self, t: float, x: np.ndarray) -> np.ndarray:
        """Upper bound on sup_a |b(t, x, a)|, estimated from interior samples"""
        x = _rows(x, self.dim)
        samples = self.mirror.sample_interior(np.random.default_rng(0), 256)
        bound = np.zeros(x.shape[0])
        for a in samples:
            actions = np.repeat(a[None, :], x.shape[0], axis=0)
            bound = np.maximum(bound, np.linalg.norm(self.drift(t, x, actions), axis=-1))
        return bound

    def hamiltonian_growth_bound(self, t: float, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(intercept, slope) with |inf_a H(t, x, z)| <= intercept + slope |z| for every z"""
        x = _rows(x, self.dim)
        value, _ = self.min_hamiltonian(t, x, np.zeros_like(x))
        return np.abs(value), self.drift_bound(t, x)

    def check_ellipticity(self, times: np.ndarray, points: np.ndarray) -> float:
        """Smallest eigenvalue of sigma sigma^T over the sampled nodes; raises below kappa"""
        smallest = np.inf
        for t in np.atleast_1d(times):
            eig = np.linalg.eigvalsh(self.covariance(float(t), points))
            smallest = min(smallest, float(np.min(eig)))
        if smallest < self.kappa:
            raise DomainError(f"sigma sigma^T has eigenvalue {smallest:.3e} below kappa={self.kappa:.3e}")
        return smallest

    def check_reference(self, times: np.ndarray, points: np.ndarray) -> None:
        for t in np.atleast_1d(times):
            if not np.all(self.mirror.is_interior(self.reference_control(float(t), points))):
                raise DomainError(f"reference control leaves the interior of A at t={float(t):.4g}")

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "tau": self.tau, "mirror": self.mirror.describe()}


class LQBallProblem(ControlProblem):
    """b = M1 x + N a, sigma = M2, f = |x|^2/2 + |a|^2/2, g = x^T M3 x, actions in the ball of radius R"""

    kind = "lq_ball"
    closed_form = True

    def __init__(self, M1, N, M2, M3, radius: float, tau: float = 0.0, kappa: float = 1e-8):
        self.M1 = np.atleast_2d(np.asarray(M1, dtype=float))
        self.N = np.atleast_2d(np.asarray(N, dtype=float))
        self.M2 = np.atleast_2d(np.asarray(M2, dtype=float))
        self.M3 = np.atleast_2d(np.asarray(M3, dtype=float))
        dim = self.M1.shape[0]
        if self.M1.shape != (dim, dim) or self.M3.shape != (dim, dim) or self.N.shape[0] != dim:
            raise DomainError(f"inconsistent LQ matrix shapes {self.M1.shape}, {self.N.shape}, {self.M3.shape}")
        if self.M2.shape[0] != dim:
            raise DomainError(f"M2 needs {dim} rows, got {self.M2.shape}")
        if self.M2.shape[0] == self.M2.shape[1]:
            symmetric = 0.5 * (self.M2 + self.M2.T)
            if np.min(np.linalg.eigvalsh(symmetric)) <= 0:
                raise DomainError("M2 must be strictly positive definite")
        super().__init__(dim, BallMirror(radius=float(radius), dim=self.N.shape[1]), tau, kappa)
        self.radius = float(radius)

    def drift(self, t, x, a):
        return _rows(x, self.dim) @ self.M1.T + _rows(a, self.p) @ self.N.T

    def drift_jacobian(self, t, x, a):
        n = _rows(x, self.dim).shape[0]
        return np.broadcast_to(self.N, (n,) + self.N.shape)

    def diffusion(self, t, x):
        n = _rows(x, self.dim).shape[0]
        return np.broadcast_to(self.M2, (n,) + self.M2.shape)

    def running_cost(self, t, x, a):
        return 0.5 * np.sum(np.square(_rows(x, self.dim)), axis=-1) + 0.5 * np.sum(np.square(_rows(a, self.p)), axis=-1)

    def cost_gradient(self, t, x, a):
        return np.array(_rows(a, self.p))

    def terminal_cost(self, x):
        x = _rows(x, self.dim)
        return np.einsum("ni,ij,nj->n", x, self.M3, x)

    def grad_a_hamiltonian(self, t, x, z, a):
        z = _rows(z, self.dim)
        a = _rows(a, self.p)
        grad = z @ self.N + a
        if self.tau > 0:
            grad = grad + self.tau * self.mirror.grad_psi(a)
        return grad

    def min_hamiltonian(self, t, x, z):
        x = _rows(x, self.dim)
        z = _rows(z, self.dim)
        base = np.sum((x @ self.M1.T) * z, axis=-1) + 0.5 * np.sum(np.square(x), axis=-1)
        nz = z @ self.N
        m = np.linalg.norm(nz, axis=-1)
        direction = np.where(m[:, None] > 1e-14, nz / np.where(m > 1e-14, m, 1.0)[:, None], 0.0)
        R = self.radius
        if self.tau == 0:
            r = np.minimum(m, R)
            value = base - r * m + 0.5 * r ** 2
        else:
            r = R - epsilon_root(R, self.tau, m)
            with np.errstate(divide="ignore"):
                barrier = np.log(R ** 2) - np.log(R ** 2 - r ** 2)
            value = base - r * m + 0.5 * r ** 2 + self.tau * barrier
        return value, -r[:, None] * direction

    def drift_bound(self, t, x):
        x = _rows(x, self.dim)
        return np.linalg.norm(x @ self.M1.T, axis=-1) + np.linalg.norm(self.N, 2) * self.radius

    def describe(self):
        info = super().describe()
        info.update(
            {
                "M1": self.M1.tolist(),
                "N": self.N.tolist(),
                "M2": self.M2.tolist(),
                "M3": self.M3.tolist(),
                "radius": self.radius,
            }
        )
        return info


class FiniteActionProblem(ControlProblem):
    """Randomized choice among p actions: b = sum_i a_i beta_i, f = sum_i a_i phi_i(x), KL regularization.

    phi_i(x) = phi[i] + state_weight |x|^2 / 2 and g(x) = x^T G x.
    """

    kind = "finite_action"
    closed_form = True

    def __init__(self, beta, phi, sigma, terminal_matrix, reference, tau: float,
                 state_weight: float = 0.0, kappa: float = 1e-8):
        self.beta = np.atleast_2d(np.asarray(beta, dtype=float))
        actions, dim = self.beta.shape
        self.phi = np.asarray(phi, dtype=float).reshape(-1)
        self.sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        self.terminal_matrix = np.atleast_2d(np.asarray(terminal_matrix, dtype=float))
        self.reference = np.asarray(reference, dtype=float).reshape(-1)
        self.state_weight = float(state_weight)
        if self.phi.shape != (actions,) or self.reference.shape != (actions,):
            raise DomainError(f"phi and reference need {actions} entries")
        if np.any(self.reference <= 0) or abs(np.sum(self.reference) - 1.0) > 1e-12:
            raise DomainError("reference distribution must be strictly positive and sum to 1")
        if self.sigma.shape[0] != dim or self.terminal_matrix.shape != (dim, dim):
            raise DomainError("sigma and terminal matrix must match the state dimension")
        super().__init__(dim, SimplexMirror(actions=actions), tau, kappa)

    def action_costs(self, t: float, x: np.ndarray) -> np.ndarray:
        """phi(t, x, i) for every action, shape (n, p)"""
        x = _rows(x, self.dim)
        return self.phi[None, :] + 0.5 * self.state_weight * np.sum(np.square(x), axis=-1)[:, None]

    def reference_control(self, t, x):
        n = _rows(x, self.dim).shape[0]
        return np.repeat(self.reference[None, :], n, axis=0)

    def drift(self, t, x, a):
        return _rows(a, self.p) @ self.beta

    def drift_jacobian(self, t, x, a):
        n = _rows(x, self.dim).shape[0]
        return np.broadcast_to(self.beta.T, (n, self.dim, self.p))

    def diffusion(self, t, x):
        n = _rows(x, self.dim).shape[0]
        return np.broadcast_to(self.sigma, (n,) + self.sigma.shape)

    def running_cost(self, t, x, a):
        return np.sum(_rows(a, self.p) * self.action_costs(t, x), axis=-1)

    def cost_gradient(self, t, x, a):
        return self.action_costs(t, x)

    def terminal_cost(self, x):
        x = _rows(x, self.dim)
        return np.einsum("ni,ij,nj->n", x, self.terminal_matrix, x)

    def grad_a_hamiltonian(self, t, x, z, a):
        a = _rows(a, self.p)
        grad = _rows(z, self.dim) @ self.beta.T + self.action_costs(t, x)
        if self.tau > 0:
            if np.any(a <= 0):
                raise DomainError("grad_a_hamiltonian needs every action weight strictly positive")
            grad = grad + self.tau * (np.log(a) - np.log(self.reference)[None, :])
        return grad

    def min_hamiltonian(self, t, x, z):
        scores = _rows(z, self.dim) @ self.beta.T + self.action_costs(t, x)
        if self.tau == 0:
            best = np.argmin(scores, axis=-1)
            return np.min(scores, axis=-1), np.eye(self.p)[best]
        logits = np.log(self.reference)[None, :] - scores / self.tau
        return -self.tau * logsumexp(logits, axis=-1), softmax(logits, axis=-1)

    def drift_bound(self, t, x):
        n = _rows(x, self.dim).shape[0]
        return np.full(n, float(np.max(np.linalg.norm(self.beta, axis=-1))))

    def hamiltonian_growth_bound(self, t, x):
        """(C, C) with C = p max(sup_i |beta_i|, sup_i |phi_i(x)|), so |inf_a H| <= C (1 + |z|).

        The softmin of the action scores beta_i . z + phi_i lies between their min and max.
        """
        beta_sup = float(np.max(np.linalg.norm(self.beta, axis=-1)))
        phi_sup = np.max(np.abs(self.action_costs(t, x)), axis=-1)
        constant = self.p * np.maximum(beta_sup, phi_sup)
        return constant, constant

    def describe(self):
        info = super().describe()
        info.update(
            {
                "beta": self.beta.tolist(),
                "phi": self.phi.tolist(),
                "sigma": self.sigma.tolist(),
                "reference": self.reference.tolist(),
                "state_weight": self.state_weight,
            }
        )
        return info


@dataclass
class GenericProblem(ControlProblem):
    """Problem assembled from user callables; min_hamiltonian is approximate.

    Callables follow the vectorized conventions of ControlProblem. ``convex`` declares
    that f is convex in a, so H is (2 tau / 2) D_psi relatively strongly convex.
    """

    dim: int
    mirror: MirrorMap
    drift_fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    drift_jacobian_fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    sigma_fn: Callable[[float, np.ndarray], np.ndarray]
    cost_fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    cost_gradient_fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    terminal_fn: Callable[[np.ndarray], np.ndarray]
    reference_fn: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    tau: float = 0.0
    kappa: float = 1e-8
    convex: bool = True
    kind: str = field(default="custom")

    def __post_init__(self):
        ControlProblem.__init__(self, self.dim, self.mirror, self.tau, self.kappa)

    def drift(self, t, x, a):
        return np.asarray(self.drift_fn(t, _rows(x, self.dim), _rows(a, self.p)), dtype=float)

    def drift_jacobian(self, t, x, a):
        return np.asarray(self.drift_jacobian_fn(t, _rows(x, self.dim), _rows(a, self.p)), dtype=float)

    def diffusion(self, t, x):
        return np.asarray(self.sigma_fn(t, _rows(x, self.dim)), dtype=float)

    def running_cost(self, t, x, a):
        return np.asarray(self.cost_fn(t, _rows(x, self.dim), _rows(a, self.p)), dtype=float)

    def cost_gradient(self, t, x, a):
        return np.asarray(self.cost_gradient_fn(t, _rows(x, self.dim), _rows(a, self.p)), dtype=float)

    def terminal_cost(self, x):
        return np.asarray(self.terminal_fn(_rows(x, self.dim)), dtype=float)

    def reference_control(self, t, x):
        if self.reference_fn is None:
            return super().reference_control(t, x)
        return np.asarray(self.reference_fn(t, _rows(x, self.dim)), dtype=float)

    def relative_convexity(self) -> float:
        return 2.0 * self.tau if self.convex else 0.0


def affine_quadratic_problem(
    mirror: MirrorMap,
    M1,
    N,
    sigma,
    offset=None,
    state_weight: float = 1.0,
    action_weight: float = 1.0,
    action_linear=None,
    constant: float = 0.0,
    terminal_matrix=None,
    tau: float = 0.0,
    kappa: float = 1e-8,
) -> GenericProblem:
    """b = M1 x + N a + offset, f = w_x |x|^2/2 + w_a |a|^2/2 + c.a + c0, g = x^T G x"""
    M1 = np.atleast_2d(np.asarray(M1, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    dim = M1.shape[0]
    offset = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float).reshape(dim)
    linear = np.zeros(mirror.p) if action_linear is None else np.asarray(action_linear, dtype=float).reshape(mirror.p)
    G = np.zeros((dim, dim)) if terminal_matrix is None else np.atleast_2d(np.asarray(terminal_matrix, dtype=float))
    if N.shape != (dim, mirror.p):
        raise DomainError(f"N must be {dim}x{mirror.p}, got {N.shape}")

    return GenericProblem(
        dim=dim,
        mirror=mirror,
        drift_fn=lambda t, x, a: x @ M1.T + a @ N.T + offset,
        drift_jacobian_fn=lambda t, x, a: np.broadcast_to(N, (x.shape[0],) + N.shape),
        sigma_fn=lambda t, x: np.broadcast_to(sigma, (x.shape[0],) + sigma.shape),
        cost_fn=lambda t, x, a: (
            0.5 * state_weight * np.sum(x * x, axis=-1)
            + 0.5 * action_weight * np.sum(a * a, axis=-1)
            + a @ linear
            + constant
        ),
        cost_gradient_fn=lambda t, x, a: action_weight * a + linear,
        terminal_fn=lambda x: np.einsum("ni,ij,nj->n", x, G, x),
        tau=tau,
        kappa=kappa,
        convex=action_weight >= 0,
    )


def epsilon_root(radius: float, tau: float, m) -> np.ndarray:
    """Root in (0, R) of eps^3 + (m - 3R) eps^2 + (2R^2 - 2 tau - 2 R m) eps + 2 R tau.

    R - eps is the optimal action radius of the barrier-regularized ball problem.
    Safeguarded Newton from R/2 with bisection on the bracket P(0) > 0 > P(R);
    m = 0 returns R.
    """
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DomainError("m must be non-negative")
    R = float(radius)
    flat = np.atleast_1d(m).astype(float)

    def poly(eps):
        c2 = flat - 3.0 * R
        c1 = 2.0 * R ** 2 - 2.0 * tau - 2.0 * R * flat
        value = ((eps + c2) * eps + c1) * eps + 2.0 * R * tau
        slope = (3.0 * eps + 2.0 * c2) * eps + c1
        return value, slope

    scale = R ** 3 + flat * R ** 2 + 2.0 * R * tau
    lo = np.zeros_like(flat)
    hi = np.full_like(flat, R)
    eps = np.full_like(flat, 0.5 * R)
    done = flat == 0
    for _ in range(200):
        value, slope = poly(eps)
        converged = (np.abs(value) <= 1e-14 * scale) | (hi - lo <= 4e-16 * R)
        done |= converged
        if np.all(done):
            break
        lo = np.where(value > 0, eps, lo)
        hi = np.where(value <= 0, eps, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = eps - value / slope
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        done |= inside & (np.abs(newton - eps) <= 1e-15 * R)
        eps = np.where(done, eps, np.where(inside, newton, 0.5 * (lo + hi)))
    else:
        value, _ = poly(eps)
        if np.any(np.abs(value[~done]) > 1e-12 * scale[~done]):
            raise SolverError("epsilon root did not converge", stage="epsilon_root")
    eps = np.where(flat == 0, R, eps)
    return eps.reshape(m.shape) if m.ndim else eps[0]
