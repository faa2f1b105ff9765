"""
Mirror Maps - Geometry of the action set
The pair (psi, psi*) with gradients, the Hessian of psi* and both Bregman divergences,
for the log-barrier ball and the entropy simplex behind one interface.

All operations act on the last axis, so a (..., p) array is a batch of points.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from ..errors import DomainError


class MirrorMap(ABC):
    """Shared interface of the mirror geometries"""

    kind: str = "abstract"

    @property
    @abstractmethod
    def p(self) -> int:
        """Action dimension"""

    @abstractmethod
    def psi(self, a: np.ndarray) -> np.ndarray:
        """Barrier psi(a), +inf outside dom(psi)"""

    @abstractmethod
    def grad_psi(self, a: np.ndarray) -> np.ndarray:
        """Gradient of psi at strictly interior points"""

    @abstractmethod
    def psi_star(self, y: np.ndarray) -> np.ndarray:
        """Legendre conjugate psi*(y)"""

    @abstractmethod
    def grad_psi_star(self, y: np.ndarray) -> np.ndarray:
        """Mirror map: dual point to a point strictly inside A"""

    @abstractmethod
    def hess_psi_star(self, y: np.ndarray) -> np.ndarray:
        """Hessian of psi*, shape (..., p, p)"""

    @abstractmethod
    def bregman_psi(self, a: np.ndarray, a_ref: np.ndarray) -> np.ndarray:
        """D_psi(a | a_ref); a_ref must be strictly interior"""

    @abstractmethod
    def is_interior(self, a: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Mask of points strictly inside A (by at least margin)"""

    @abstractmethod
    def in_closure(self, a: np.ndarray) -> np.ndarray:
        """Mask of points in the closure of A"""

    @abstractmethod
    def clamp_to_interior(self, a: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
        """Pull points within eps of the boundary inside; returns (points, fired mask)"""

    @abstractmethod
    def project(self, a: np.ndarray) -> np.ndarray:
        """Euclidean projection onto the closure of A"""

    @abstractmethod
    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n random points strictly inside A"""

    @abstractmethod
    def psi_at_dual(self, y: np.ndarray) -> np.ndarray:
        """psi(grad_psi_star(y)) in closed form"""

    @abstractmethod
    def dual_recovery(self, y: np.ndarray) -> np.ndarray:
        """grad_psi(grad_psi_star(y)) in closed form"""

    def bregman_psi_star(self, y: np.ndarray, y_ref: np.ndarray) -> np.ndarray:
        """D_psi*(y, y_ref) = psi*(y) - psi*(y_ref) - grad psi*(y_ref).(y - y_ref)"""
        y = np.asarray(y, dtype=float)
        y_ref = np.asarray(y_ref, dtype=float)
        slope = np.sum(self.grad_psi_star(y_ref) * (y - y_ref), axis=-1)
        return self.psi_star(y) - self.psi_star(y_ref) - slope

    def mirror_step(self, y: np.ndarray, grad: np.ndarray, eta: float) -> Tuple[np.ndarray, np.ndarray]:
        """One explicit mirror-descent step in the dual; returns (new dual, new primal)"""
        y_new = np.asarray(y, dtype=float) - eta * np.asarray(grad, dtype=float)
        return y_new, self.grad_psi_star(y_new)

    def describe(self) -> dict:
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True)
class BallMirror(MirrorMap):
    """psi(a) = -log(R^2 - |a|^2) on the open ball of radius R"""

    radius: float
    dim: int = 2
    kind = "ball"

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")
        if self.dim < 1:
            raise DomainError(f"ball dimension must be at least 1, got {self.dim}")

    @property
    def p(self) -> int:
        return self.dim

    def _r2(self, a: np.ndarray) -> np.ndarray:
        return np.sum(np.square(a), axis=-1)

    def _root(self, y: np.ndarray) -> np.ndarray:
        # sqrt(1 + R^2 |y|^2)
        return np.sqrt(1.0 + self.radius ** 2 * self._r2(y))

    def psi(self, a: np.ndarray) -> np.ndarray:
        gap = self.radius ** 2 - self._r2(np.asarray(a, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(gap > 0, -np.log(np.where(gap > 0, gap, 1.0)), np.inf)

    def grad_psi(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        gap = self.radius ** 2 - self._r2(a)
        if np.any(gap <= 0):
            raise DomainError("grad_psi needs |a| < R")
        return 2.0 * a / gap[..., None]

    def psi_star(self, y: np.ndarray) -> np.ndarray:
        s = self._root(np.asarray(y, dtype=float))
        return s - 1.0 + np.log(2.0 * self.radius ** 2) - np.log1p(s)

    def grad_psi_star(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        s = self._root(y)
        return self.radius ** 2 * y / (1.0 + s)[..., None]

    def hess_psi_star(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        s = self._root(y)
        alpha = self.radius ** 2 / (1.0 + s)
        beta = self.radius ** 4 / (s * (1.0 + s) ** 2)
        eye = np.eye(self.dim)
        outer = y[..., :, None] * y[..., None, :]
        return alpha[..., None, None] * eye - beta[..., None, None] * outer

    def bregman_psi(self, a: np.ndarray, a_ref: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        a_ref = np.asarray(a_ref, dtype=float)
        gap_ref = self.radius ** 2 - self._r2(a_ref)
        if np.any(gap_ref <= 0):
            raise DomainError("bregman_psi needs a strictly interior reference point")
        gap = self.radius ** 2 - self._r2(a)
        linear = 2.0 * np.sum(a_ref * (a - a_ref), axis=-1) / gap_ref
        with np.errstate(divide="ignore", invalid="ignore"):
            value = np.log(gap_ref / np.where(gap > 0, gap, 1.0)) + linear
        return np.where(gap > 0, value, np.inf)

    def is_interior(self, a: np.ndarray, margin: float = 0.0) -> np.ndarray:
        return np.sqrt(self._r2(np.asarray(a, dtype=float))) < self.radius - margin

    def in_closure(self, a: np.ndarray) -> np.ndarray:
        return np.sqrt(self._r2(np.asarray(a, dtype=float))) <= self.radius * (1.0 + 1e-12)

    def clamp_to_interior(self, a: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
        a = np.asarray(a, dtype=float)
        norm = np.sqrt(self._r2(a))
        limit = self.radius - eps if eps > 0 else self.radius * (1.0 - 1e-12)
        fired = norm > limit
        scale = np.where(fired, limit / np.where(norm > 0, norm, 1.0), 1.0)
        return a * scale[..., None], fired

    def project(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        norm = np.sqrt(self._r2(a))
        scale = np.where(norm > self.radius, self.radius / np.where(norm > 0, norm, 1.0), 1.0)
        return a * scale[..., None]

    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        direction = rng.standard_normal((n, self.dim))
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        radius = 0.999 * self.radius * rng.uniform(size=n) ** (1.0 / self.dim)
        return direction * radius[:, None]

    def psi_at_dual(self, y: np.ndarray) -> np.ndarray:
        s = self._root(np.asarray(y, dtype=float))
        return np.log1p(s) - np.log(2.0 * self.radius ** 2)

    def dual_recovery(self, y: np.ndarray) -> np.ndarray:
        return np.array(y, dtype=float)

    def describe(self) -> dict:
        return {"kind": self.kind, "p": self.p, "radius": self.radius}


@dataclass(frozen=True)
class SimplexMirror(MirrorMap):
    """Negative entropy on the probability simplex; psi* is log-sum-exp"""

    actions: int
    tolerance: float = 1e-10
    kind = "simplex"

    def __post_init__(self):
        if self.actions < 2:
            raise DomainError(f"simplex needs at least two actions, got {self.actions}")

    @property
    def p(self) -> int:
        return self.actions

    def _on_simplex(self, a: np.ndarray) -> np.ndarray:
        return np.all(a >= -self.tolerance, axis=-1) & (np.abs(np.sum(a, axis=-1) - 1.0) <= self.tolerance)

    def psi(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        entropy = np.sum(xlogy(a, np.clip(a, 0.0, None)), axis=-1)
        return np.where(self._on_simplex(a), entropy, np.inf)

    def grad_psi(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if np.any(a <= 0):
            raise DomainError("grad_psi needs every simplex component strictly positive")
        return 1.0 + np.log(a)

    def psi_star(self, y: np.ndarray) -> np.ndarray:
        return logsumexp(np.asarray(y, dtype=float), axis=-1)

    def grad_psi_star(self, y: np.ndarray) -> np.ndarray:
        return softmax(np.asarray(y, dtype=float), axis=-1)

    def hess_psi_star(self, y: np.ndarray) -> np.ndarray:
        s = self.grad_psi_star(y)
        diag = s[..., :, None] * np.eye(self.actions)
        return diag - s[..., :, None] * s[..., None, :]

    def bregman_psi(self, a: np.ndarray, a_ref: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        a_ref = np.asarray(a_ref, dtype=float)
        if np.any(a_ref <= 0):
            raise DomainError("bregman_psi needs a reference with every component positive")
        clipped = np.clip(a, 0.0, None)
        kl = np.sum(xlogy(clipped, clipped) - xlogy(clipped, a_ref) - (a - a_ref), axis=-1)
        return np.where(self._on_simplex(a), kl, np.inf)

    def is_interior(self, a: np.ndarray, margin: float = 0.0) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return np.all(a > margin, axis=-1) & (np.abs(np.sum(a, axis=-1) - 1.0) <= self.tolerance)

    def in_closure(self, a: np.ndarray) -> np.ndarray:
        return self._on_simplex(np.asarray(a, dtype=float))

    def clamp_to_interior(self, a: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
        a = np.asarray(a, dtype=float)
        floor = eps if eps > 0 else 1e-300
        fired = np.min(a, axis=-1) < floor
        mixed = (1.0 - eps) * a + eps / self.actions if eps > 0 else np.clip(a, floor, None)
        mixed = mixed / np.sum(mixed, axis=-1, keepdims=True)
        return np.where(fired[..., None], mixed, a), fired

    def project(self, a: np.ndarray) -> np.ndarray:
        # sort-based Euclidean projection onto the simplex, row by row
        a = np.asarray(a, dtype=float)
        flat = a.reshape(-1, self.actions)
        ordered = -np.sort(-flat, axis=-1)
        cumulative = np.cumsum(ordered, axis=-1) - 1.0
        ranks = np.arange(1, self.actions + 1)
        support = ordered - cumulative / ranks > 0
        rho = self.actions - 1 - np.argmax(support[:, ::-1], axis=-1)
        theta = cumulative[np.arange(flat.shape[0]), rho] / (rho + 1)
        return np.clip(flat - theta[:, None], 0.0, None).reshape(a.shape)

    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        sample = rng.dirichlet(np.ones(self.actions), size=n)
        sample = (1.0 - 1e-6) * sample + 1e-6 / self.actions
        return sample / np.sum(sample, axis=-1, keepdims=True)

    def psi_at_dual(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lse = logsumexp(y, axis=-1)
        return np.sum(softmax(y, axis=-1) * (y - lse[..., None]), axis=-1)

    def dual_recovery(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return 1.0 + y - logsumexp(y, axis=-1)[..., None]

    def describe(self) -> dict:
        return {"kind": self.kind, "p": self.p}


def make_mirror(kind: str, **params) -> MirrorMap:
    """Build a mirror map by name ('ball' or 'simplex')"""
    if kind == "ball":
        return BallMirror(radius=float(params["radius"]), dim=int(params.get("dim", 2)))
    if kind == "simplex":
        return SimplexMirror(actions=int(params["actions"]))
    raise DomainError(f"unknown mirror map kind '{kind}'")
