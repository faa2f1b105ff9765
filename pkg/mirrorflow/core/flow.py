"""
Mirror Flow - Explicit Euler integration of dZ/ds = -grad_a H(., grad V^{u_s}, u_s)
The dual field Z lives on interior nodes, u_s = grad psi*(Z_s) is the control it induces.
Steps are accepted only when the value at the probe point does not increase beyond the
discretization tolerance; otherwise the step is halved.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DomainError, StepSizeUnderflow
from .grid import Field, Grid, spatial_gradient
from .mirror import MirrorMap
from .pde import SchemeConfig, evaluate_policy, feynman_kac
from .problem import ControlProblem

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("s", "sup_gap", "probe_gap", "lyapunov_probe", "grad_sup", "eta", "mono_violation")
MAX_HALVINGS = 20


@dataclass(frozen=True)
class Probe:
    """Designated (t0, x0) and its nearest grid node"""
    t: float
    x: Tuple[float, ...]
    level: int
    index: Tuple[int, ...]

    @classmethod
    def at(cls, grid: Grid, t: float, x: Sequence[float]) -> "Probe":
        level, index = grid.locate(t, x)
        return cls(float(t), tuple(float(v) for v in np.atleast_1d(x)), level, index)

    @classmethod
    def centre(cls, grid: Grid) -> "Probe":
        x = [0.5 * (lo + hi) for lo, hi in zip(grid.spec.lo, grid.spec.hi)]
        return cls.at(grid, 0.0, x)

    def value(self, v: Field) -> float:
        """Probe-node value of a scalar field (value fields are read through their padding)"""
        index = tuple(i + 1 for i in self.index) if v.with_boundary else self.index
        return v.value(self.level, index)


@dataclass(frozen=True)
class FlowState:
    """Flow time, dual field and step size; V and G of the current control are cached"""
    s: float
    Z: Field
    eta: float
    value: Optional[Field] = None
    gradient: Optional[Field] = None

    def __post_init__(self):
        if self.s < 0:
            raise DomainError(f"flow time must be non-negative, got {self.s}")
        if not self.eta > 0:
            raise DomainError(f"step size must be positive, got {self.eta}")
        if not np.all(np.isfinite(self.Z.data)):
            raise DomainError("dual field has non-finite entries")


@dataclass
class FlowReference:
    """Optimal value V* and dual Z* used for gaps and the Lyapunov function"""
    value: Field
    dual: Field
    clamp_magnitude: float = 0.0


@dataclass(frozen=True)
class FlowRecord:
    s: float
    sup_gap: float
    probe_gap: float
    lyapunov_probe: float
    grad_sup: float
    eta: float
    mono_violation: float

    def row(self) -> List[str]:
        return [_fmt(getattr(self, name)) for name in TRACE_COLUMNS]


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.17g}"


@dataclass
class FlowTrace:
    """Per-step diagnostics of one flow run"""
    records: List[FlowRecord] = field(default_factory=list)
    initial_lyapunov: float = math.nan
    halvings: int = 0
    snapshots: Dict[float, Field] = field(default_factory=dict)
    final: Optional[FlowState] = None

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for record in self.records:
                writer.writerow(record.row())

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "FlowTrace":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = tuple(next(reader))
            if header != TRACE_COLUMNS:
                raise ValueError(f"{path}: unexpected trace header {header}")
            records = [FlowRecord(*(float(v) for v in row)) for row in reader]
        return cls(records=records)


def controls_of(mirror: MirrorMap, Z: Field) -> Field:
    """u = grad psi*(Z) nodewise"""
    return Z.map_interior(mirror.grad_psi_star)


def flow_velocity(problem: ControlProblem, grid: Grid, u: Field, V: Field) -> Field:
    """G = grad_a H(t, x, grad V, u) at every level and interior node"""
    z = spatial_gradient(V, grid)
    levels = [
        problem.grad_a_hamiltonian(float(grid.times[n]), grid.points, z.level(n), u.level(n))
        for n in range(grid.nt + 1)
    ]
    return Field.from_levels(grid, levels).check_finite("flow velocity")


def prepare_state(
    state: FlowState, problem: ControlProblem, grid: Grid, scheme: Optional[SchemeConfig] = None
) -> FlowState:
    """Fill in V^{u} and G for a state that does not carry them yet"""
    if state.value is not None and state.gradient is not None:
        return state
    u = controls_of(problem.mirror, state.Z)
    V = state.value if state.value is not None else evaluate_policy(problem, grid, u, scheme)
    G = flow_velocity(problem, grid, u, V)
    return replace(state, value=V, gradient=G)


def flow_step(
    state: FlowState,
    problem: ControlProblem,
    grid: Grid,
    probe: Optional[Probe] = None,
    scheme: Optional[SchemeConfig] = None,
    horizon: Optional[float] = None,
) -> FlowState:
    """One accepted Euler step Z' = Z - eta G; halves eta while the probe value rises"""
    step, _ = advance(state, problem, grid, probe or Probe.centre(grid), scheme, horizon)
    return step


def advance(
    state: FlowState,
    problem: ControlProblem,
    grid: Grid,
    probe: Probe,
    scheme: Optional[SchemeConfig],
    horizon: Optional[float],
) -> Tuple[FlowState, Tuple[float, int]]:
    state = prepare_state(state, problem, grid, scheme)
    before = probe.value(state.value)
    eta = state.eta
    for halving in range(MAX_HALVINGS + 1):
        length = eta if horizon is None else min(eta, horizon - state.s)
        Z = Field(grid, state.Z.data - length * state.gradient.data)
        u = controls_of(problem.mirror, Z)
        V = evaluate_policy(problem, grid, u, scheme)
        rise = probe.value(V) - before
        if rise <= 1e-8 + 10.0 * length ** 2:
            G = flow_velocity(problem, grid, u, V)
            accepted = FlowState(s=state.s + length, Z=Z.check_finite("flow step"), eta=eta, value=V, gradient=G)
            return accepted, (max(rise, 0.0), halving)
        logger.debug(f"Probe value rose by {rise:.3e} at s={state.s:.4f}; halving eta={eta:.3e}")
        eta *= 0.5
    raise StepSizeUnderflow(
        f"probe value still rises by {rise:.3e} after {MAX_HALVINGS} halvings at s={state.s:.6g}",
        stage="flow",
        node=(probe.level,) + probe.index,
    )


def lyapunov(
    problem: ControlProblem, grid: Grid, Z: Field, Zstar: Field, scheme: Optional[SchemeConfig] = None
) -> Field:
    """Expected integral of D_psi*(Z, Z*) along the grad psi*(Z*)-controlled dynamics"""
    mirror = problem.mirror
    gap = mirror.bregman_psi_star(Z.interior, Zstar.interior)
    ustar = controls_of(mirror, Zstar)
    return feynman_kac(problem, grid, ustar, Field(grid, gap[..., None]), scheme, stage="lyapunov")


def value_derivative_identity(
    problem: ControlProblem, grid: Grid, state: FlowState, scheme: Optional[SchemeConfig] = None
) -> Field:
    """d/ds V^{u_s} by central differences in s minus -E int G . D^2 psi*(Z) G"""
    state = prepare_state(state, problem, grid, scheme)
    mirror = problem.mirror
    G = state.gradient
    h = state.eta / 4.0
    ahead = evaluate_policy(problem, grid, controls_of(mirror, Field(grid, state.Z.data - h * G.data)), scheme)
    behind = evaluate_policy(problem, grid, controls_of(mirror, Field(grid, state.Z.data + h * G.data)), scheme)
    lhs = (ahead - behind).scaled(1.0 / (2.0 * h))

    hess = mirror.hess_psi_star(state.Z.interior)
    quadratic = np.einsum("...i,...ij,...j->...", G.interior, hess, G.interior)
    u = controls_of(mirror, state.Z)
    rhs = feynman_kac(problem, grid, u, Field(grid, quadratic[..., None]), scheme, stage="value derivative").scaled(-1.0)
    return lhs - rhs


def run_flow(
    Z0: Field,
    S: float,
    eta0: float,
    problem: ControlProblem,
    grid: Grid,
    probe: Optional[Probe] = None,
    reference: Optional[FlowReference] = None,
    scheme: Optional[SchemeConfig] = None,
    snapshots: Sequence[float] = (),
    on_record: Optional[Callable[[FlowRecord], None]] = None,
) -> FlowTrace:
    """Iterate flow_step until s reaches S, recording one FlowRecord per accepted step"""
    if not S > 0:
        raise DomainError(f"flow horizon must be positive, got {S}")
    if not eta0 > 0:
        raise DomainError(f"eta0 must be positive, got {eta0}")
    probe = probe or Probe.centre(grid)
    trace = FlowTrace()
    pending = sorted(float(s) for s in snapshots)
    state = prepare_state(FlowState(s=0.0, Z=Z0, eta=eta0), problem, grid, scheme)
    if reference is not None:
        trace.initial_lyapunov = probe.value(lyapunov(problem, grid, Z0, reference.dual, scheme))
    if pending and pending[0] <= 0.0:
        trace.snapshots[0.0] = controls_of(problem.mirror, state.Z)
        pending = [s for s in pending if s > 0.0]

    logger.info(f"Running mirror flow to S={S:g} with eta0={eta0:g}")
    while state.s < S * (1.0 - 1e-12):
        state, (rise, halvings) = advance(state, problem, grid, probe, scheme, S)
        trace.halvings += halvings
        record = _record(problem, grid, state, probe, reference, rise, scheme)
        trace.records.append(record)
        while pending and state.s >= pending[0] * (1.0 - 1e-12):
            trace.snapshots[pending.pop(0)] = controls_of(problem.mirror, state.Z)
        if on_record is not None:
            on_record(record)
        logger.debug(
            f"s={record.s:.4f} probe_gap={record.probe_gap:.3e} lyapunov={record.lyapunov_probe:.3e} eta={record.eta:.3e}"
        )
    trace.final = state
    logger.info(f"Mirror flow finished: {len(trace)} steps, {trace.halvings} halvings")
    return trace


def _record(
    problem: ControlProblem,
    grid: Grid,
    state: FlowState,
    probe: Probe,
    reference: Optional[FlowReference],
    rise: float,
    scheme: Optional[SchemeConfig],
) -> FlowRecord:
    grad_sup = float(np.max(np.abs(state.gradient.data)))
    if reference is None:
        sup_gap = probe_gap = lyap = math.nan
    else:
        sup_gap = float(np.max(state.value.interior - reference.value.interior))
        probe_gap = probe.value(state.value) - probe.value(reference.value)
        lyap = probe.value(lyapunov(problem, grid, state.Z, reference.dual, scheme))
    return FlowRecord(state.s, sup_gap, probe_gap, lyap, grad_sup, state.eta, rise)


@dataclass
class StaticFlowTrace:
    """Mirror descent on a fixed convex objective over A"""
    s: np.ndarray
    values: np.ndarray
    final_action: np.ndarray
    final_dual: np.ndarray

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) <= 1e-12))


def static_mirror_flow(
    mirror: MirrorMap,
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    eta: float,
    S: float,
) -> StaticFlowTrace:
    """Explicit Euler for dY/ds = -grad h(grad psi*(Y)) with a static objective h"""
    y = np.asarray(y0, dtype=float)
    a = mirror.grad_psi_star(y)
    times = [0.0]
    values = [float(objective(a))]
    steps = int(math.ceil(S / eta - 1e-12))
    for k in range(steps):
        length = min(eta, S - times[-1])
        y, a = mirror.mirror_step(y, gradient(a), length)
        times.append(times[-1] + length)
        values.append(float(objective(a)))
    return StaticFlowTrace(np.asarray(times), np.asarray(values), a, y)
