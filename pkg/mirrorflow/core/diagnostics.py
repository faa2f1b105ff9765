"""
Diagnostics - Numerical certificates for the mirror flow
Performance-difference residuals, linear and exponential rate checks on a FlowTrace,
probe-point monotonicity, relative-convexity sampling and the simplex gauge check.

Certificates are pure functions of their inputs.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .flow import FlowState, FlowTrace, Probe, advance, controls_of
from .grid import Field, Grid, spatial_gradient
from .pde import SchemeConfig, evaluate_policy, feynman_kac
from .problem import ControlProblem

logger = logging.getLogger(__name__)

LYAPUNOV_FLOOR = 1e-12
ABSOLUTE_SLACK = 1e-10


@dataclass
class CertificateReport:
    """Verdict of one certificate with its worst record"""
    certificate: str
    passed: bool
    worst_s: Optional[float]
    worst_slack: Optional[float]
    allowance: float
    clamp_magnitude: float = 0.0
    fitted_slope: Optional[float] = None
    checked: int = 0
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["pass"] = data.pop("passed")
        if self.fitted_slope is None:
            data.pop("fitted_slope")
        if not self.details:
            data.pop("details")
        return data


def performance_difference_residual(
    problem: ControlProblem, grid: Grid, u: Field, u_other: Field, scheme: Optional[SchemeConfig] = None
) -> Field:
    """(V^u - V^u') - E^{u'} int [H(grad V^u, u) - H(grad V^u, u')]"""
    V = evaluate_policy(problem, grid, u, scheme)
    V_other = evaluate_policy(problem, grid, u_other, scheme)
    z = spatial_gradient(V, grid)
    levels = []
    for n in range(grid.nt + 1):
        t = float(grid.times[n])
        gain = problem.hamiltonian(t, grid.points, z.level(n), u.level(n))
        loss = problem.hamiltonian(t, grid.points, z.level(n), u_other.level(n))
        levels.append(gain - loss)
    rhs = feynman_kac(problem, grid, u_other, Field.from_levels(grid, levels), scheme, stage="performance difference")
    return (V - V_other) - rhs


def performance_difference_certificate(residual: Field, tolerance: float) -> CertificateReport:
    """sup |performance-difference residual| over the grid stays within tolerance"""
    magnitude = np.abs(residual.interior[..., 0])
    flat = int(np.argmax(magnitude))
    worst = float(magnitude.reshape(-1)[flat])
    level, *index = np.unravel_index(flat, magnitude.shape)
    passed = worst <= tolerance
    logger.info(
        f"Performance difference certificate: {'pass' if passed else 'FAIL'}, "
        f"residual {worst:.3e} (tolerance {tolerance:g})"
    )
    return CertificateReport(
        certificate="performance_difference",
        passed=passed,
        worst_s=None,
        worst_slack=tolerance - worst,
        allowance=tolerance,
        checked=int(magnitude.size),
        details={"residual": worst, "worst_node": [int(level)] + [int(i) for i in index]},
    )


def linear_rate_certificate(
    trace: FlowTrace, d0_probe: float, allowance: float = 0.1, clamp_magnitude: float = 0.0
) -> CertificateReport:
    """probe_gap(s) <= D(Z0, Z*)/s for every record with s >= 1, up to the allowance"""
    worst: Tuple[float, Optional[float], Optional[float]] = (math.inf, None, None)
    passed = True
    checked = 0
    for record in trace.records:
        if record.s < 1.0:
            continue
        checked += 1
        bound = d0_probe / record.s
        slack = bound - record.probe_gap
        if math.isnan(slack):
            passed = False
            continue
        relative = slack / bound if bound > 0 else (0.0 if slack >= 0 else -math.inf)
        if slack < -allowance * bound - ABSOLUTE_SLACK:
            passed = False
        if relative < worst[0]:
            worst = (relative, record.s, slack)
    report = CertificateReport(
        certificate="linear_rate",
        passed=passed,
        worst_s=worst[1],
        worst_slack=worst[2],
        allowance=allowance,
        clamp_magnitude=clamp_magnitude,
        checked=checked,
        details={"d0_probe": d0_probe},
    )
    logger.info(f"Linear rate certificate: {'pass' if passed else 'FAIL'} ({checked} records)")
    return report


def exponential_rate_certificate(
    trace: FlowTrace,
    lam: float,
    allowance: float = 0.1,
    d0_probe: Optional[float] = None,
    clamp_magnitude: float = 0.0,
) -> CertificateReport:
    """gap <= (lam/2) D0 / (e^{lam s/2} - 1) and D(Z_s, Z*) <= e^{-lam s/2} D0, plus the log-D slope"""
    if not lam > 0:
        raise ValueError(f"exponential certificate needs lambda > 0, got {lam}")
    d0 = trace.initial_lyapunov if d0_probe is None else d0_probe
    worst: Tuple[float, Optional[float], Optional[float]] = (math.inf, None, None)
    passed = True
    checked = 0
    times = []
    logs = []
    for record in trace.records:
        D = record.lyapunov_probe
        if math.isnan(D) or math.isnan(record.probe_gap):
            passed = False
            continue
        if D < LYAPUNOV_FLOOR:
            continue
        checked += 1
        times.append(record.s)
        logs.append(math.log(D))
        gap_bound = 0.5 * lam * d0 / math.expm1(0.5 * lam * record.s)
        decay_bound = math.exp(-0.5 * lam * record.s) * d0
        for bound, value in ((gap_bound, record.probe_gap), (decay_bound, D)):
            slack = bound - value
            if value > (1.0 + allowance) * bound + ABSOLUTE_SLACK:
                passed = False
            relative = slack / bound if bound > 0 else (0.0 if slack >= 0 else -math.inf)
            if relative < worst[0]:
                worst = (relative, record.s, slack)

    slope = None
    if len(times) >= 2:
        slope = float(np.polyfit(np.asarray(times), np.asarray(logs), 1)[0])
        if slope > -(1.0 - allowance) * 0.5 * lam:
            passed = False
    report = CertificateReport(
        certificate="exponential_rate",
        passed=passed,
        worst_s=worst[1],
        worst_slack=worst[2],
        allowance=allowance,
        clamp_magnitude=clamp_magnitude,
        fitted_slope=slope,
        checked=checked,
        details={"lambda": lam, "d0_probe": d0},
    )
    logger.info(
        f"Exponential rate certificate (lambda={lam:g}): {'pass' if passed else 'FAIL'}, "
        f"fitted slope {slope if slope is not None else float('nan'):.4f}"
    )
    return report


def monotone_certificate(trace: FlowTrace, failures: int = 0) -> CertificateReport:
    """Every accepted step kept the probe value within 1e-8 + 10 eta^2 of the previous one"""
    worst: Tuple[float, Optional[float], Optional[float]] = (math.inf, None, None)
    passed = failures == 0
    for record in trace.records:
        slack = 1e-8 + 10.0 * record.eta ** 2 - record.mono_violation
        if slack < 0:
            passed = False
        if slack < worst[0]:
            worst = (slack, record.s, slack)
    return CertificateReport(
        certificate="monotone_decrease",
        passed=passed,
        worst_s=worst[1],
        worst_slack=worst[2],
        allowance=0.0,
        checked=len(trace.records),
        details={"halvings": trace.halvings, "backtracking_failures": failures},
    )


def gauge_certificate(
    problem: ControlProblem,
    grid: Grid,
    Z0: Field,
    eta: float,
    steps: int = 3,
    seed: int = 0,
    scheme: Optional[SchemeConfig] = None,
    probe: Optional[Probe] = None,
) -> CertificateReport:
    """Per-node constant shifts of Z leave the simplex flow's controls unchanged"""
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-5.0, 5.0, size=Z0.interior.shape[:-1] + (1,))
    shifted = Field(grid, Z0.interior + shift)
    probe = probe or Probe.centre(grid)
    plain = FlowState(s=0.0, Z=Z0, eta=eta)
    moved = FlowState(s=0.0, Z=shifted, eta=eta)
    worst = 0.0
    for _ in range(steps):
        plain, _ = advance(plain, problem, grid, probe, scheme, None)
        moved, _ = advance(moved, problem, grid, probe, scheme, None)
        difference = controls_of(problem.mirror, plain.Z).data - controls_of(problem.mirror, moved.Z).data
        worst = max(worst, float(np.max(np.abs(difference))))
    passed = worst <= 1e-12
    logger.info(f"Simplex gauge check: {'pass' if passed else 'FAIL'} (max control difference {worst:.2e})")
    return CertificateReport(
        certificate="simplex_gauge",
        passed=passed,
        worst_s=float(plain.s),
        worst_slack=1e-12 - worst,
        allowance=0.0,
        checked=steps,
    )


def convexity_probe(
    problem: ControlProblem,
    n_samples: int,
    lam: float,
    z_radius: float = 1.0,
    seed: int = 0,
    box: Tuple[Sequence[float], Sequence[float]] = ((-1.0,), (1.0,)),
    horizon: float = 1.0,
) -> float:
    """min over samples of H(a) - H(a') - grad_a H(a').(a - a') - (lam/2) D_psi(a, a')"""
    if n_samples < 1:
        raise ValueError("convexity_probe needs at least one sample")
    rng = np.random.default_rng(seed)
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (problem.dim,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (problem.dim,))
    worst = math.inf
    for _ in range(n_samples):
        t = float(rng.uniform(0.0, horizon))
        x = rng.uniform(lo, hi)[None, :]
        direction = rng.standard_normal(problem.dim)
        z = (z_radius * rng.uniform() * direction / np.linalg.norm(direction))[None, :]
        a, a_ref = problem.mirror.sample_interior(rng, 2)
        a = a[None, :]
        a_ref = a_ref[None, :]
        margin = (
            problem.hamiltonian(t, x, z, a)
            - problem.hamiltonian(t, x, z, a_ref)
            - np.sum(problem.grad_a_hamiltonian(t, x, z, a_ref) * (a - a_ref), axis=-1)
            - 0.5 * lam * problem.mirror.bregman_psi(a, a_ref)
        )
        worst = min(worst, float(margin[0]))
    return worst
