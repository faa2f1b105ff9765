"""
Experiment Runner - Main orchestrator for mirrorflow runs
Solves the HJB ground truth, runs the mirror flow against it and writes certificates.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from ..config import ExperimentConfig
from ..errors import DomainError, GridError, MirrorFlowError, SolverError
from . import artifacts
from .diagnostics import (
    CertificateReport,
    exponential_rate_certificate,
    gauge_certificate,
    linear_rate_certificate,
    monotone_certificate,
    performance_difference_certificate,
    performance_difference_residual,
)
from .flow import FlowReference, FlowTrace, Probe, controls_of, run_flow, value_derivative_identity
from .grid import Field, Grid, build_grid
from .hjb import ClampedDual, HJBSolution, optimal_dual, solve_hjb
from .pde import SchemeConfig
from .problem import ControlProblem


@dataclass
class ExperimentStatus:
    """Progress of one experiment"""
    is_running: bool = False
    is_complete: bool = False
    current_stage: Optional[str] = None
    error_stage: Optional[str] = None
    error_message: Optional[str] = None
    start_time: Optional[float] = None
    wall_clock: Dict[str, float] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    """Certificates and artifact locations of a finished run"""
    out_dir: Path
    certificates: List[CertificateReport]
    diagnostics: Dict[str, Any]
    files: Dict[str, Any]

    @property
    def passed(self) -> bool:
        return all(report.passed for report in self.certificates)

    def failed(self) -> List[str]:
        return [report.certificate for report in self.certificates if not report.passed]


class ExperimentRunner:
    """Runs one configured experiment stage by stage"""

    def __init__(self, config: ExperimentConfig, out_dir: Optional[Path] = None):
        self.config = config
        self.out_dir = Path(out_dir or config.get("output.dir"))
        self.logger = logging.getLogger(__name__)
        self.status = ExperimentStatus()
        self.stage_callbacks: List[Callable[[str], None]] = []

        self.grid: Optional[Grid] = None
        self.problem: Optional[ControlProblem] = None
        self.scheme: Optional[SchemeConfig] = None
        self.probe: Optional[Probe] = None

    def on_stage(self, callback: Callable[[str], None]):
        self.stage_callbacks.append(callback)

    def _enter(self, stage: str):
        self.status.current_stage = stage
        self.logger.info(f"Stage: {stage}")
        for callback in self.stage_callbacks:
            try:
                callback(stage)
            except Exception as e:
                self.logger.error(f"Stage callback error: {e}")

    def _timed(self, stage: str, fn: Callable[[], Any]) -> Any:
        self._enter(stage)
        started = time.perf_counter()
        try:
            return fn()
        except SolverError:
            self.status.error_stage = stage
            raise
        except (DomainError, GridError) as e:
            self.status.error_stage = stage
            raise SolverError(str(e), stage=stage) from e
        finally:
            self.status.wall_clock[stage] = time.perf_counter() - started

    # -- stages -----------------------------------------------------------------------

    def setup(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / artifacts.CONFIG_ECHO_FILE).write_text(self.config.to_text())
        self.grid = build_grid(self.config.grid_spec())
        self.problem = self.config.build_problem()
        self.scheme = self.config.scheme_config()
        kappa = self.problem.check_ellipticity(self.grid.times, self.grid.points)
        self.problem.check_reference(self.grid.times, self.grid.points)
        t, x = self.config.probe()
        self.probe = Probe.at(self.grid, t, x)
        self.logger.info(
            f"Problem {self.problem.kind} (tau={self.problem.tau:g}, p={self.problem.p}) on a "
            f"{'x'.join(str(n) for n in self.grid.shape)} grid with {self.grid.nt} time levels; "
            f"smallest sigma sigma^T eigenvalue {kappa:.3g}"
        )

    def initial_dual(self) -> Field:
        p = self.problem.p
        if self.config.get("flow.init") == "random":
            rng = np.random.default_rng(int(self.config.get("flow.seed")))
            scale = float(self.config.get("flow.init_scale"))
            data = scale * rng.standard_normal((self.grid.nt + 1,) + self.grid.shape + (p,))
            if self.problem.mirror.kind == "ball":
                # keep initial controls well inside the ball
                data = np.tanh(data)
            return Field(self.grid, data)
        return Field.zeros(self.grid, p)

    def solve_ground_truth(self) -> HJBSolution:
        solution = solve_hjb(
            self.problem,
            self.grid,
            self.scheme,
            tolerance=float(self.config.get("hjb.tolerance")),
            max_rounds=int(self.config.get("hjb.max_rounds")),
        )
        solution.value.to_csv(self.out_dir / artifacts.VSTAR_FILE)
        solution.control.to_csv(self.out_dir / artifacts.USTAR_FILE)
        return solution

    def run_mirror_flow(self, Z0: Field, reference: FlowReference) -> FlowTrace:
        trace = run_flow(
            Z0,
            S=self.config.horizon_S(),
            eta0=float(self.config.get("flow.eta0")),
            problem=self.problem,
            grid=self.grid,
            probe=self.probe,
            reference=reference,
            scheme=self.scheme,
            snapshots=self.config.get("flow.snapshots"),
        )
        trace.to_csv(self.out_dir / artifacts.TRACE_FILE)
        return trace

    def certify(self, trace: FlowTrace, Z0: Field, dual: ClampedDual) -> List[CertificateReport]:
        allowance = float(self.config.get("certificates.allowance"))
        lam = self.config.get("certificates.lambda")
        lam = self.problem.relative_convexity() if lam is None else float(lam)
        reports = []
        if lam > 0:
            reports.append(
                exponential_rate_certificate(trace, lam, allowance, clamp_magnitude=dual.magnitude)
            )
        else:
            reports.append(
                linear_rate_certificate(trace, trace.initial_lyapunov, allowance, clamp_magnitude=dual.magnitude)
            )
        reports.append(monotone_certificate(trace))
        if self.problem.mirror.kind == "simplex":
            reports.append(
                gauge_certificate(
                    self.problem,
                    self.grid,
                    Z0,
                    float(self.config.get("flow.eta0")),
                    steps=int(self.config.get("certificates.gauge_steps")),
                    seed=int(self.config.get("flow.seed")),
                    scheme=self.scheme,
                    probe=self.probe,
                )
            )
        return reports

    def identity_checks(
        self, trace: FlowTrace, dual: ClampedDual, reports: List[CertificateReport]
    ) -> Dict[str, Any]:
        """Residuals of the value-derivative and performance-difference identities at the final state.

        The performance-difference check is appended to reports as a certificate.
        """
        checks: Dict[str, Any] = {}
        if self.config.get("certificates.value_derivative"):
            residual = value_derivative_identity(self.problem, self.grid, trace.final, self.scheme)
            checks["value_derivative_residual"] = float(np.max(np.abs(residual.interior)))
        if self.config.get("certificates.performance_difference"):
            u_final = controls_of(self.problem.mirror, trace.final.Z)
            u_star = controls_of(self.problem.mirror, dual.dual)
            residual = performance_difference_residual(self.problem, self.grid, u_final, u_star, self.scheme)
            report = performance_difference_certificate(
                residual, float(self.config.get("certificates.performance_tolerance"))
            )
            reports.append(report)
            checks["performance_difference_residual"] = report.details["residual"]
            checks["performance_difference_within_tolerance"] = report.passed
        return checks

    # -- driver -----------------------------------------------------------------------

    def run(self) -> ExperimentResult:
        self.status = ExperimentStatus(is_running=True, start_time=time.time())
        self.logger.info(f"Starting experiment from {self.config.source} into {self.out_dir}")
        try:
            self._timed("setup", self.setup)
            solution = self._timed("hjb", self.solve_ground_truth)
            dual = optimal_dual(self.problem.mirror, solution.control, float(self.config.get("hjb.clamp")))
            Z0 = self.initial_dual()
            reference = FlowReference(solution.value, dual.dual, dual.magnitude)
            trace = self._timed("flow", lambda: self.run_mirror_flow(Z0, reference))
            reports = self._timed("certificates", lambda: self.certify(trace, Z0, dual))
            checks = self._timed("identities", lambda: self.identity_checks(trace, dual, reports))
        except MirrorFlowError as e:
            self.status.error_message = str(e)
            self.logger.error(f"Experiment failed in stage {self.status.error_stage or self.status.current_stage}: {e}")
            raise
        finally:
            self.status.is_running = False

        diagnostics = {
            "bellman_residual": solution.residual,
            "hjb_rounds_max": solution.max_rounds,
            "hjb_approximate": solution.approximate,
            "clamp": {"fired": dual.clamped, "magnitude": dual.magnitude, "nodes": dual.nodes},
            "flow_steps": len(trace),
            "halvings": trace.halvings,
            "initial_lyapunov_probe": trace.initial_lyapunov,
            "probe": {"t": self.probe.t, "x": list(self.probe.x), "level": self.probe.level, "index": list(self.probe.index)},
            **checks,
        }
        files = {
            "value": artifacts.VSTAR_FILE,
            "control": artifacts.USTAR_FILE,
            "trace": artifacts.TRACE_FILE,
            "certificates": artifacts.CERTIFICATES_FILE,
            "config": artifacts.CONFIG_ECHO_FILE,
            "snapshots": artifacts.write_snapshots(self.out_dir, trace.snapshots),
        }
        artifacts.write_json(
            self.out_dir / artifacts.CERTIFICATES_FILE,
            {
                "certificates": {report.certificate: report.to_dict() for report in reports},
                "diagnostics": diagnostics,
                "pass": all(report.passed for report in reports),
            },
        )
        artifacts.write_json(
            self.out_dir / artifacts.MANIFEST_FILE,
            {
                "seed": int(self.config.get("flow.seed")),
                "problem": self.problem.describe(),
                "versions": artifacts.library_versions(),
                "wall_clock": self.status.wall_clock,
                "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.status.start_time)),
                "files": files,
            },
        )
        self.status.is_complete = True
        result = ExperimentResult(self.out_dir, reports, diagnostics, files)
        verdict = "all certificates pass" if result.passed else f"failed: {', '.join(result.failed())}"
        self.logger.info(f"Experiment finished ({verdict})")
        return result


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> ExperimentResult:
    """Run a validated configuration and write its artifact set"""
    return ExperimentRunner(config, out_dir).run()
