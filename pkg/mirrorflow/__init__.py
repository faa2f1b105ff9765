"""
mirrorflow: Mirror-descent flows for stochastic control
Solves finite-horizon exit-time control problems by policy iteration, integrates the
mirror flow over Markov controls and certifies its convergence rates.
"""

__version__ = "0.1.0"
__description__ = "Mirror-descent flows for stochastic control with certified convergence"

from .config import ExperimentConfig, validate_config
from .core.experiment import ExperimentResult, ExperimentRunner, run_experiment
from .core.flow import FlowState, FlowTrace, Probe, flow_step, run_flow
from .core.grid import Field, Grid, GridSpec, build_grid
from .core.hjb import solve_hjb
from .core.mirror import BallMirror, MirrorMap, SimplexMirror
from .core.problem import ControlProblem, FiniteActionProblem, LQBallProblem
from .errors import ConfigError, MirrorFlowError, SolverError

__all__ = [
    'ExperimentConfig',
    'validate_config',
    'ExperimentResult',
    'ExperimentRunner',
    'run_experiment',
    'FlowState',
    'FlowTrace',
    'Probe',
    'flow_step',
    'run_flow',
    'Field',
    'Grid',
    'GridSpec',
    'build_grid',
    'solve_hjb',
    'BallMirror',
    'MirrorMap',
    'SimplexMirror',
    'ControlProblem',
    'FiniteActionProblem',
    'LQBallProblem',
    'ConfigError',
    'MirrorFlowError',
    'SolverError',
]
