"""
Errors - Exception hierarchy for mirrorflow
Solver code raises these; the experiment runner maps them to exit codes.
"""

from typing import List, Optional, Tuple


class MirrorFlowError(Exception):
    """Base class for every error raised by mirrorflow"""


class GridError(MirrorFlowError, ValueError):
    """Invalid grid specification or field layout"""


class DomainError(MirrorFlowError, ValueError):
    """A point lies outside the domain a mirror-map operation requires"""


class ConfigError(MirrorFlowError, ValueError):
    """Configuration problems, one entry per offending field path"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) if self.errors else "invalid configuration")


class SolverError(MirrorFlowError, RuntimeError):
    """A numerical stage failed to produce a result"""

    def __init__(self, message: str, stage: str = "solver", node: Optional[Tuple[int, ...]] = None):
        self.stage = stage
        self.node = node
        if node is not None:
            message = f"{message} (worst node {node})"
        super().__init__(message)


class CFLViolation(SolverError):
    """Explicit time stepping requested with a step above the stability bound"""


class StepSizeUnderflow(SolverError):
    """Monotone backtracking in the mirror flow ran out of halvings"""
