"""
Configuration module for mirrorflow
Plain-text experiment files with dotted keys, defaults, validation and normalization
"""

import json
import logging
import math
from copy import deepcopy
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from .core.grid import GridSpec
from .core.mirror import BallMirror, SimplexMirror
from .core.pde import SchemeConfig
from .core.problem import ControlProblem, FiniteActionProblem, LQBallProblem, affine_quadratic_problem
from .errors import ConfigError, MirrorFlowError

PRESET_DIR = Path(__file__).parent / "presets"
PROBLEM_KINDS = ("lq_ball", "finite_action", "custom")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

DEFAULTS: Dict[str, Any] = {
    "problem": {
        "kind": "lq_ball",
        "tau": 0.0,
        "kappa": 1e-8,
        "M1": [[0.0]],
        "N": [[1.0]],
        "M2": [[1.0]],
        "M3": [[0.5]],
        "beta": None,
        "phi": None,
        "state_weight": 1.0,
        "offset": None,
        "action_weight": 1.0,
        "action_linear": None,
        "constant": 0.0,
    },
    "mirror": {
        "kind": None,
        "radius": 1.5,
        "actions": None,
        "reference": None,
    },
    "grid": {
        "dim": 1,
        "lo": [-2.0],
        "hi": [2.0],
        "nx": [31],
        "nt": 40,
        "horizon": 1.0,
    },
    "scheme": {
        "scheme": "implicit",
        "tolerance": 1e-10,
        "max_iterations": 10000,
        "safety": 0.9,
        "drift": "upwind",
        "solver": "gauss_seidel",
    },
    "hjb": {
        "tolerance": 1e-9,
        "max_rounds": 100,
        "clamp": 1e-6,
    },
    "flow": {
        "eta0": 0.1,
        "S": None,
        "probe": None,
        "seed": 0,
        "init": "zero",
        "init_scale": 1.0,
        "snapshots": [],
    },
    "certificates": {
        "allowance": 0.1,
        "lambda": None,
        "gauge_steps": 3,
        "value_derivative": True,
        "performance_difference": True,
        "performance_tolerance": 5e-2,
    },
    "output": {
        "dir": "runs/latest",
    },
    "logging": {
        "level": "INFO",
        "file": "run.log",
    },
}


def _flatten(tree: Dict[str, Any], prefix: str = "") -> Iterator[Tuple[str, Any]]:
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, f"{path}.")
        else:
            yield path, value


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip().strip('"').strip("'")


def _matrix(value: Any) -> Optional[np.ndarray]:
    if value is None:
        return None
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        return None
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1) if array.size > 1 else array.reshape(1, 1)
    return array if array.ndim == 2 and np.all(np.isfinite(array)) else None


class ExperimentConfig:
    """Experiment configuration: nested defaults merged with a key/value file"""

    def __init__(self, values: Optional[Dict[str, Any]] = None, source: str = "<defaults>"):
        self.logger = logging.getLogger(__name__)
        self.source = source
        self.config = deepcopy(DEFAULTS)
        self.unknown: List[str] = []
        if values:
            self._merge_configs(self.config, values)

    # -- loading ----------------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "ExperimentConfig":
        config = cls(source=source)
        known = {key for key, _ in _flatten(DEFAULTS)}
        errors = []
        seen = set()
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                errors.append(f"{source}:{number}: expected 'key = value', got '{line}'")
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                errors.append(f"{key}: unknown key ({source}:{number})")
                continue
            if key in seen:
                errors.append(f"{key}: given more than once ({source}:{number})")
            seen.add(key)
            config.set(key, _parse_value(value))
        if errors:
            raise ConfigError(errors)
        config.logger.info(f"Configuration loaded from {source}")
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError([f"{path}: cannot read configuration ({e})"])
        return cls.from_text(text, source=str(path))

    def _merge_configs(self, default: Dict[str, Any], loaded: Dict[str, Any]):
        """Recursively merge loaded config with defaults"""
        for key, value in loaded.items():
            if key in default and isinstance(default[key], dict) and isinstance(value, dict):
                self._merge_configs(default[key], value)
            else:
                default[key] = value

    # -- access ---------------------------------------------------------------------

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value"""
        value = self.config
        try:
            for k in key.split("."):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any):
        """Set configuration value"""
        keys = key.split(".")
        config = self.config
        for k in keys[:-1]:
            config = config.setdefault(k, {})
        config[keys[-1]] = value
        self.logger.debug(f"Configuration updated: {key} = {value}")

    def items(self) -> Iterator[Tuple[str, Any]]:
        return _flatten(self.config)

    def to_text(self) -> str:
        """Render in the file format; re-reading the output gives the same configuration"""
        lines = [f"# normalized from {self.source}"]
        section = None
        for key, value in self.items():
            head = key.split(".", 1)[0]
            if head != section:
                lines.append("")
                section = head
            lines.append(f"{key} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    # -- derived values ---------------------------------------------------------------

    @property
    def tau(self) -> float:
        return float(self.get("problem.tau"))

    def mirror_kind(self) -> str:
        kind = self.get("mirror.kind")
        if kind is not None:
            return kind
        return "simplex" if self.get("problem.kind") == "finite_action" else "ball"

    def action_count(self) -> int:
        if self.get("mirror.actions") is not None:
            return int(self.get("mirror.actions"))
        if self.get("problem.kind") == "finite_action":
            beta = _matrix(self.get("problem.beta"))
            return beta.shape[0] if beta is not None else 0
        N = _matrix(self.get("problem.N"))
        return N.shape[1] if N is not None else 0

    def horizon_S(self) -> float:
        S = self.get("flow.S")
        if S is not None:
            return float(S)
        return 20.0 if self.tau == 0 else 10.0 / self.tau

    def probe(self) -> Tuple[float, List[float]]:
        probe = self.get("flow.probe")
        if probe is None:
            lo = self.get("grid.lo")
            hi = self.get("grid.hi")
            return 0.0, [0.5 * (a + b) for a, b in zip(lo, hi)]
        return float(probe[0]), [float(v) for v in probe[1:]]

    def grid_spec(self) -> GridSpec:
        return GridSpec(
            dim=int(self.get("grid.dim")),
            lo=tuple(self.get("grid.lo")),
            hi=tuple(self.get("grid.hi")),
            nx=tuple(self.get("grid.nx")),
            nt=int(self.get("grid.nt")),
            horizon=float(self.get("grid.horizon")),
        )

    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(
            scheme=self.get("scheme.scheme"),
            tolerance=float(self.get("scheme.tolerance")),
            max_iterations=int(self.get("scheme.max_iterations")),
            safety=float(self.get("scheme.safety")),
            drift=self.get("scheme.drift"),
            solver=self.get("scheme.solver"),
        )

    def build_problem(self) -> ControlProblem:
        kind = self.get("problem.kind")
        tau = self.tau
        kappa = float(self.get("problem.kappa"))
        if kind == "lq_ball":
            return LQBallProblem(
                self.get("problem.M1"),
                self.get("problem.N"),
                self.get("problem.M2"),
                self.get("problem.M3"),
                radius=float(self.get("mirror.radius")),
                tau=tau,
                kappa=kappa,
            )
        if kind == "finite_action":
            p = self.action_count()
            reference = self.get("mirror.reference") or [1.0 / p] * p
            return FiniteActionProblem(
                beta=self.get("problem.beta"),
                phi=self.get("problem.phi"),
                sigma=self.get("problem.M2"),
                terminal_matrix=self.get("problem.M3"),
                reference=reference,
                tau=tau,
                state_weight=float(self.get("problem.state_weight")),
                kappa=kappa,
            )
        dim = int(self.get("grid.dim"))
        if self.mirror_kind() == "simplex":
            mirror = SimplexMirror(actions=self.action_count())
        else:
            mirror = BallMirror(radius=float(self.get("mirror.radius")), dim=self.action_count())
        return affine_quadratic_problem(
            mirror,
            M1=self.get("problem.M1"),
            N=self.get("problem.N"),
            sigma=self.get("problem.M2"),
            offset=self.get("problem.offset"),
            state_weight=float(self.get("problem.state_weight")),
            action_weight=float(self.get("problem.action_weight")),
            action_linear=self.get("problem.action_linear"),
            constant=float(self.get("problem.constant")),
            terminal_matrix=self.get("problem.M3") if self.get("problem.M3") is not None else np.zeros((dim, dim)),
            tau=tau,
            kappa=kappa,
        )

    # -- validation -------------------------------------------------------------------

    def validate(self) -> List[str]:
        """Collect every configuration problem, each prefixed by its field path"""
        errors: List[str] = []
        self._validate_numbers(errors)
        if errors:
            return errors
        self._validate_problem(errors)
        self._validate_grid_and_flow(errors)
        self._validate_sections(errors)
        return errors

    def _validate_numbers(self, errors: List[str]):
        numeric = [
            "problem.tau", "problem.kappa", "problem.state_weight", "problem.action_weight", "problem.constant",
            "mirror.radius", "grid.nt", "grid.horizon", "scheme.tolerance", "scheme.max_iterations",
            "scheme.safety", "hjb.tolerance", "hjb.max_rounds", "hjb.clamp", "flow.eta0", "flow.seed",
            "flow.init_scale", "certificates.allowance", "certificates.gauge_steps",
            "certificates.performance_tolerance",
        ]
        for key in numeric:
            value = self.get(key)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                errors.append(f"{key}: expected a finite number, got {value!r}")
        for key in ("flow.S", "certificates.lambda", "mirror.actions"):
            value = self.get(key)
            if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
                errors.append(f"{key}: expected a number or null, got {value!r}")
        for key in ("grid.lo", "grid.hi", "grid.nx", "flow.snapshots"):
            if not isinstance(self.get(key), list):
                errors.append(f"{key}: expected a list, got {self.get(key)!r}")

    def _validate_problem(self, errors: List[str]):
        kind = self.get("problem.kind")
        if kind not in PROBLEM_KINDS:
            errors.append(f"problem.kind: must be one of {PROBLEM_KINDS}, got {kind!r}")
            return
        if self.tau < 0:
            errors.append("problem.tau: must be non-negative")
        if self.get("problem.kappa") <= 0:
            errors.append("problem.kappa: must be positive")
        mirror = self.mirror_kind()
        if mirror not in ("ball", "simplex"):
            errors.append(f"mirror.kind: must be 'ball' or 'simplex', got {mirror!r}")
            return
        if kind == "lq_ball" and mirror != "ball":
            errors.append("mirror.kind: lq_ball problems use the ball mirror map")
        if kind == "finite_action" and mirror != "simplex":
            errors.append("mirror.kind: finite_action problems use the simplex mirror map")
        if mirror == "ball" and self.get("mirror.radius") <= 0:
            errors.append("mirror.radius: must be positive")

        dim = self.get("grid.dim")
        names = ("problem.M1", "problem.N", "problem.M3") if kind != "finite_action" else ("problem.M3",)
        for key in names + ("problem.M2",):
            matrix = _matrix(self.get(key))
            if matrix is None:
                errors.append(f"{key}: expected a finite matrix, got {self.get(key)!r}")
            elif matrix.shape[0] != dim:
                errors.append(f"{key}: needs {dim} rows to match grid.dim, got shape {list(matrix.shape)}")
        if errors:
            return
        for key in ("problem.M1", "problem.M3"):
            if key in names and _matrix(self.get(key)).shape != (dim, dim):
                errors.append(f"{key}: must be {dim}x{dim}")

        sigma = _matrix(self.get("problem.M2"))
        covariance = sigma @ sigma.T
        smallest = float(np.min(np.linalg.eigvalsh(covariance)))
        if smallest < self.get("problem.kappa"):
            errors.append(f"problem.M2: sigma sigma^T has eigenvalue {smallest:.3g} below problem.kappa")
        if dim > 1 and np.max(np.abs(covariance - np.diag(np.diag(covariance)))) > 1e-12:
            errors.append("problem.M2: two-dimensional grids need a diagonal sigma sigma^T")
        if kind == "lq_ball" and sigma.shape[0] == sigma.shape[1]:
            if np.min(np.linalg.eigvalsh(0.5 * (sigma + sigma.T))) <= 0:
                errors.append("problem.M2: must be strictly positive definite")

        if mirror == "simplex":
            self._validate_simplex(errors, kind, dim)
        actions = self.get("mirror.actions")
        if mirror == "ball" and actions is not None and _matrix(self.get("problem.N")).shape[1] != actions:
            errors.append(f"mirror.actions: {actions} does not match the {_matrix(self.get('problem.N')).shape[1]} columns of problem.N")

    def _validate_simplex(self, errors: List[str], kind: str, dim: int):
        p = self.action_count()
        if p < 2:
            errors.append(f"mirror.actions: the simplex needs at least two actions, got {p}")
            return
        if kind == "finite_action":
            beta = _matrix(self.get("problem.beta"))
            if beta is None or beta.shape != (p, dim):
                errors.append(f"problem.beta: expected a {p}x{dim} matrix, got {self.get('problem.beta')!r}")
            phi = self.get("problem.phi")
            if not isinstance(phi, list) or len(phi) != p:
                errors.append(f"problem.phi: expected {p} entries, got {phi!r}")
        else:
            N = _matrix(self.get("problem.N"))
            if N.shape[1] != p:
                errors.append(f"problem.N: needs {p} columns to match mirror.actions")
        reference = self.get("mirror.reference")
        if reference is not None:
            values = np.asarray(reference, dtype=float) if isinstance(reference, list) else None
            if values is None or values.shape != (p,):
                errors.append(f"mirror.reference: expected {p} probabilities, got {reference!r}")
            elif np.any(values <= 0) or abs(float(np.sum(values)) - 1.0) > 1e-12:
                errors.append(f"mirror.reference: must be strictly positive and sum to 1, got sum {float(np.sum(values))!r}")

    def _validate_grid_and_flow(self, errors: List[str]):
        try:
            spec = self.grid_spec()
        except MirrorFlowError as e:
            errors.append(f"grid: {e}")
            return
        except (TypeError, ValueError) as e:
            errors.append(f"grid: {e}")
            return

        if self.get("flow.eta0") <= 0:
            errors.append("flow.eta0: must be positive")
        if self.get("flow.S") is not None and self.get("flow.S") <= 0:
            errors.append("flow.S: must be positive")
        if self.get("flow.init") not in ("zero", "random"):
            errors.append(f"flow.init: must be 'zero' or 'random', got {self.get('flow.init')!r}")
        if self.get("flow.seed") < 0:
            errors.append("flow.seed: must be a non-negative integer")
        probe = self.get("flow.probe")
        if probe is not None:
            if not isinstance(probe, list) or len(probe) != 1 + spec.dim:
                errors.append(f"flow.probe: expected [t, x1{', x2' if spec.dim == 2 else ''}], got {probe!r}")
            else:
                t, x = float(probe[0]), probe[1:]
                inside = all(lo < float(v) < hi for v, lo, hi in zip(x, spec.lo, spec.hi))
                if not 0 <= t < spec.horizon or not inside:
                    errors.append(f"flow.probe: {probe} is not inside [0, {spec.horizon}) x domain")
        for s in self.get("flow.snapshots"):
            if isinstance(s, bool) or not isinstance(s, (int, float)) or s < 0:
                errors.append(f"flow.snapshots: entries must be non-negative numbers, got {s!r}")

    def _validate_sections(self, errors: List[str]):
        try:
            self.scheme_config()
        except ConfigError as e:
            errors.extend(e.errors)
        if self.get("hjb.tolerance") <= 0:
            errors.append("hjb.tolerance: must be positive")
        if self.get("hjb.max_rounds") < 1:
            errors.append("hjb.max_rounds: must be at least 1")
        if self.get("hjb.clamp") < 0:
            errors.append("hjb.clamp: must be non-negative")
        if not 0 <= self.get("certificates.allowance") < 1:
            errors.append("certificates.allowance: must lie in [0, 1)")
        lam = self.get("certificates.lambda")
        if lam is not None and lam < 0:
            errors.append("certificates.lambda: must be non-negative")
        if self.get("certificates.gauge_steps") < 1:
            errors.append("certificates.gauge_steps: must be at least 1")
        if not isinstance(self.get("output.dir"), str) or not self.get("output.dir"):
            errors.append("output.dir: expected a directory path")
        level = str(self.get("logging.level", "")).upper()
        if level not in LOG_LEVELS:
            errors.append(f"logging.level: must be one of {LOG_LEVELS}, got {self.get('logging.level')!r}")

    def normalized(self) -> "ExperimentConfig":
        """Copy with every derived default written out"""
        normal = ExperimentConfig(deepcopy(self.config), source=self.source)
        normal.set("mirror.kind", self.mirror_kind())
        if self.mirror_kind() == "simplex":
            p = self.action_count()
            normal.set("mirror.actions", p)
            if self.get("mirror.reference") is None:
                normal.set("mirror.reference", [1.0 / p] * p)
        t, x = self.probe()
        normal.set("flow.probe", [t] + x)
        normal.set("flow.S", self.horizon_S())
        if self.get("certificates.lambda") is None:
            normal.set("certificates.lambda", 2.0 * self.tau)
        normal.set("logging.level", str(self.get("logging.level")).upper())
        return normal


def validate_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load, check and normalize a configuration file; raises ConfigError listing every problem"""
    config = ExperimentConfig.from_file(path)
    errors = config.validate()
    if errors:
        for error in errors:
            config.logger.error(f"Configuration error: {error}")
        raise ConfigError(errors)
    return config.normalized()


def preset_path(name: str) -> Path:
    """Location of a bundled preset by name (with or without the .cfg suffix)"""
    stem = name[:-4] if name.endswith(".cfg") else name
    path = PRESET_DIR / f"{stem}.cfg"
    if not path.exists():
        available = sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))
        raise ConfigError([f"preset '{name}' not found; available: {', '.join(available)}"])
    return path
