"""
Artifacts - Writers and readers for run outputs
Deterministic JSON for certificates, the run manifest, and the grid-field/trace CSV readers.
"""

import json
import logging
import math
import platform
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from .flow import FlowTrace
from .grid import Field, Grid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

VSTAR_FILE = "Vstar.csv"
USTAR_FILE = "ustar.csv"
TRACE_FILE = "trace.csv"
CERTIFICATES_FILE = "certificates.json"
MANIFEST_FILE = "manifest.json"
CONFIG_ECHO_FILE = "config.normalized.cfg"
SNAPSHOT_DIR = "snapshots"


def _plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as null"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: PathLike, data: Dict[str, Any]) -> Path:
    """Sorted keys and fixed indentation, so equal data gives identical bytes"""
    path = Path(path)
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)


def snapshot_name(s: float) -> str:
    return f"u_s{s:g}.csv"


def write_snapshots(out_dir: PathLike, snapshots: Dict[float, Field]) -> Dict[str, str]:
    """One control CSV per requested flow time; returns {s: relative path}"""
    if not snapshots:
        return {}
    directory = Path(out_dir) / SNAPSHOT_DIR
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for s, control in sorted(snapshots.items()):
        control.to_csv(directory / snapshot_name(s))
        written[f"{s:g}"] = f"{SNAPSHOT_DIR}/{snapshot_name(s)}"
    logger.info(f"Wrote {len(written)} control snapshots to {directory}")
    return written


def read_value_field(grid: Grid, out_dir: PathLike) -> Field:
    return Field.from_csv(grid, Path(out_dir) / VSTAR_FILE, with_boundary=True)


def read_control_field(grid: Grid, out_dir: PathLike) -> Field:
    return Field.from_csv(grid, Path(out_dir) / USTAR_FILE)


def read_trace(out_dir: PathLike) -> FlowTrace:
    return FlowTrace.from_csv(Path(out_dir) / TRACE_FILE)


def library_versions() -> Dict[str, str]:
    import scipy

    from .. import __version__

    return {
        "mirrorflow": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }
