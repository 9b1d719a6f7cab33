# utils/io_utils.py
import json
import logging
import subprocess
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.config import __version__
from core.errors import ConfigError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


@lru_cache(maxsize=1)
def version_string() -> str:
    """git describe of the working tree, or the package version outside a checkout."""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent.parent,
            capture_output=True, text=True, timeout=5, check=True,
        )
        described = result.stdout.strip()
        if described:
            return described
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def load_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def deep_merge(base: Dict[str, Any], override: Dict[str, Any], replace=("R",)) -> Dict[str, Any]:
    """Recursive dict merge; override wins, lists and keys in replace are taken whole."""
    merged = dict(base)
    for key, value in override.items():
        if key not in replace and isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value, replace)
        else:
            merged[key] = value
    return merged


def jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_table(frame: pd.DataFrame, path: Path, header: Optional[Dict[str, float]] = None) -> Path:
    """Headered CSV at full precision, preceded by one '# key=value' line per header entry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in (header or {}).items():
            f.write(f"# {key}={FLOAT_FORMAT % value}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_result(
    out_dir: Path, frame: pd.DataFrame, manifest: Dict[str, Any], header: Optional[Dict[str, float]] = None
) -> Path:
    """table.csv and manifest.json under out_dir; returns the directory."""
    out_dir = Path(out_dir)
    write_table(frame, out_dir / "table.csv", header)
    write_json(out_dir / "manifest.json", {"version": version_string(), **manifest})
    logger.info(f"wrote {len(frame)} rows to {out_dir / 'table.csv'}")
    return out_dir


# ========== Matrix Text Format ==========
def _read_header(path: str) -> Dict[str, str]:
    header: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line:
                continue
            if not line.startswith("#"):
                break
            for token in line.lstrip("#").split():
                if "=" in token:
                    key, value = token.split("=", 1)
                    header[key] = value
    return header


def read_array(path: str) -> Tuple[np.ndarray, Dict[str, str]]:
    """Comma-separated rows after a '# T=<int> kind=<string>' header; '#' starts a comment."""
    try:
        header = _read_header(path)
        frame = pd.read_csv(path, comment="#", header=None, dtype=float, float_precision="round_trip")
    except FileNotFoundError:
        raise ConfigError(f"matrix file not found: {path}")
    except pd.errors.EmptyDataError:
        raise ConfigError(f"matrix file {path} holds no values")
    except (ValueError, pd.errors.ParserError) as e:
        raise ConfigError(f"matrix file {path} is not a numeric CSV: {e}")
    values = frame.to_numpy()
    if values.size == 0 or np.isnan(values).any():
        raise ConfigError(f"matrix file {path} has missing entries")
    return values, header


def _declared_T(path: str, header: Dict[str, str], T: int) -> None:
    if "T" in header and int(header["T"]) != T:
        raise ConfigError(f"matrix file {path} declares T={header['T']} but holds T={T}")


def read_matrix(path: str) -> np.ndarray:
    values, header = read_array(path)
    if values.shape[0] != values.shape[1]:
        raise ConfigError(f"matrix file {path} must hold a square matrix, got {values.shape}")
    _declared_T(path, header, values.shape[0])
    return values


def read_weights(path: str) -> List[float]:
    """A weight vector stored as one row (or one column) of T values."""
    values, header = read_array(path)
    if min(values.shape) != 1:
        raise ConfigError(f"weights file {path} must hold a single row, got {values.shape}")
    w = values.ravel()
    _declared_T(path, header, w.size)
    return w.tolist()


def write_array(path: Path, values: np.ndarray, kind: str) -> Path:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# T={values.shape[1]} kind={kind}\n")
        pd.DataFrame(values).to_csv(f, header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_matrix(path: Path, matrix: np.ndarray, kind: str = "custom") -> Path:
    return write_array(path, matrix, kind)


def write_weights(path: Path, w, kind: str = "weights") -> Path:
    return write_array(path, np.asarray(w, dtype=float).reshape(1, -1), kind)


def dump_arrays(out_dir: Path, arrays: Dict[str, np.ndarray], manifest: Dict[str, Any]) -> Path:
    """One headerless CSV per array plus manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, array in arrays.items():
        array = np.asarray(array)
        frame = pd.DataFrame(array if array.ndim == 2 else array.reshape(-1, 1))
        frame.to_csv(out_dir / f"{name}.csv", index=False, header=False,
                     float_format=FLOAT_FORMAT, lineterminator="\n")
    write_json(out_dir / "manifest.json", {"version": version_string(), **manifest})
    return out_dir
