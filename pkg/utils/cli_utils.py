# utils/cli_utils.py
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

from pydantic import BaseModel

from core.errors import ConfigError
from core.config import settings
from utils.io_utils import deep_merge, jsonable, load_json, read_matrix

M = TypeVar("M", bound=BaseModel)


def prune(data: Dict[str, Any]) -> Dict[str, Any]:
    """Drop unset flags (None) and the empty sections they leave behind."""
    out = {}
    for key, value in data.items():
        if isinstance(value, dict):
            value = prune(value)
            if not value:
                continue
        if value is not None:
            out[key] = value
    return out


def build_request(
    model: Type[M], args: argparse.Namespace, flags: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None
) -> M:
    """Validate model from defaults < --config file < explicit flags."""
    file_data = load_json(args.config) if getattr(args, "config", None) else {}
    merged = deep_merge(deep_merge(defaults or {}, file_data), prune(flags))
    return model.model_validate(merged)


def add_correlation_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("positional correlation R")
    group.add_argument("--L", type=int, help="prefix model: length of the fully correlated leading block")
    group.add_argument("--theta-R", dest="theta_R", type=float,
                       help="spiked model: strength of the rank-one positional spike")
    group.add_argument("--support", type=int,
                       help="spiked model: number of leading positions carrying the spike direction")
    group.add_argument("--sign-pattern", dest="sign_pattern", choices=["alternating", "uniform"],
                       help="spiked model: signs of the spike direction on its support")
    group.add_argument("--R-file", dest="R_file",
                       help="custom model: comma-separated matrix file with a '# T=<int> kind=<name>' header")


def correlation_from_args(args: argparse.Namespace, T: Optional[int]) -> Optional[Dict[str, Any]]:
    """R section of a request built from the correlation flags, or None when none were given."""
    if getattr(args, "R_file", None):
        matrix = read_matrix(args.R_file)
        return {"kind": "custom", "T": matrix.shape[0], "matrix": matrix.tolist()}
    if getattr(args, "theta_R", None) is None and getattr(args, "L", None) is None:
        return None
    if T is None:
        T = _config_T(args)
    if T is None:
        raise ConfigError("--T is required when R is given through flags")
    if args.theta_R is not None:
        return {"kind": "spiked", "T": T, "theta_R": args.theta_R,
                "support": args.support, "sign_pattern": args.sign_pattern or "alternating"}
    return {"kind": "prefix", "T": T, "L": args.L}


def _config_T(args: argparse.Namespace) -> Optional[int]:
    if not getattr(args, "config", None):
        return None
    data = load_json(args.config)
    return data.get("T") or data.get("dims", {}).get("T") or data.get("R", {}).get("T")


def emit(payload: Any) -> None:
    """Small answers go to stdout as JSON at full precision."""
    json.dump(jsonable(payload), sys.stdout, indent=2)
    sys.stdout.write("\n")


def out_dir(args: argparse.Namespace, name: str) -> Path:
    return Path(args.out or settings.OUT_DIR) / name
