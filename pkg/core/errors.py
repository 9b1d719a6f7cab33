# core/errors.py
"""Exception hierarchy shared by the services and the CLI.

Each error carries the process exit code the CLI should return for it.
"""
from typing import Any, Dict, Optional


class AttnSpecError(Exception):
    exit_code = 1

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(AttnSpecError):
    """Bad or degenerate run configuration."""
    exit_code = 2


class ConsistencyError(AttnSpecError):
    """A numerical invariant the theory guarantees was violated."""
    exit_code = 1


class BranchError(ConsistencyError):
    """No Stieltjes root could be tied to the analytic branch."""


class UnattainableError(AttnSpecError):
    """The all-ones vector is orthogonal to the top eigenspace of R."""
    exit_code = 1

    def __init__(self, supremum: float):
        super().__init__(
            f"optimal weights are unattainable: 1 is orthogonal to the top eigenspace "
            f"(supremum of alpha/kappa is {supremum!r})",
            {"supremum": supremum},
        )
        self.supremum = supremum
