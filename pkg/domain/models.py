# domain/models.py
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)
from typing import Any, Dict, List, Literal, Optional, Tuple, Union
import math

import numpy as np
import pandas as pd

SYMMETRY_TOL = 1e-12
PSD_FLOOR = -1e-10
WEIGHT_SUM_TOL = 1e-12
UNIT_NORM_TOL = 1e-10
STRUCTURE_TOL = 1e-10

PoolingLabel = Literal["mean", "causal", "optimal", "custom"]
Strategy = Literal["mean", "causal", "optimal", "learned"]
ExperimentName = Literal["bulk", "align", "thresholds", "snr", "phase_diagram", "classify", "attn_concentration"]


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")


# ========== Model Dimensions ==========
class ModelDims(FrozenModel):
    d: Optional[int] = Field(None, gt=0, description="Embedding dimension")
    V: Optional[int] = Field(None, gt=0, description="Vocabulary size, even so signs can balance")
    N: Optional[int] = Field(None, gt=0, description="Number of pooled sequences")
    T: int = Field(..., gt=0, description="Sequence length")
    mu_norm: float = Field(0.0, ge=0.0, description="Signal strength ||mu||")
    delta: Optional[float] = Field(None, gt=0.0, description="Ratio d/V")
    gamma: Optional[float] = Field(None, gt=0.0, description="Ratio d/N")

    @model_validator(mode="before")
    @classmethod
    def fill_ratios(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            d, V, N = data.get("d"), data.get("V"), data.get("N")
            if d and V and data.get("delta") is None:
                data["delta"] = d / V
            if d and N and data.get("gamma") is None:
                data["gamma"] = d / N
        return data

    @model_validator(mode="after")
    def check_ratios(self) -> "ModelDims":
        if self.V is not None and self.V % 2:
            raise ValueError(f"V must be even so signs can balance, got V={self.V}")
        if self.delta is None or self.gamma is None:
            raise ValueError("delta and gamma are required, directly or through d, V and N")
        if self.d and self.V and not math.isclose(self.delta, self.d / self.V, rel_tol=1e-12):
            raise ValueError(f"delta={self.delta} disagrees with d/V={self.d / self.V}")
        if self.d and self.N and not math.isclose(self.gamma, self.d / self.N, rel_tol=1e-12):
            raise ValueError(f"gamma={self.gamma} disagrees with d/N={self.d / self.N}")
        return self

    @property
    def is_finite(self) -> bool:
        return None not in (self.d, self.V, self.N)


# ========== Positional Correlation ==========
def _spike_vector(T: int, support: int, sign_pattern: str) -> List[float]:
    u = np.zeros(T)
    signs = np.ones(support)
    if sign_pattern == "alternating":
        signs[1::2] = -1.0
    u[:support] = signs / math.sqrt(support)
    return u.tolist()


def structured_matrix(kind: str, T: int, L: Optional[int] = None, theta_R: Optional[float] = None,
                      u_R: Optional[List[float]] = None) -> np.ndarray:
    """Prefix block of ones on the identity, or the identity plus theta_R u u'."""
    if kind == "prefix":
        R = np.eye(T)
        R[:L, :L] = 1.0
        return R
    u = np.asarray(u_R, dtype=float)
    return np.eye(T) + float(theta_R) * np.outer(u, u)


class CorrelationModel(FrozenModel):
    kind: Literal["prefix", "spiked", "custom"]
    T: int = Field(..., gt=0)
    L: Optional[int] = Field(None, description="Prefix length (prefix kind)")
    theta_R: Optional[float] = Field(None, description="Spike strength (spiked kind)")
    u_R: Optional[List[float]] = Field(None, description="Unit spike direction (spiked kind)")
    support: Optional[int] = Field(None, description="Leading positions carrying u_R when u_R is omitted")
    sign_pattern: Literal["alternating", "uniform"] = "alternating"
    matrix: Optional[List[List[float]]] = None

    @model_validator(mode="before")
    @classmethod
    def realize_matrix(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        kind, T = data.get("kind"), data.get("T")
        if kind == "spiked" and data.get("theta_R") is not None and T and data.get("u_R") is None:
            support = int(data.get("support") or T)
            if not 1 <= support <= T:
                raise ValueError(f"spike support={support} must lie in [1, T={T}]")
            data["u_R"] = _spike_vector(T, support, data.get("sign_pattern", "alternating"))
        if data.get("matrix") is not None:
            return data
        if kind == "prefix" and data.get("L") is not None and T:
            L = int(data["L"])
            if not 1 <= L <= T:
                raise ValueError(f"prefix length L={L} must lie in [1, T={T}]")
            data["matrix"] = structured_matrix("prefix", T, L=L).tolist()
        elif kind == "spiked" and data.get("theta_R") is not None and T:
            data["matrix"] = structured_matrix("spiked", T, theta_R=data["theta_R"], u_R=data["u_R"]).tolist()
        return data

    @model_validator(mode="after")
    def check_matrix(self) -> "CorrelationModel":
        if self.matrix is None:
            raise ValueError(f"{self.kind} correlation is missing its defining parameters")
        R = np.asarray(self.matrix, dtype=float)
        if R.shape != (self.T, self.T):
            raise ValueError(f"shape check failed: matrix is {R.shape}, expected ({self.T}, {self.T})")
        if not np.all(np.isfinite(R)):
            raise ValueError("finiteness check failed: matrix has non-finite entries")
        asym = float(np.max(np.abs(R - R.T)))
        if asym > SYMMETRY_TOL:
            raise ValueError(f"symmetry check failed: max |R - R^T| = {asym:.3e}")
        floor = float(np.linalg.eigvalsh((R + R.T) / 2).min())
        if floor < PSD_FLOOR:
            raise ValueError(f"PSD check failed: smallest eigenvalue {floor:.3e}")
        if self.kind == "prefix":
            if self.L is None or not 1 <= self.L <= self.T:
                raise ValueError(f"prefix correlation needs 1 <= L <= T={self.T}, got L={self.L}")
            expected = structured_matrix("prefix", self.T, L=self.L)
        elif self.kind == "spiked":
            if self.theta_R is None or self.theta_R <= 0:
                raise ValueError(f"spiked correlation needs theta_R > 0, got {self.theta_R}")
            if self.u_R is None:
                raise ValueError("spiked correlation needs its direction u_R")
            norm = float(np.linalg.norm(self.u_R))
            if len(self.u_R) != self.T or abs(norm - 1.0) > UNIT_NORM_TOL:
                raise ValueError(f"u_R must be a unit vector of length T={self.T} (norm {norm})")
            expected = structured_matrix("spiked", self.T, theta_R=self.theta_R, u_R=self.u_R)
        else:
            return self
        gap = float(np.max(np.abs(R - expected)))
        if gap > STRUCTURE_TOL:
            raise ValueError(f"structure check failed: matrix is {gap:.3e} away from the {self.kind} model")
        return self

    @classmethod
    def prefix(cls, L: int, T: int) -> "CorrelationModel":
        return cls(kind="prefix", T=T, L=L)

    @classmethod
    def spiked(cls, theta_R: float, u_R=None, T: Optional[int] = None, support: Optional[int] = None,
               sign_pattern: str = "alternating") -> "CorrelationModel":
        if u_R is not None:
            u = [float(v) for v in u_R]
            return cls(kind="spiked", T=len(u), theta_R=theta_R, u_R=u)
        return cls(kind="spiked", T=T, theta_R=theta_R, support=support, sign_pattern=sign_pattern)

    @classmethod
    def custom(cls, matrix) -> "CorrelationModel":
        R = np.asarray(matrix, dtype=float)
        return cls(kind="custom", T=R.shape[0], matrix=R.tolist())

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    @property
    def is_sign_realizable(self) -> bool:
        R = self.array
        return bool(np.allclose(np.diag(R), 1.0, atol=1e-12) and np.all(np.abs(R) <= 1.0 + 1e-12))


# ========== Pooling Weights ==========
class PoolWeights(FrozenModel):
    w: List[float] = Field(..., min_length=1)
    label: PoolingLabel = "custom"

    @field_validator("w")
    @classmethod
    def check_simplex_sum(cls, v: List[float]) -> List[float]:
        if not all(math.isfinite(x) for x in v):
            raise ValueError("weights must be finite")
        total = math.fsum(v)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        return v

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=float)

    @property
    def T(self) -> int:
        return len(self.w)


class PoolScalars(FrozenModel):
    alpha: float
    kappa: float = Field(..., gt=0.0)
    rho: float
    snr: float

    @model_validator(mode="after")
    def check_rho(self) -> "PoolScalars":
        if self.alpha < -1e-12:
            raise ValueError(f"alpha={self.alpha} is negative; R is not PSD")
        return self


# ========== Bulk Law ==========
class BulkParams(FrozenModel):
    delta: float = Field(..., ge=0.0)
    gamma: float = Field(..., gt=0.0)
    kappa: float = Field(1.0, gt=0.0)


class StieltjesValue(FrozenModel):
    z: complex
    m: complex
    m_companion: complex
    m_prime: Optional[complex] = None
    branch_ok: bool = True


class BulkLaw(ArrayModel):
    params: BulkParams
    grid: np.ndarray
    density: np.ndarray
    valid: np.ndarray
    eta: float
    edge_right: float
    edge_left: float
    edge_roots: Tuple[float, float, float]

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.grid, "rho": self.density})


# ========== Spike Report ==========
class SpikeReport(FrozenModel):
    rho: float
    beta_out: Optional[float] = None
    pop_overlap: float = Field(..., ge=0.0, le=1.0)
    beta_crit: float
    lambda_out: Optional[float] = None
    sample_overlap: float = Field(..., ge=0.0, le=1.0)
    total_alignment: float = Field(..., ge=0.0, le=1.0)
    mu_pop: float
    mu_samp: float
    regime: Literal["subcritical_pop", "subcritical_sample", "supercritical"]
    clamped: bool = False

    @model_validator(mode="after")
    def check_regime(self) -> "SpikeReport":
        if self.lambda_out is not None and self.beta_out is None:
            raise ValueError("lambda_out requires a population outlier beta_out")
        if self.mu_samp < self.mu_pop * (1 - 1e-12):
            raise ValueError(f"mu_samp={self.mu_samp} below mu_pop={self.mu_pop}")
        return self


# ========== Simulation ==========
class SimConfig(FrozenModel):
    dims: ModelDims
    R: CorrelationModel
    pooling: Union[Literal["mean", "causal", "optimal", "attention"], PoolWeights] = "causal"
    attention_tau: float = Field(1.0, ge=0.0, description="Score scale tau for pooling='attention'")
    noise_kind: Literal["gaussian", "rademacher"] = "gaussian"
    xi_mode: Literal["binary", "gaussian_factor"] = "binary"
    table: Literal["centered", "raw"] = Field(
        "centered", description="centered: noise columns have zero mean within each sign class"
    )
    seed: int = Field(0, ge=0, lt=2**64)
    trials: int = Field(1, ge=1)
    label_prefix: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def check_shapes(self) -> "SimConfig":
        if not self.dims.is_finite:
            raise ValueError("simulation needs finite d, V and N")
        if self.dims.T != self.R.T:
            raise ValueError(f"dims.T={self.dims.T} does not match R.T={self.R.T}")
        if isinstance(self.pooling, PoolWeights) and self.pooling.T != self.dims.T:
            raise ValueError(f"pooling has {self.pooling.T} weights, expected T={self.dims.T}")
        if self.label_prefix is not None and self.label_prefix > self.dims.T:
            raise ValueError(f"label_prefix={self.label_prefix} exceeds T={self.dims.T}")
        if self.table == "centered" and self.dims.V < 4:
            raise ValueError(f"a centered table needs at least two tokens per class, got V={self.dims.V}")
        return self

    @property
    def label_length(self) -> Optional[int]:
        if self.label_prefix is not None:
            return self.label_prefix
        return self.R.L if self.R.kind == "prefix" else None

    def with_updates(self, **dims_updates) -> "SimConfig":
        """Copy with dimension fields replaced, re-deriving delta and gamma."""
        raw = self.dims.model_dump()
        raw.update(dims_updates)
        if {"d", "V"} & dims_updates.keys():
            raw["delta"] = None
        if {"d", "N"} & dims_updates.keys():
            raw["gamma"] = None
        return self.model_copy(update={"dims": ModelDims(**raw)})


class Dataset(ArrayModel):
    E: np.ndarray
    signs: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    tokens: np.ndarray
    weights: np.ndarray
    C: np.ndarray
    y: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.C.shape[1]


class EmpiricalSpectrum(ArrayModel):
    eigenvalues: np.ndarray
    top_vector: np.ndarray
    top_vector_alignment: float = Field(..., ge=0.0, le=1.0 + 1e-12)
    top_gap: float


# ========== Experiments ==========
class Sweep(FrozenModel):
    parameter: str
    values: List[float] = Field(..., min_length=1)

    @field_validator("values")
    @classmethod
    def check_ascending(cls, v: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep grid must be strictly ascending")
        return v


class ExperimentSpec(FrozenModel):
    name: ExperimentName
    base: SimConfig
    sweep: Sweep
    secondary: Optional[Sweep] = Field(None, description="Second grid axis (phase diagram delta)")
    strategies: List[Strategy] = Field(default_factory=lambda: ["mean", "causal", "optimal"])
    theory_only: bool = False
    outputs: str = "./out"
    lambda_ridge: float = Field(1.0, gt=0.0)
    split: float = Field(0.8, gt=0.0, lt=1.0)
    tau: float = Field(1.0, ge=0.0)
    n_sequences: int = Field(300, ge=1)
    vocab_factor: int = Field(64, ge=1, description="V = vocab_factor * d in the attention study")

    @model_validator(mode="after")
    def check_strategies(self) -> "ExperimentSpec":
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if "learned" in self.strategies and self.name != "classify":
            raise ValueError("learned weights only exist for the classify experiment")
        return self


class ResultTable(ArrayModel):
    frame: pd.DataFrame
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_error_columns(self) -> "ResultTable":
        for column in self.frame.columns:
            if column.endswith("_mc"):
                stem = column[: -len("_mc")]
                if f"{stem}_se" not in self.frame.columns or "n_trials" not in self.frame.columns:
                    raise ValueError(f"Monte Carlo column '{column}' needs '{stem}_se' and 'n_trials'")
        return self
