# domain/schemas.py
"""Request schemas for the command-line surface.

Each subcommand validates one of these from its JSON config file merged with its flags.
Unknown keys are rejected so typos in a config file surface as configuration errors.
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain.models import CorrelationModel, PoolWeights, SimConfig


class RequestModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CliConfig(RequestModel):
    """Options shared by every subcommand."""
    command: str
    config_file: Optional[str] = None
    out: Optional[str] = None
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    threads: Optional[int] = Field(None, ge=1)
    log_level: Optional[Literal["DEBUG", "INFO", "WARNING", "ERROR"]] = None


# ========== Theory Queries ==========
class BulkRequest(RequestModel):
    delta: float = Field(..., ge=0.0)
    gamma: float = Field(..., gt=0.0)
    kappa: float = Field(1.0, gt=0.0)


class DensityRequest(BulkRequest):
    points: int = Field(2048, ge=2)
    x_max: Optional[float] = Field(None, gt=0.0)
    eta: Optional[float] = Field(None, gt=0.0)


class PoolingRequest(RequestModel):
    R: CorrelationModel
    strategy: Literal["mean", "causal", "optimal", "custom"] = "causal"
    weights: Optional[PoolWeights] = None

    @model_validator(mode="after")
    def check_weights(self) -> "PoolingRequest":
        if self.strategy == "custom" and self.weights is None:
            raise ValueError("strategy 'custom' needs explicit weights")
        if self.weights is not None and self.weights.T != self.R.T:
            raise ValueError(f"{self.weights.T} weights for a correlation with T={self.R.T}")
        return self


class SpikeRequest(PoolingRequest):
    delta: float = Field(..., ge=0.0)
    gamma: float = Field(..., gt=0.0)
    mu_norm: float = Field(..., ge=0.0)


class ThresholdsRequest(PoolingRequest):
    delta: float = Field(..., ge=0.0)
    gamma: float = Field(..., gt=0.0)


class OptimalWeightsRequest(RequestModel):
    R: CorrelationModel


class CausalWeightsRequest(RequestModel):
    T: int = Field(..., gt=0)


# ========== Simulation ==========
class SimulateRequest(SimConfig):
    dump: bool = False


class ClassifyRequest(SimConfig):
    strategy: Literal["mean", "causal", "optimal", "learned"] = "causal"
    lambda_ridge: float = Field(1.0, gt=0.0)
    split: float = Field(0.8, gt=0.0, lt=1.0)


class AttnConcentrationRequest(RequestModel):
    d_grid: List[int] = Field(default_factory=lambda: [200, 400, 800, 1600, 3200], min_length=2)
    R: Optional[CorrelationModel] = None
    T: int = Field(10, gt=0)
    tau: float = Field(1.0, ge=0.0)
    n_sequences: int = Field(300, ge=1)
    trials: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    mu_norm: float = Field(1.0, ge=0.0)
    vocab_factor: int = Field(64, ge=1)
    noise_kind: Literal["gaussian", "rademacher"] = "gaussian"

    @model_validator(mode="after")
    def check_grid(self) -> "AttnConcentrationRequest":
        if any(b <= a for a, b in zip(self.d_grid, self.d_grid[1:])):
            raise ValueError("d_grid must be strictly ascending")
        if self.R is not None and self.R.T != self.T:
            raise ValueError(f"R has T={self.R.T}, request has T={self.T}")
        return self
