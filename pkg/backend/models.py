from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import (
    BASELINE_ITERATIONS,
    CLASSIFIER_THRESHOLD,
    MARGINAL_TOLERANCE,
    REPAIR_EPSILON,
    REPAIR_ITERATIONS,
    REPAIR_VAREPSILON,
    TABULAR_VAREPSILON,
    TV_THRESHOLD,
)

Method = Literal["none", "baseline", "dykstra", "barycentre"]
CostWeights = Literal["unit", "reciprocal-range", "explicit"]


class RunConfig(BaseModel):
    """Settings of one repair run (CLI flags and JSON config files map onto these fields)"""
    epsilon: float = REPAIR_EPSILON
    lam: Union[float, List[float]] = Field(default=0.0, alias="lambda")
    iterations: int = REPAIR_ITERATIONS
    baseline_iterations: int = BASELINE_ITERATIONS
    varepsilon: Optional[float] = None
    marginal_tolerance: Optional[float] = MARGINAL_TOLERANCE
    pairing: Literal["dykstra", "shifted"] = "dykstra"
    warm_start: bool = True

    adjusted_columns: List[str] = Field(default_factory=lambda: ["x"])
    group_column: Optional[str] = "s"
    label_column: Optional[str] = "y"
    score_column: Optional[str] = None
    weight_column: Optional[str] = None
    group_values: Optional[List[str]] = None
    positive_label: Optional[str] = None
    unprivileged_group: Optional[str] = None

    cost_weights: Optional[CostWeights] = None
    explicit_weights: Optional[List[float]] = None
    tv_threshold: float = TV_THRESHOLD
    classifier_threshold: float = CLASSIFIER_THRESHOLD
    rounding: Dict[str, int] = Field(default_factory=dict)

    v_file: Optional[str] = None
    target_file: Optional[str] = None
    trials: int = 1
    train_frac: float = 0.6
    seed: int = 0
    pi0: Optional[float] = None

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    @field_validator("epsilon", "tv_threshold")
    @classmethod
    def positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("varepsilon", "marginal_tolerance")
    @classmethod
    def positive_or_unset(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("iterations", "baseline_iterations", "trials")
    @classmethod
    def at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("lam")
    @classmethod
    def lambda_nonnegative(cls, value):
        values = value if isinstance(value, list) else [value]
        if any(v < 0 for v in values):
            raise ValueError("lambda entries must be nonnegative")
        return value

    @field_validator("adjusted_columns")
    @classmethod
    def columns_not_blank(cls, value: List[str]) -> List[str]:
        value = [c.strip() for c in value if c.strip()]
        if not value:
            raise ValueError("At least one adjusted column is required.")
        return value

    @field_validator("classifier_threshold", "train_frac")
    @classmethod
    def open_unit_interval(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("must lie strictly between 0 and 1")
        return value

    @field_validator("pi0")
    @classmethod
    def pi0_in_unit_interval(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0 <= value <= 1:
            raise ValueError("pi0 must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def explicit_weights_given(self) -> "RunConfig":
        if self.cost_weights == "explicit":
            if not self.explicit_weights:
                raise ValueError("cost_weights='explicit' needs explicit_weights")
            if len(self.explicit_weights) != len(self.adjusted_columns):
                raise ValueError("explicit_weights needs one entry per adjusted column")
        return self

    def resolved_varepsilon(self, tabular: bool) -> float:
        if self.varepsilon is not None:
            return self.varepsilon
        return TABULAR_VAREPSILON if tabular else REPAIR_VAREPSILON

    def resolved_cost_weights(self, tabular: bool) -> CostWeights:
        if self.cost_weights is not None:
            return self.cost_weights
        return "reciprocal-range" if tabular else "unit"


class SyntheticSpec(BaseModel):
    """Two Gaussian groups floored onto an integer grid, plus a Gaussian target"""
    lo: int = -30
    hi: int = 10
    group_probs: Tuple[float, float] = (0.7, 0.3)
    group0: Tuple[float, float] = (-10.0, 6.0)
    group1: Tuple[float, float] = (1.0, 3.0)
    target: Tuple[float, float] = (-5.0, 5.0)
    samples: int = 10_000
    seed: int = 0
    label_noise: float = 3.0

    model_config = ConfigDict(extra="forbid")

    @field_validator("group0", "group1", "target")
    @classmethod
    def sigma_positive(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not value[1] > 0:
            raise ValueError("Gaussian sigma must be positive")
        return value

    @field_validator("group_probs")
    @classmethod
    def probabilities(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if min(value) < 0 or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError("Group probabilities must be nonnegative and sum to 1")
        return value

    @field_validator("samples")
    @classmethod
    def samples_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("At least one sample is required")
        return value

    @model_validator(mode="after")
    def support_ordered(self) -> "SyntheticSpec":
        if self.lo >= self.hi:
            raise ValueError("Support needs lo < hi")
        return self


# ---------- HTTP payloads ----------
class SyntheticRepairRequest(BaseModel):
    """Repair a freshly generated synthetic dataset"""
    spec: SyntheticSpec = Field(default_factory=SyntheticSpec)
    config: RunConfig = Field(default_factory=RunConfig)
    method: Method = "dykstra"


class RowsRepairRequest(BaseModel):
    """Repair rows posted as JSON records"""
    rows: List[Dict[str, Any]]
    config: RunConfig = Field(default_factory=RunConfig)
    method: Method = "dykstra"

    @field_validator("rows")
    @classmethod
    def rows_not_empty(cls, value: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
        if not value:
            raise ValueError("At least one row is required.")
        return value


class MetricsRequest(BaseModel):
    """Fairness and accuracy indices for given predictions"""
    predictions: List[int]
    groups: List[Any]
    labels: Optional[List[int]] = None
    sample_weight: Optional[List[float]] = None
    unprivileged_group: Optional[str] = None


class TVTableRequest(BaseModel):
    """Group-wise TV distance per column"""
    rows: List[Dict[str, Any]]
    group_column: str
    columns: Optional[List[str]] = None
    threshold: float = TV_THRESHOLD
    unprivileged_group: Optional[str] = None


class RepairResponse(BaseModel):
    method: Method
    metrics: Dict[str, Any]
    support: List[str]
    target_support: List[str]
    coupling: List[List[float]]
    distributions: List[Dict[str, Any]]
    projected_rows: int
