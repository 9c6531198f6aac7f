from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import PlanInvalid


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelFamily(str, Enum):
    GEOMETRIC = "geometric"
    DISCRETE = "discrete"
    RWM = "rwm"
    GIBBS = "gibbs"
    ISING = "ising"


class EstimatorKind(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    CV = "cv"
    TIMEAVG = "timeavg"
    TIMEAVG_CV = "timeavg_cv"

    @property
    def uses_cv(self) -> bool:
        return self in (EstimatorKind.CV, EstimatorKind.TIMEAVG_CV)

    @property
    def plain(self) -> "EstimatorKind":
        """The estimator a control-variate kind is compared against for RRV."""
        return {
            EstimatorKind.CV: EstimatorKind.BACKWARD,
            EstimatorKind.TIMEAVG_CV: EstimatorKind.TIMEAVG,
        }.get(self, self)


class BoundMethod(str, Enum):
    EMPIRICAL = "empirical"
    EXACT = "exact"


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


class VacuousFlag(str, Enum):
    NONE = "none"
    OLD = "old"
    NEW = "new"
    BOTH = "old+new"

    @classmethod
    def of(cls, old: float, new: float) -> "VacuousFlag":
        if old > 1.0 and new > 1.0:
            return cls.BOTH
        if old > 1.0:
            return cls.OLD
        if new > 1.0:
            return cls.NEW
        return cls.NONE


# Kernel sections, discriminated on `family`

class GeometricKernelConfig(StrictModel):
    family: Literal["geometric"] = "geometric"
    p: float = Field(gt=0.0, le=1.0)


class DiscreteKernelConfig(StrictModel):
    family: Literal["discrete"] = "discrete"
    matrix: List[List[float]]
    # distribution of X_0 and Y_0; defaults to a point mass at state 0
    initial: Optional[List[float]] = None


class RWMKernelConfig(StrictModel):
    family: Literal["rwm"] = "rwm"
    dimension: int = Field(1, ge=1)
    proposal_scale: float = Field(gt=0.0)
    target_mean: float = 0.0
    target_scale: float = Field(1.0, gt=0.0)
    initial_mean: float = 0.0
    initial_scale: float = Field(1.0, ge=0.0)


class GibbsKernelConfig(StrictModel):
    family: Literal["gibbs"] = "gibbs"
    rho: float = Field(gt=-1.0, lt=1.0)
    initial_mean: float = 0.0
    initial_scale: float = Field(1.0, ge=0.0)


class IsingKernelConfig(StrictModel):
    family: Literal["ising"] = "ising"
    side: int = Field(ge=2)
    beta: float = Field(gt=0.0)
    initial: Literal["random", "all_up"] = "random"


KernelConfig = Annotated[
    Union[
        GeometricKernelConfig,
        DiscreteKernelConfig,
        RWMKernelConfig,
        GibbsKernelConfig,
        IsingKernelConfig,
    ],
    Field(discriminator="family"),
]


class KGrid(StrictModel):
    start: int = Field(0, ge=0)
    stop: int
    step: int = Field(1, ge=1)

    def values(self) -> List[int]:
        return list(range(self.start, self.stop + 1, self.step))

    @model_validator(mode="after")
    def check_nonempty(self):
        if self.stop < self.start:
            raise ValueError(f"k grid is empty (start={self.start} > stop={self.stop})")
        return self


class EstimatorRequest(StrictModel):
    kind: EstimatorKind
    k: int = Field(0, ge=0)
    r: Optional[int] = None

    @model_validator(mode="after")
    def check_window(self):
        if self.r is not None and self.r < self.k:
            raise ValueError(f"r ({self.r}) must be >= k ({self.k})")
        return self

    @property
    def end(self) -> int:
        return self.k if self.r is None else self.r


class OutputConfig(StrictModel):
    dir: str = "results"
    formats: List[OutputFormat] = [OutputFormat.CSV, OutputFormat.JSON]


class ValidateConfig(StrictModel):
    battery_size: int = Field(500, ge=1)
    faithfulness_draws: int = Field(20_000, ge=100)
    alpha: float = Field(0.001, gt=0.0, lt=1.0)


class GeometricSweep(StrictModel):
    p_values: List[float] = Field(min_length=1)

    @field_validator("p_values")
    @classmethod
    def check_p(cls, values: List[float]) -> List[float]:
        bad = [p for p in values if not 0.0 < p <= 1.0]
        if bad:
            raise ValueError(f"geometric p values must lie in (0, 1], got {bad}")
        return values


class Config(StrictModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    seed: int = Field(0, ge=0)
    processes: int = Field(2, ge=1)
    replicates: int = Field(1, ge=1)
    lags: List[Annotated[int, Field(ge=1)]] = Field(min_length=1)
    k_grid: KGrid
    max_sweeps: int = Field(100_000, ge=2)
    bound_method: BoundMethod = BoundMethod.EMPIRICAL
    kernel: KernelConfig
    estimators: List[EstimatorRequest] = []
    h: List[str] = ["identity"]
    bootstrap: int = Field(500, ge=10)
    geometric: Optional[GeometricSweep] = None
    output: OutputConfig = Field(default_factory=OutputConfig)
    validation: ValidateConfig = Field(default_factory=ValidateConfig, alias="validate")


class ExperimentPlan(StrictModel):
    """What the runner executes: one config narrowed to one command."""

    kernel: KernelConfig
    lags: List[int]
    k_values: List[int]
    processes: int
    replicates: int
    master_seed: int
    max_sweeps: int
    bound_method: BoundMethod = BoundMethod.EMPIRICAL
    run_bounds: bool = True
    estimators: List[EstimatorRequest] = []
    h: List[str] = ["identity"]
    bootstrap: int = 500

    @model_validator(mode="after")
    def check_plan(self):
        # raised as PlanInvalid (not ValueError) so pydantic lets it through
        if not self.lags or not self.k_values:
            raise PlanInvalid("lag list and k grid must be nonempty")
        if any(lag < 1 for lag in self.lags) or any(k < 0 for k in self.k_values):
            raise PlanInvalid("lags must be >= 1 and k values >= 0")
        if not self.run_bounds and not self.estimators:
            raise PlanInvalid("plan requests neither bounds nor estimators")
        needs_medians = any(req.kind.uses_cv for req in self.estimators) or (
            self.run_bounds and self.bound_method == BoundMethod.EMPIRICAL
        )
        if needs_medians and self.processes < 2:
            raise PlanInvalid(
                "at least 2 processes are needed for leave-one-out medians "
                f"(got processes={self.processes})"
            )
        if self.kernel.family == KernelFamily.GEOMETRIC.value and self.estimators:
            raise PlanInvalid("geometric injection draws meeting times only; estimators need a kernel")
        if self.estimators and not self.h:
            raise PlanInvalid("estimators requested without any test function")
        return self

    @classmethod
    def from_config(cls, config: Config, *, run_bounds: bool, with_estimators: bool) -> "ExperimentPlan":
        return cls(
            kernel=config.kernel,
            lags=config.lags,
            k_values=config.k_grid.values(),
            processes=config.processes,
            replicates=config.replicates,
            master_seed=config.seed,
            max_sweeps=config.max_sweeps,
            bound_method=config.bound_method,
            run_bounds=run_bounds,
            estimators=config.estimators if with_estimators else [],
            h=config.h,
            bootstrap=config.bootstrap,
        )


# Result rows

class BoundRow(BaseModel):
    k: int
    L: int
    old_bound: float
    new_bound: float
    replicate_sd_old: float
    replicate_sd_new: float
    Q: int
    replicates: int
    vacuous_flag: VacuousFlag
    tv_exact: Optional[float] = None
    old_exact: Optional[float] = None
    new_exact: Optional[float] = None


class BoundReport(BaseModel):
    """Old/new bound estimates over the (k, L) grid."""

    rows: List[BoundRow] = []

    @model_validator(mode="after")
    def check_exact_dominance(self):
        for row in self.rows:
            if row.old_exact is None or row.new_exact is None:
                continue
            if min(row.old_exact, row.new_exact) < 0 or row.new_exact > row.old_exact + 1e-9:
                raise ValueError(
                    f"exact bounds out of order at k={row.k}, L={row.L}: "
                    f"old={row.old_exact!r}, new={row.new_exact!r}"
                )
        return self


class EstimateRow(BaseModel):
    estimator: EstimatorKind
    k: int
    r: int
    L: int
    h: str
    coordinate: int
    mean: float
    se: float = Field(ge=0.0)
    variance: float = Field(ge=0.0)
    n: int


class RRVRow(BaseModel):
    estimator: EstimatorKind
    baseline: EstimatorKind
    k: int
    r: int
    L: int
    h: str
    coordinate: int
    rrv: float
    lower: float
    upper: float


class GeometricRow(BaseModel):
    p: float
    k: int
    L: int
    old_bound: float
    new_bound: float
    new_bound_series: float
    m: int
    vacuous_flag: VacuousFlag


class CheckResult(BaseModel):
    check: str
    passed: bool
    detail: str = ""


class Timing(BaseModel):
    wall_clock_seconds: float
    total_joint_steps: int
    mean_joint_steps: float
    traces: int
    # one entry per simulated trace, ordered by (lag, replicate, process)
    joint_steps: List[int] = []


class RunSummary(BaseModel):
    meta: Dict[str, Union[str, int]] = {}
    bounds: BoundReport = Field(default_factory=BoundReport)
    estimates: List[EstimateRow] = []
    rrv: List[RRVRow] = []
    timing: Optional[Timing] = None
