import math
from enum import Enum
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, computed_field, field_validator,
                      model_validator)

from core.errors import InputError


class FractalKind(str, Enum):
    CARPET = "carpet"
    GASKET = "gasket"
    KOCH = "koch"


class Status(str, Enum):
    CONVERGED = "converged"
    DIVERGENT = "divergent"
    BUDGET_EXCEEDED = "budget_exceeded"

    @property
    def severity(self) -> int:
        return {"converged": 0, "budget_exceeded": 1, "divergent": 2}[self.value]

    @classmethod
    def worst(cls, statuses) -> "Status":
        statuses = list(statuses)
        if not statuses:
            return cls.CONVERGED
        return max(statuses, key=lambda s: s.severity)


class Membership(str, Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    UNKNOWN = "unknown"


class GridCase(str, Enum):
    """Position of a grid cell relative to E"""
    CELL = "cell"          # a self-similar cell of E
    HOLE = "hole"          # a complementary hole of the matching generation
    EXTERIOR = "exterior"  # interior disjoint from E, not a hole of its own level
    MIXED = "mixed"        # coarse cell strictly containing E


class EnergyForm(str, Enum):
    DOUBLE_SUM = "double_sum"
    DYADIC = "dyadic"
    SOBOLEV = "sobolev"


class Point2(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float

    @field_validator("x", "y")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("point coordinates must be finite")
        return v

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def of(cls, xy) -> "Point2":
        return cls(x=float(xy[0]), y=float(xy[1]))


class Square(BaseModel):
    """Open square S(x, s) = {y : |x - y|_inf < s/2}"""
    model_config = ConfigDict(frozen=True)

    shape: Literal["square"] = "square"
    center: Point2
    side: float = Field(..., gt=0.0)

    def scaled(self, tau: float) -> "Square":
        return Square(center=self.center, side=self.side * tau)

    @property
    def area(self) -> float:
        return self.side * self.side

    def bbox(self) -> Tuple[np.ndarray, np.ndarray]:
        c = self.center.as_array()
        return c - self.side / 2, c + self.side / 2


class Ball(BaseModel):
    model_config = ConfigDict(frozen=True)

    shape: Literal["ball"] = "ball"
    center: Point2
    radius: float = Field(..., gt=0.0)

    def scaled(self, tau: float) -> "Ball":
        return Ball(center=self.center, radius=self.radius * tau)

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2

    def bbox(self) -> Tuple[np.ndarray, np.ndarray]:
        c = self.center.as_array()
        return c - self.radius, c + self.radius


Region = Union[Square, Ball]


class IntervalValue(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    lo: float
    hi: float
    status: Status = Status.CONVERGED

    @model_validator(mode="after")
    def _ordered(self) -> "IntervalValue":
        if self.status == Status.DIVERGENT:
            self.hi = math.inf
        if self.lo > self.hi:
            raise ValueError(f"interval lower bound {self.lo} exceeds upper bound {self.hi}")
        return self

    @classmethod
    def exact(cls, value: float) -> "IntervalValue":
        if math.isinf(value):
            return cls.divergent()
        return cls(lo=value, hi=value)

    @classmethod
    def divergent(cls, lo: float = 0.0) -> "IntervalValue":
        return cls(lo=lo, hi=math.inf, status=Status.DIVERGENT)

    @property
    def mid(self) -> float:
        if math.isinf(self.hi):
            return math.inf
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= value <= self.hi + slack


class Address(BaseModel):
    """Digit string locating a self-similar cell of E.

    Koch addresses start with a side digit in {0,1,2} followed by Koch-curve
    digits in {0,1,2,3}; carpet digits run over 0..7 and gasket digits over 0..2.
    """
    model_config = ConfigDict(frozen=True)

    kind: FractalKind
    digits: str = ""

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise InputError(e.errors()[0]["msg"]) from e

    @model_validator(mode="after")
    def _valid_digits(self) -> "Address":
        alphabet = {FractalKind.CARPET: "01234567", FractalKind.GASKET: "012", FractalKind.KOCH: "0123"}[self.kind]
        for pos, ch in enumerate(self.digits):
            allowed = "012" if (self.kind == FractalKind.KOCH and pos == 0) else alphabet
            if ch not in allowed:
                raise ValueError(f"invalid digit {ch!r} at position {pos} for {self.kind.value} address")
        return self

    @property
    def depth(self) -> int:
        if self.kind == FractalKind.KOCH:
            return max(len(self.digits) - 1, 0)
        return len(self.digits)

    def prefix(self, k: int) -> "Address":
        head = k + 1 if self.kind == FractalKind.KOCH else k
        return Address(kind=self.kind, digits=self.digits[:head])


class FractalSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: FractalKind
    hausdorff_dim: float
    base_cell: Literal["square", "triangle", "segment"]
    branching: int
    contraction: float
    root_cells: int = 1
    ambient: Ball
    scale: float = 1.0

    @property
    def diameter(self) -> float:
        return {FractalKind.CARPET: math.sqrt(2.0), FractalKind.GASKET: 1.0,
                FractalKind.KOCH: 2.0 / math.sqrt(3.0)}[self.kind] * self.scale


class WeightParams(BaseModel):
    """Exponents (alpha, p, q, theta) plus the codimension gamma = alpha + 2 - Q.

    alpha is a free real here; the alpha <= 0 requirement for traces and
    extensions lives in the admissibility predicates.
    """
    alpha: float = Field(..., ge=-3.0, le=3.0)
    p: float = Field(2.0, gt=1.0)
    theta: float = Field(0.4, gt=0.0, lt=1.0)
    q: float = Field(1.0, ge=1.0)
    hausdorff_dim: float = Field(math.log(8.0) / math.log(3.0), gt=0.0, le=2.0)

    @model_validator(mode="after")
    def _q_below_p(self) -> "WeightParams":
        if self.q >= self.p:
            raise ValueError("q must lie in [1, p)")
        return self

    @computed_field
    @property
    def gamma(self) -> float:
        return self.alpha + 2.0 - self.hausdorff_dim


class MeasureEstimate(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    value: IntervalValue
    cells_used: int = 0
    tolerance_requested: float = 0.0
    band_width: float = 0.0
    seconds: float = 0.0

    @property
    def status(self) -> Status:
        return self.value.status

    @property
    def mid(self) -> float:
        return self.value.mid


class BoundarySampleSet(BaseModel):
    """nu-distributed sample points with their addresses and masses"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: FractalKind
    points: np.ndarray
    digits: np.ndarray
    masses: np.ndarray
    total_mass: float = 1.0
    seed: int
    depth: int

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def address(self, index: int) -> Address:
        return Address(kind=self.kind, digits="".join(str(int(d)) for d in self.digits[index]))


class SurveyRecord(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    index: int
    center_x: float
    center_y: float
    side: float
    ratio: float
    lo: float
    hi: float
    status: Status


class SurveyReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    n_samples: int
    seed: int
    max_ratio: float
    min_ratio: float
    quantiles: List[Tuple[float, float]] = []
    stable: bool
    max_ratio_first_half: float
    divergent_count: int = 0
    budget_exceeded_count: int = 0
    in_window: Optional[bool] = None
    window: Optional[Tuple[float, float]] = None
    status: Status = Status.CONVERGED
    records: List[SurveyRecord] = Field(default_factory=list, exclude=True)


class ShellProfile(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    x: Point2
    r: float
    rho_list: List[float]
    masses: List[MeasureEstimate]
    fitted_slope: float
    fit_range: Tuple[float, float]
    status: Status = Status.CONVERGED


class WhitneyCell(BaseModel):
    level: int
    index: int
    center: Point2
    radius: float
    dist_to_E: float


class WhitneyCover(BaseModel):
    """Finished Whitney cover, stored column-wise.

    Generating squares sit on a dyadic grid anchored at ``origin`` with root
    side ``root_side``; square (ix, iy) at quadtree depth t has lower-left
    corner origin + (ix, iy) * root_side / 2**t.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: FractalKind
    ambient: Ball
    max_level: int
    origin: Tuple[float, float]
    root_side: float
    depth: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    levels: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    dists: np.ndarray
    koch_level: Optional[int] = None

    _index: Any = PrivateAttr(default=None)

    @property
    def size(self) -> int:
        return int(self.centers.shape[0])

    @property
    def resolution(self) -> float:
        return 2.0 ** (-self.max_level)

    def cell(self, index: int) -> WhitneyCell:
        return WhitneyCell(
            level=int(self.levels[index]),
            index=index,
            center=Point2.of(self.centers[index]),
            radius=float(self.radii[index]),
            dist_to_E=float(self.dists[index]),
        )


class PartitionWeights(BaseModel):
    cell_ids: List[int]
    weights: List[float]

    @property
    def total(self) -> float:
        return float(sum(self.weights))


class BoundaryFunction(BaseModel):
    """u on E: a vectorized rule or a value table aligned with a sample set"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = "u"
    rule: Optional[Callable[[np.ndarray], np.ndarray]] = None
    table: Optional[np.ndarray] = None
    lipschitz: Optional[float] = None

    @model_validator(mode="after")
    def _has_values(self) -> "BoundaryFunction":
        if self.rule is None and self.table is None:
            raise ValueError("boundary function needs a rule or a value table")
        if self.table is not None and not np.all(np.isfinite(self.table)):
            raise ValueError("boundary value table must be finite")
        return self

    def values(self, samples: "BoundarySampleSet") -> np.ndarray:
        if self.table is not None:
            if self.table.shape[0] != samples.size:
                raise ValueError("value table does not match the sample set")
            return np.asarray(self.table, dtype=float)
        return np.asarray(self.rule(samples.points), dtype=float)

    def scaled(self, c: float) -> "BoundaryFunction":
        if self.table is not None:
            return BoundaryFunction(name=f"{c}*{self.name}", table=c * self.table,
                                    lipschitz=None if self.lipschitz is None else abs(c) * self.lipschitz)
        rule = self.rule
        return BoundaryFunction(name=f"{c}*{self.name}", rule=lambda pts: c * rule(pts),
                                lipschitz=None if self.lipschitz is None else abs(c) * self.lipschitz)


class AmbientFunction(BaseModel):
    """f on B with an optional gradient rule and Lipschitz hint"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = "f"
    rule: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz: Optional[float] = None
    gradient_lipschitz: Optional[float] = None
    # (centers, radii) -> (Hessian bound, third-derivative bound) over each disc
    curvature: Optional[Callable] = None
    # cell bound rule used by the quadrature instead of sampling the rule
    bounds: Optional[Callable] = None
    # the function vanishes outside this region
    support: Optional[Union[Square, Ball]] = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.rule(np.atleast_2d(points)), dtype=float)


class FamilyMember(BaseModel):
    """Paired ambient function and its restriction to E"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    ambient: AmbientFunction
    boundary: BoundaryFunction


class TraceResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    x: Point2
    radii: List[float]
    averages: List[IntervalValue]
    limit: float
    stabilized: bool
    status: Status = Status.CONVERGED


class ConstantReport(BaseModel):
    """Empirical constant C = lhs / rhs of an inequality check"""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    lhs: float
    rhs: float
    constant: float
    seed: Optional[int] = None
    status: Status = Status.CONVERGED
    details: Dict[str, Any] = Field(default_factory=dict)


class EnergyReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    value: float = Field(..., ge=0.0)
    form: EnergyForm
    n_samples: int = 0
    params: Optional[WeightParams] = None
    seed: Optional[int] = None
    skipped: int = 0
    cells_used: int = 0
    mass_term: Optional[float] = None
    interval: Optional[IntervalValue] = None
    status: Status = Status.CONVERGED


class ExperimentConfig(BaseModel):
    """Validated contents of a TOML experiment file"""
    operation: str
    fractal: FractalKind = FractalKind.CARPET
    seed: int = Field(1, ge=0)
    params: WeightParams
    tol: Optional[float] = Field(None, gt=0.0)
    budget: Optional[int] = Field(None, gt=0)
    output_dir: str = "results"
    timings: bool = False
    options: Dict[str, Any] = Field(default_factory=dict)
    sweep: Dict[str, List[Any]] = Field(default_factory=dict)


class ExperimentOutcome(BaseModel):
    """What a runner hands back: a status, a JSON summary and an optional CSV table"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: Status = Status.CONVERGED
    summary: Dict[str, Any] = Field(default_factory=dict)
    table: Optional[Any] = None


class RunReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    operation: str
    fractal: FractalKind
    seed: int
    params: WeightParams
    trace_admissible: bool
    extension_admissible: bool
    status: Status
    summary: Dict[str, Any] = Field(default_factory=dict)
    rows: int = 0
