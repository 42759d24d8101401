from typing import Any, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


GEOMETRY_CODES = {"sphere": 0, "disk": 1, "triangle": 2}


class JacobiParams(BaseModel):
    """Jacobi weight exponents: (1-x)^alpha (1+x)^beta on [-1, 1]."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.0, gt=-1)
    beta: float = Field(0.0, gt=-1)

    def swapped(self) -> "JacobiParams":
        return JacobiParams(alpha=self.beta, beta=self.alpha)

    def shifted(self, d_alpha: float = 0.0, d_beta: float = 0.0) -> "JacobiParams":
        return JacobiParams(alpha=self.alpha + d_alpha, beta=self.beta + d_beta)


class GeometryKind(BaseModel):
    """Geometry selector. Triangle carries the weight exponents (alpha, beta, gamma)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["sphere", "disk", "triangle"] = "sphere"
    alpha: float = Field(0.0, gt=-1)
    beta: float = Field(0.0, gt=-1)
    gamma: float = Field(0.0, gt=-1)

    @property
    def code(self) -> int:
        return GEOMETRY_CODES[self.kind]

    @property
    def parity_families(self) -> List[int]:
        # orders step by two on the sphere and the disk
        return [0] if self.kind == "triangle" else [0, 1]

    @property
    def order_step(self) -> int:
        return 1 if self.kind == "triangle" else 2


class JacobiFamily(BaseModel):
    """One-dimensional family used by the quadrature connection oracle.

    Functions are (1-x)^left_power (1+x)^right_power P_n^{(alpha,beta)}(x),
    optionally multiplied by the square root of the Jacobi weight.
    """

    model_config = ConfigDict(frozen=True)

    params: JacobiParams
    left_power: int = 0
    right_power: int = 0
    half_weight: bool = False


class ErrorDetail(BaseModel):
    loc: Optional[List[Any]] = None
    msg: str
    type: str


class ErrorEnvelope(BaseModel):
    code: str
    message: str
    details: Optional[List[ErrorDetail]] = None


class ErrorResponse(BaseModel):
    error: ErrorEnvelope


class CliConfig(BaseModel):
    model_config = ConfigDict(extra="ignore")

    command: Literal["plan", "apply", "verify", "bench"]
    geometry: GeometryKind = GeometryKind()
    degree: Optional[int] = Field(None, ge=1)
    block: Union[Literal["auto"], int] = "auto"
    plan: Optional[str] = None
    input: Optional[str] = None
    output: Optional[str] = None
    direction: Literal["to-base", "from-base"] = "to-base"
    depth: Literal["quick", "full"] = "full"
    sweep: List[int] = Field(default_factory=list)
    threads: int = Field(1, ge=1)
    seed: int = 0

    @field_validator("block", mode="before")
    @classmethod
    def _parse_block(cls, value: Any) -> Any:
        if isinstance(value, str) and value != "auto":
            return int(value)
        return value

    @field_validator("sweep", mode="before")
    @classmethod
    def _parse_sweep(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(item) for item in value.split(",") if item.strip()]
        return value or []

    @model_validator(mode="after")
    def _check_command_inputs(self) -> "CliConfig":
        if isinstance(self.block, int) and self.block < 1:
            raise ValueError("block must be 'auto' or a positive integer")
        if self.command == "plan":
            if self.degree is None or self.output is None:
                raise ValueError("plan requires --degree and --out")
        elif self.command == "apply":
            if not (self.plan and self.input and self.output):
                raise ValueError("apply requires --plan, --input and --output")
        elif self.command == "verify":
            if self.plan is None and self.degree is None:
                raise ValueError("verify requires --plan or --degree")
        elif self.command == "bench":
            if not self.sweep and self.degree is None:
                raise ValueError("bench requires --sweep or --degree")
            if any(n < 1 for n in self.sweep):
                raise ValueError("sweep degrees must be >= 1")
        return self


class NodeCost(BaseModel):
    level: int
    family: int
    source_base: int
    target_base: int
    section: int
    buffer: int
    storage_bytes: int
    precompute_seconds: float = 0.0
    execute_seconds: float = 0.0
    residual: float = 0.0
    condition: float = 0.0


class CostReport(BaseModel):
    kind: str
    degree: int
    block: int
    decompositions: int
    decompositions_per_family: List[int]
    givens_rotations: int
    all_givens_rotations: int
    storage_bytes: int
    max_path_length: int
    path_bound: int
    nodes: List[NodeCost] = Field(default_factory=list)


class CheckResult(BaseModel):
    name: str
    value: float
    threshold: float
    passed: bool


class BenchRow(BaseModel):
    degree: int
    block: int
    decompositions: int
    precompute_seconds: float
    execute_seconds: float
