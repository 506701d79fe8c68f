"""
sigpricer/models.py – Pydantic v2 schemas for model parameters, run configuration and results.
"""
from __future__ import annotations

from enum import Enum
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# ── Enumerations ──────────────────────────────────────────────────────────────


class SigMode(str, Enum):
    ITO_LEFT = "ito"
    CHEN = "chen"


class CoeffMode(str, Enum):
    SCALAR_SQUARE = "scalar"
    SHUFFLE_PAIR = "shuffle"


class RepKind(str, Enum):
    ANALYTIC = "analytic"
    LINEAR = "linear"
    NONLINEAR = "nonlinear"
    EXACT = "exact"
    ZERO = "zero"


class PriceMethod(str, Enum):
    BENCHMARK = "benchmark"
    MC_SIG = "mc-sig"
    PDE = "pde"


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ── Volatility models ─────────────────────────────────────────────────────────


class OUParams(_Section):
    """dv = κ(θ − v)dt + η dW."""

    kind: Literal["ou"] = "ou"
    kappa: float = 1.0
    theta: float = 0.25
    eta: float = 1.2
    v0: float = Field(default=0.1, ge=0.0)


class MGBMParams(_Section):
    """dv = κ(θ − v)dt + (η + σv) dW."""

    kind: Literal["mgbm"] = "mgbm"
    kappa: float = 1.0
    theta: float = 0.25
    sigma: float = 0.01
    eta: float = 1.2
    v0: float = Field(default=0.1, ge=0.0)


class RHestonParams(_Section):
    """v = v0 + ∫K(t−s)κ(θ − v)ds + ∫K(t−s)σ√v dW with K(u) = u^(−α)/Γ(1−α)."""

    kind: Literal["rheston"] = "rheston"
    kappa: float = 0.1
    theta: float = 0.25
    sigma: float = 0.01
    v0: float = Field(default=0.1, gt=0.0)
    alpha: float = Field(default=0.2, gt=0.0, lt=0.5)


class RBergomiParams(_Section):
    """v = v0 · exp(η ∫(t−s)^(−α) dW)."""

    kind: Literal["rbergomi"] = "rbergomi"
    v0: float = Field(default=0.1, gt=0.0)
    eta: float = 1.0
    alpha: float = Field(default=0.2, gt=0.0, lt=0.5)


ModelParams = Annotated[
    Union[OUParams, MGBMParams, RHestonParams, RBergomiParams],
    Field(discriminator="kind"),
]


class Grid(_Section):
    maturity: float = Field(default=1.0, gt=0.0)
    steps: int = Field(default=251, ge=1)

    @property
    def dt(self) -> float:
        return self.maturity / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)


# ── Pricing specs ─────────────────────────────────────────────────────────────


class SabrSpec(_Section):
    """f(x) = ρ x^β, g(x) = √(1−ρ²) x^β."""

    rho: float = Field(default=-0.4, gt=-1.0, lt=1.0)
    beta: float = Field(default=0.6, gt=0.0, le=1.0)

    def f(self, x: np.ndarray) -> np.ndarray:
        return self.rho * np.power(x, self.beta)

    def g(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(1.0 - self.rho**2) * np.power(x, self.beta)

    def df(self, x: np.ndarray) -> np.ndarray:
        return self.rho * self.beta * np.power(x, self.beta - 1.0)


class OptionSpec(_Section):
    kind: Literal["put"] = "put"
    strike: float = Field(default=110.0, gt=0.0)
    maturity: float = Field(default=1.0, gt=0.0)

    def payoff(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self.strike - np.asarray(x, dtype=float), 0.0)


class PdeGrid(_Section):
    x_lo: float
    x_hi: float
    nodes: int = Field(ge=3)

    @model_validator(mode="after")
    def _ordered(self) -> PdeGrid:
        if not self.x_lo < self.x_hi:
            raise ValueError(f"x_lo ({self.x_lo}) must be below x_hi ({self.x_hi})")
        return self

    @classmethod
    def for_option(
        cls, option: OptionSpec, dx: float = 0.25, lo_factor: float = 0.1, hi_factor: float = 3.0
    ) -> PdeGrid:
        x_lo, x_hi = lo_factor * option.strike, hi_factor * option.strike
        return cls(x_lo=x_lo, x_hi=x_hi, nodes=int(round((x_hi - x_lo) / dx)) + 1)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nodes - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nodes)

    def contains(self, x: float) -> bool:
        return self.x_lo < x < self.x_hi


# ── Training ──────────────────────────────────────────────────────────────────


class TrainConfig(_Section):
    epochs: int = Field(default=30, gt=0)
    batch_size: int = Field(default=256, gt=0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    lr_decay: float = Field(default=0.95, gt=0.0, le=1.0)
    ridge: float = Field(default=1e-8, ge=0.0)
    hidden_sizes: list[int] = Field(default_factory=lambda: [64, 64])
    activation: Activation = Activation.TANH
    validation_fraction: float = Field(default=0.2, gt=0.0, le=0.5)
    residual_on_linear: bool = True
    max_restarts: int = Field(default=3, ge=0)
    seed: int = 7

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_layers(cls, v: list[int]) -> list[int]:
        if any(size <= 0 for size in v):
            raise ValueError(f"hidden sizes must be positive, got {v}")
        return v


# ── Experiment configuration ──────────────────────────────────────────────────


class RunSection(_Section):
    levels: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    paths: int = Field(default=1000, gt=0)
    w_paths: int = Field(default=50, gt=0)
    train_paths: int = Field(default=800, gt=0)
    test_paths: int = Field(default=200, gt=0)
    spots: list[float] = Field(default_factory=lambda: [95.0, 110.0, 115.0])
    seed: int = 20240601
    workers: int = Field(default=1, ge=1)
    full_scale: bool = False

    @field_validator("levels")
    @classmethod
    def _sorted_levels(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("levels must not be empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"levels must be sorted ascending without repeats, got {v}")
        if v[0] < 1:
            raise ValueError(f"levels must be >= 1, got {v}")
        return v


class PdeSection(_Section):
    dx: float = Field(default=0.25, gt=0.0)
    lo_factor: float = Field(default=0.1, gt=0.0)
    hi_factor: float = Field(default=3.0, gt=1.0)


class SignatureSection(_Section):
    mode: SigMode = SigMode.ITO_LEFT
    coeff_mode: CoeffMode = CoeffMode.SCALAR_SQUARE


class RepresentationSection(_Section):
    kind: RepKind = RepKind.ANALYTIC
    model_dir: Optional[str] = None


class ExperimentConfig(_Section):
    model: ModelParams = Field(default_factory=OUParams)
    grid: Grid = Field(default_factory=Grid)
    run: RunSection = Field(default_factory=RunSection)
    sabr: SabrSpec = Field(default_factory=SabrSpec)
    option: OptionSpec = Field(default_factory=OptionSpec)
    pde: PdeSection = Field(default_factory=PdeSection)
    signature: SignatureSection = Field(default_factory=SignatureSection)
    representation: RepresentationSection = Field(default_factory=RepresentationSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: str = "results"

    @model_validator(mode="after")
    def _consistent(self) -> ExperimentConfig:
        if abs(self.option.maturity - self.grid.maturity) > 1e-12:
            raise ValueError(
                f"option maturity {self.option.maturity} differs from grid maturity {self.grid.maturity}"
            )
        pde_grid = self.pde_grid()
        outside = [x for x in self.run.spots if not pde_grid.contains(x)]
        if outside or not pde_grid.contains(self.option.strike):
            raise ValueError(f"spots {outside or self.run.spots} and strike must lie inside the PDE domain")
        return self

    def pde_grid(self) -> PdeGrid:
        return PdeGrid.for_option(self.option, self.pde.dx, self.pde.lo_factor, self.pde.hi_factor)

    def effective(self) -> ExperimentConfig:
        """The configuration actually run (full scale restores M = 10⁴, M_w = 200)."""
        if not self.run.full_scale:
            return self
        run = self.run.model_copy(update={"paths": 10_000, "w_paths": 200})
        return self.model_copy(update={"run": run})


# ── Reports & result rows ─────────────────────────────────────────────────────


class PriceReport(BaseModel):
    estimate: float
    stderr: float = Field(ge=0.0)
    method: PriceMethod
    provenance: str
    level: int = 0
    x_init: float
    paths: int
    w_paths: int = 0
    rejected_paths: int = 0
    clamped_coefficients: int = 0
    wall_clock_s: float = 0.0


class ReprErrorRow(BaseModel):
    experiment_id: str
    model: str
    representation: str
    N: int
    mae_v: float
    sd_v: float
    mae_I: float
    sd_I: float
    seed: int
    M: int
    J: int
    T: float
    sig_mode: str


class PriceErrorRow(BaseModel):
    experiment_id: str
    model: str
    method: str
    representation: str
    N: int
    moneyness: str
    x_init: float
    price: float
    stderr: float
    benchmark: float
    error: float
    seed: int
    M: int
    M_w: int
    J: int
    T: float
    sig_mode: str
    coeff_mode: str


ResultRow = Union[ReprErrorRow, PriceErrorRow]


# ── HTTP surface ──────────────────────────────────────────────────────────────


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ReadinessResponse(BaseModel):
    ready: bool
    checks: dict[str, str | bool]


class CoefficientsRequest(BaseModel):
    model: Annotated[Union[OUParams, MGBMParams], Field(discriminator="kind")]
    level: int = Field(default=3, ge=1, le=9)


class CoefficientsResponse(BaseModel):
    level: int
    ell: str
    p: str
    ell_terms: dict[str, float]
    p_terms: dict[str, float]


class PriceRequest(BaseModel):
    model: ModelParams = Field(default_factory=OUParams)
    sabr: SabrSpec = Field(default_factory=SabrSpec)
    option: OptionSpec = Field(default_factory=OptionSpec)
    grid: Grid = Field(default_factory=Grid)
    method: PriceMethod = PriceMethod.MC_SIG
    representation: Literal["analytic", "exact", "zero"] = "analytic"
    level: int = Field(default=3, ge=1, le=7)
    x_init: float = Field(default=110.0, gt=0.0)
    paths: int = Field(default=1000, gt=0, le=20_000)
    w_paths: int = Field(default=20, gt=0, le=500)
    seed: int = 20240601
    sig_mode: SigMode = SigMode.ITO_LEFT
    coeff_mode: CoeffMode = CoeffMode.SCALAR_SQUARE


class MeanCheckReport(BaseModel):
    model: str
    paths: int
    maturity: float
    sample_mean: float
    expected_mean: float
    stderr: float
    z_score: float
