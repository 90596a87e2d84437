"""Request and response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator


class FitRequest(BaseModel):
    """Data (dense rows or a synthetic spec) plus fit parameters."""

    x: Optional[list[list[float]]] = None
    y: Optional[list[float]] = None
    synthetic: Optional[str] = Field(None, examples=["2000,30,5,10:9:8:7:6:1,0"])
    k: int = Field(1, ge=1)
    epsilon: float = Field(0.1, gt=0, lt=1)
    seed: int = 0
    oracle_assisted: bool = True
    theta: Optional[float] = Field(None, gt=0)
    sigma: Optional[float] = Field(None, gt=0)
    eta: Optional[float] = Field(None, gt=0, lt=1)
    center: bool = True
    repetitions: int = Field(3, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.x is None) != (self.y is None):
            raise ValueError("x and y must be given together")
        if (self.x is None) == (self.synthetic is None):
            raise ValueError("give either x/y or synthetic")
        if not self.oracle_assisted and None in (self.theta, self.sigma, self.eta):
            raise ValueError("blind mode needs theta, sigma and eta")
        return self


class EstimatorInfo(BaseModel):
    id: str
    n: int
    d: int
    k: int
    plan: dict
    gamma: list[float]
    x_accesses: int
    times_ms: dict[str, float]
    centering: dict


class Coefficient(BaseModel):
    index: int = Field(description="1-based coefficient index")
    value: float


class CoefficientsResponse(BaseModel):
    id: str
    entries: list[Coefficient]


class SampleRequest(BaseModel):
    count: int = Field(1, ge=1, le=10**7)
    seed: int = 0


class SampleResponse(BaseModel):
    id: str
    samples: list[int] = Field(description="1-based indices")
    histogram: dict[str, int]


class RunRequest(BaseModel):
    """Mirror of the command-line options (server-side file paths allowed)."""

    x_path: Optional[str] = None
    y_path: Optional[str] = None
    header: bool = False
    synthetic: Optional[str] = None
    k: int = 1
    epsilon: float = 0.1
    mode: Literal["qi", "exact", "compare", "bench"] = "qi"
    seed: int = 0
    entries: list[int] = []
    samples: int = 0
    oracle_assisted: bool = False
    theta: Optional[float] = None
    sigma: Optional[float] = None
    eta: Optional[float] = None
    out: Optional[str] = None
    store_cache: Optional[str] = None
    bench_sizes: list[int] = [1000, 10000, 100000]
    bench_csv: Optional[str] = None
    repetitions: int = 3
    max_sketch: int = 10**7
    max_product_samples: int = 10**7


class ErrorDetail(BaseModel):
    type: str
    message: str
    exit_code: int


class Health(BaseModel):
    status: Literal["ok"] = "ok"
    estimators: int
