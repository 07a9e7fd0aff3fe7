"""Validated configuration and the JSON instance schema."""

from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import constants as C
from . import psd_linalg as la
from .errors import InstanceFormatError
from .tree_model import GeneralTreeSpec, ProblemInstance, nodes

Matrix = List[List[float]]


class SolverConfig(BaseModel):
    """Barrier solver settings (the "solver" block of an instance file)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    barrier_mu0: float = Field(C.BARRIER_MU0, gt=0)
    barrier_decay: float = Field(C.BARRIER_DECAY, gt=0, lt=1)
    mu_min: float = Field(C.BARRIER_MU_MIN, gt=0)
    max_outer: int = Field(C.MAX_OUTER, gt=0)
    max_inner: int = Field(C.MAX_INNER, gt=0)
    grad_tol: float = Field(C.GRAD_TOL, gt=0)
    slack_tol: float = Field(C.SLACK_TOL, gt=0)
    kkt_tol: float = Field(C.KKT_TOL, gt=0)
    slack_threshold: float = Field(C.SLACK_THRESHOLD_RELATIVE, gt=0)
    multistart_seeds: Tuple[int, ...] = C.MULTISTART_SEEDS
    armijo_c: float = Field(C.ARMIJO_C, gt=0, lt=1)
    max_backtracks: int = Field(C.MAX_BACKTRACKS, gt=0)
    ascent: Literal["bfgs", "gradient"] = "bfgs"
    workers: int = Field(1, gt=0)
    progress: bool = False

    @field_validator("multistart_seeds")
    @classmethod
    def _seeds_present(cls, seeds):
        if not seeds:
            raise ValueError("at least one multistart seed is required")
        if any(s < 0 for s in seeds):
            raise ValueError("seeds must be nonnegative")
        return tuple(seeds)

    def with_overrides(self, **overrides) -> "SolverConfig":
        """Copy with the non-None overrides applied (and re-validated)."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return SolverConfig(**data)


class ToleranceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    psd_eps: Optional[float] = Field(None, ge=0)
    eq_eps: float = Field(C.EQ_EPS, ge=0)

    def to_tolerance(self) -> la.Tolerance:
        return la.Tolerance(psd_eps=self.psd_eps, eq_eps=self.eq_eps)


def _square(matrix, m, what):
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.shape != (m, m):
        raise ValueError(f"{what} must be {m}x{m}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} has non-finite entries")
    if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-12 * (1.0 + np.max(np.abs(arr)))):
        raise ValueError(f"{what} is not symmetric")
    return matrix


class InstanceFile(BaseModel):
    """Perfect-tree instance: "m", "L", "sigma_x", "distortions" keyed "k,i"."""

    model_config = ConfigDict(extra="forbid")

    m: int = Field(gt=0)
    L: int = Field(ge=2)
    sigma_x: Matrix
    distortions: Dict[str, Matrix]
    solver: Optional[SolverConfig] = None

    @model_validator(mode="after")
    def _shapes(self):
        _square(self.sigma_x, self.m, "sigma_x")
        expected = {f"{k},{i}" for k, i in nodes(self.L)}
        given = set(self.distortions)
        if given != expected:
            missing = sorted(expected - given)
            extra = sorted(given - expected)
            raise ValueError(f"distortion keys mismatch (missing {missing}, unexpected {extra})")
        for key, matrix in self.distortions.items():
            _square(matrix, self.m, f"distortion {key}")
        return self

    def to_instance(self) -> ProblemInstance:
        dmap = {}
        for key, matrix in self.distortions.items():
            k, i = (int(part) for part in key.split(","))
            dmap[(k, i)] = matrix
        return ProblemInstance.from_map(self.sigma_x, dmap, self.L)


class ConstraintEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subset: List[int] = Field(min_length=1)
    d: Matrix


class GeneralTreeFile(BaseModel):
    """General laminar family: "M", "m", "sigma_x", "constraints"."""

    model_config = ConfigDict(extra="forbid")

    M: int = Field(gt=0)
    m: int = Field(gt=0)
    sigma_x: Matrix
    constraints: List[ConstraintEntry]
    solver: Optional[SolverConfig] = None

    @model_validator(mode="after")
    def _shapes(self):
        _square(self.sigma_x, self.m, "sigma_x")
        for entry in self.constraints:
            _square(entry.d, self.m, f"constraint {entry.subset}")
        return self

    def to_spec(self) -> GeneralTreeSpec:
        return GeneralTreeSpec(
            M=self.M,
            sigma_x=self.sigma_x,
            constraints=tuple((frozenset(e.subset), e.d) for e in self.constraints),
        )


def parse_instance_document(document: dict):
    """Parses a decoded JSON document into InstanceFile or GeneralTreeFile.

    Raises:
        InstanceFormatError: on any schema violation.
    """
    if not isinstance(document, dict):
        raise InstanceFormatError("instance file must contain a JSON object")
    model = GeneralTreeFile if "constraints" in document else InstanceFile
    try:
        return model.model_validate(document)
    except ValidationError as exc:
        raise InstanceFormatError(f"invalid {model.__name__}: {exc.errors()[0]['msg']}") from exc
