"""JSON experiment configs: schema, per-kind field rules, and object builders."""
from __future__ import annotations

import json
import math
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from pydantic import ValidationError as PydanticError

from .bayes import PriorGrid
from .core import Alphabet, EmpiricalType, Pmf, Sample
from .errors import ValidationError
from .estimators import EEModel
from .projections import ConstraintRegion

Kind = Literal["enumerate", "maxprob", "project_i", "project_l", "sanov", "clln", "posterior",
               "bst", "blln", "estimate_el", "estimate_emme", "estimate_maxmaxent",
               "estimate_lproj"]
KINDS = Kind.__args__

# per kind: required fields, optional fields, and "exactly one of" groups
_COMMON = {"kind", "out", "seed"}
RULES: dict[str, tuple[set, set, list]] = {
    "enumerate": ({"n"}, set(), [("m", "alphabet")]),
    "maxprob": ({"alphabet", "q", "constraints", "n"}, {"slack"}, []),
    "project_i": ({"alphabet", "q", "constraints"}, set(), []),
    "project_l": ({"alphabet", "r", "constraints"}, set(), []),
    "sanov": ({"alphabet", "q", "constraints", "n_list"}, {"slack"}, []),
    "clln": ({"alphabet", "q", "constraints", "n_list", "eps"}, {"slack", "center"}, []),
    "posterior": ({"alphabet", "prior"}, set(), [("counts", "sample")]),
    "bst": ({"alphabet", "prior", "r", "subset", "n_list"}, {"mode"}, []),
    "blln": ({"alphabet", "prior", "r", "eps", "n_list"}, {"mode", "center"}, []),
    "estimate_el": ({"alphabet", "sample", "model"}, set(), []),
    "estimate_emme": ({"alphabet", "sample", "model"}, set(), []),
    "estimate_maxmaxent": ({"alphabet", "r", "model"}, set(), []),
    "estimate_lproj": ({"alphabet", "r", "model"}, set(), []),
}


class RegionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    u: list[list[float]]
    lower: Optional[list[Optional[float]]] = None
    upper: Optional[list[Optional[float]]] = None


class PriorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    candidates: Optional[list[list[float]]] = None
    log_weights: Optional[list[float]] = None
    mesh: Optional[float] = None
    constraints: Optional[RegionSpec] = None


class Linspace(BaseModel):
    model_config = ConfigDict(extra="forbid")
    start: float
    stop: float
    num: int


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    u: list[dict]
    theta_grid: Union[Linspace, list[float], list[list[float]]]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Kind
    alphabet: Optional[list[float]] = None
    m: Optional[int] = None
    q: Optional[list[float]] = None
    r: Optional[list[float]] = None
    constraints: Optional[RegionSpec] = None
    prior: Optional[PriorSpec] = None
    model: Optional[ModelSpec] = None
    n: Optional[int] = None
    n_list: Optional[list[int]] = None
    eps: Optional[float] = None
    seed: Optional[int] = None
    out: Optional[str] = None
    slack: Optional[float] = None
    center: Optional[list[float]] = None
    counts: Optional[list[int]] = None
    sample: Optional[list[float]] = None
    subset: Optional[list[int]] = None
    mode: Optional[Literal["exact", "path"]] = None

    @field_validator("q", "r", "center")
    @classmethod
    def _probabilities(cls, v, info):
        if v is None:
            return v
        for i, x in enumerate(v):
            if not math.isfinite(x) or x < 0:
                raise ValueError(f"negative or non-finite probability at index {i}")
        return v

    @field_validator("n")
    @classmethod
    def _positive_n(cls, v):
        if v is not None and v < 1:
            raise ValueError("n must be at least 1")
        return v

    @field_validator("n_list")
    @classmethod
    def _positive_n_list(cls, v):
        if v is not None:
            if not v:
                raise ValueError("n_list is empty")
            for i, x in enumerate(v):
                if x < 1:
                    raise ValueError(f"n_list[{i}] must be at least 1")
        return v

    @field_validator("eps")
    @classmethod
    def _positive_eps(cls, v):
        if v is not None and not v > 0:
            raise ValueError("eps must be positive")
        return v

    def present(self) -> set[str]:
        return {k for k, v in self if v is not None}

    def echo(self) -> dict:
        return self.model_dump(exclude_none=True, mode="json")

    def canonical(self) -> str:
        return json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))


def _first_pydantic_error(err: PydanticError) -> ValidationError:
    e = err.errors()[0]
    loc = ".".join(str(x) for x in e["loc"])
    msg = e["msg"]
    if e["type"] == "missing":
        msg = f"missing field {loc!r}"
    elif e["type"] == "extra_forbidden":
        msg = f"unexpected field {loc!r}"
    else:
        msg = f"{loc}: {msg}"
    return ValidationError(msg, field=loc)


def parse_config(data) -> ExperimentConfig:
    """Validate a decoded JSON object against the schema and per-kind rules."""
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    if "kind" not in data:
        raise ValidationError("missing field 'kind'", field="kind")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except PydanticError as err:
        raise _first_pydantic_error(err) from None
    required, optional, groups = RULES[cfg.kind]
    present = cfg.present()
    for name in sorted(required - present):
        raise ValidationError(f"missing field {name!r} for kind {cfg.kind!r}", field=name)
    grouped = {f for g in groups for f in g}
    for name in sorted(present - required - optional - grouped - _COMMON):
        raise ValidationError(f"unexpected field {name!r} for kind {cfg.kind!r}", field=name)
    for group in groups:
        have = [f for f in group if f in present]
        if len(have) != 1:
            which = " or ".join(repr(f) for f in group)
            raise ValidationError(f"kind {cfg.kind!r} needs exactly one of {which}",
                                  field=group[0])
    if cfg.mode == "path" and cfg.seed is None:
        raise ValidationError("missing field 'seed' for path mode", field="seed")
    # build every object once so semantic errors surface at validation time
    build(cfg)
    return cfg


def _pmf(alphabet, values, name) -> Pmf:
    try:
        return Pmf(alphabet, values)
    except ValidationError as err:
        raise ValidationError(f"{name}: {err}", field=name) from None


def _region(alphabet, spec: RegionSpec, name="constraints") -> ConstraintRegion:
    try:
        return ConstraintRegion.from_json(alphabet, spec.model_dump(exclude_none=True))
    except (ValidationError, ValueError) as err:
        raise ValidationError(f"{name}: {err}", field=name) from None


def _prior(alphabet, spec: PriorSpec) -> PriorGrid:
    if spec.mesh is not None:
        if spec.candidates is not None or spec.log_weights is not None:
            raise ValidationError("prior: give either mesh or candidates", field="prior")
        region = _region(alphabet, spec.constraints, "prior.constraints") if spec.constraints else None
        return PriorGrid.simplex_mesh(alphabet, spec.mesh, region)
    if spec.candidates is None:
        raise ValidationError("missing field 'prior.candidates'", field="prior.candidates")
    if spec.constraints is not None:
        raise ValidationError("prior.constraints only applies to a mesh", field="prior.constraints")
    for k, c in enumerate(spec.candidates):
        for i, x in enumerate(c):
            if x < 0:
                raise ValidationError(f"prior.candidates[{k}]: negative probability at index {i}",
                                      field="prior.candidates")
    try:
        return PriorGrid.from_json(alphabet, spec.model_dump(exclude_none=True))
    except ValidationError as err:
        raise ValidationError(f"prior: {err}", field="prior") from None


def _model(spec: ModelSpec) -> EEModel:
    grid = spec.theta_grid
    if isinstance(grid, Linspace):
        if grid.num < 1:
            raise ValidationError("model.theta_grid.num must be positive", field="model.theta_grid")
        grid = np.linspace(grid.start, grid.stop, grid.num)
    return EEModel.from_forms(spec.u, grid)


def build(cfg: ExperimentConfig) -> dict:
    """Library objects named by the config fields."""
    out: dict = {}
    if cfg.alphabet is not None:
        out["alphabet"] = alpha = _alphabet_checked(cfg.alphabet)
    else:
        alpha = Alphabet.range(cfg.m) if cfg.m is not None and cfg.m >= 2 else None
        if alpha is None:
            raise ValidationError("m must be at least 2", field="m")
        out["alphabet"] = alpha
    if cfg.q is not None:
        out["q"] = _pmf(alpha, cfg.q, "q")
    if cfg.r is not None:
        out["r"] = _pmf(alpha, cfg.r, "r")
    if cfg.center is not None:
        out["center"] = _pmf(alpha, cfg.center, "center")
    if cfg.constraints is not None:
        out["constraints"] = _region(alpha, cfg.constraints)
    if cfg.prior is not None:
        out["prior"] = _prior(alpha, cfg.prior)
    if cfg.model is not None:
        out["model"] = _model(cfg.model)
    if cfg.counts is not None:
        try:
            out["type"] = EmpiricalType(alpha, tuple(cfg.counts))
        except ValidationError as err:
            raise ValidationError(f"counts: {err}", field="counts") from None
    if cfg.sample is not None:
        try:
            out["sample"] = Sample.from_values(alpha, cfg.sample)
        except ValidationError as err:
            raise ValidationError(f"sample: {err}", field="sample") from None
    return out


def _alphabet_checked(points) -> Alphabet:
    try:
        return Alphabet(tuple(points))
    except ValidationError as err:
        raise ValidationError(f"alphabet: {err}", field="alphabet") from None


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` strings; values are parsed as JSON when possible.

    Dotted keys reach into nested objects (``prior.mesh=0.1``).
    """
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value", field=item)
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {key!r} does not address an object", field=key)
        node[parts[-1]] = value
    return data
