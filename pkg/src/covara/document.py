"""Problem documents: JSON files declaring F, g, phi and the solve/sweep settings.

Top-level sections are maps, problem, solver, schedule, sweep and output.
Unknown keys are errors everywhere. Box bounds given as null mean -inf
(lower) or +inf (upper). Expressions use the whitelist in `covara.expr`.

Example::

    {"maps": {"F": {"type": "identity_plus_normal_cone",
                    "set": {"type": "box", "lower": [0.0], "upper": [null]}},
              "g": {"type": "single_valued", "dim_x": 1, "dim_p": 1,
                    "components": [["p", 0]]}},
     "problem": {"xbar": [0.0], "pbar": [-1.0]}}
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field

from .coincidence import SolverConfig
from .errors import ParseError, ValidationError
from .expr import BUILTIN_MAPS, Expr, VectorExpr, validate
from .sampling import DEFAULT_SEED, SamplingSchedule
from .setmaps import (
    Affine,
    Box,
    ConstantInX,
    ConstantSet,
    ConvexSet,
    EmptySet,
    IdentityPlusNormalCone,
    Negate,
    NormalCone,
    ParamMap,
    Polyhedron,
    SetValuedMap,
    Singleton,
    SingleValued,
    Smooth,
    Sum,
    SumWithSetMap,
    WholeSpace,
)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# sets


class WholeSpaceSpec(_Model):
    type: Literal["whole_space"]
    dim: int = Field(ge=1)


class EmptySpec(_Model):
    type: Literal["empty"]
    dim: int = Field(ge=1)


class SingletonSpec(_Model):
    type: Literal["singleton"]
    point: list[float] = Field(min_length=1)


class BoxSpec(_Model):
    type: Literal["box"] = "box"
    lower: list[Optional[float]] = Field(min_length=1)
    upper: list[Optional[float]] = Field(min_length=1)


class PolyhedronSpec(_Model):
    type: Literal["polyhedron"]
    A: list[list[float]] = Field(min_length=1)
    b: list[float] = Field(min_length=1)


SetSpec = Annotated[
    Union[WholeSpaceSpec, EmptySpec, SingletonSpec, BoxSpec, PolyhedronSpec], Field(discriminator="type")
]


# ---------------------------------------------------------------------------
# maps x -> F(x)


class SmoothSpec(_Model):
    type: Literal["smooth"]
    dim_in: int = Field(ge=1)
    components: list[Any] = Field(min_length=1)


class BuiltinSpec(_Model):
    type: Literal["builtin"]
    name: Literal[tuple(BUILTIN_MAPS)]


class AffineSpec(_Model):
    type: Literal["affine"]
    A: list[list[float]] = Field(min_length=1)
    b: Optional[list[float]] = None


class IdentitySpec(_Model):
    type: Literal["identity"]
    dim: int = Field(ge=1)


class ConstantSetSpec(_Model):
    type: Literal["constant_set"]
    set: SetSpec
    dim_in: Optional[int] = Field(default=None, ge=1)


class NormalConeSpec(_Model):
    type: Literal["normal_cone"]
    set: SetSpec


class IdentityPlusNormalConeSpec(_Model):
    type: Literal["identity_plus_normal_cone"]
    set: SetSpec


class SumSpec(_Model):
    type: Literal["sum"]
    left: "MapSpec"
    right: "MapSpec"


class NegateSpec(_Model):
    type: Literal["negate"]
    inner: "MapSpec"


MapSpec = Annotated[
    Union[
        SmoothSpec,
        BuiltinSpec,
        AffineSpec,
        IdentitySpec,
        ConstantSetSpec,
        NormalConeSpec,
        IdentityPlusNormalConeSpec,
        SumSpec,
        NegateSpec,
    ],
    Field(discriminator="type"),
]
SumSpec.model_rebuild()
NegateSpec.model_rebuild()


# ---------------------------------------------------------------------------
# parameterized maps (x, p) -> G(x, p)


class SingleValuedSpec(_Model):
    type: Literal["single_valued"]
    dim_x: int = Field(ge=1)
    dim_p: int = Field(ge=1)
    components: list[Any] = Field(min_length=1)


class AffineParamSpec(_Model):
    """g(x, p) = A x + B p + c."""

    type: Literal["affine_param"]
    A: list[list[float]] = Field(min_length=1)
    B: list[list[float]] = Field(min_length=1)
    c: Optional[list[float]] = None


class ParamSetSpec(_Model):
    """A singleton or box whose entries are expressions in p only."""

    kind: Literal["singleton", "box"]
    point: Optional[list[Any]] = None
    lower: Optional[list[Any]] = None
    upper: Optional[list[Any]] = None


class ConstantInXSpec(_Model):
    type: Literal["constant_in_x"]
    dim_x: int = Field(ge=1)
    dim_p: int = Field(ge=1)
    set: ParamSetSpec


class SumWithSetMapSpec(_Model):
    type: Literal["sum_with_set_map"]
    single: Annotated[Union[SingleValuedSpec, AffineParamSpec], Field(discriminator="type")]
    setmap: MapSpec


ParamMapSpec = Annotated[
    Union[SingleValuedSpec, AffineParamSpec, ConstantInXSpec, SumWithSetMapSpec], Field(discriminator="type")
]
SingleSpec = Annotated[Union[SingleValuedSpec, AffineParamSpec], Field(discriminator="type")]


# ---------------------------------------------------------------------------
# sections


class MapsSection(_Model):
    F: Optional[MapSpec] = None
    g: Optional[SingleSpec] = None
    G: Optional[ParamMapSpec] = None
    phi: Optional[Any] = None


class ProblemSection(_Model):
    xbar: list[float] = Field(min_length=1)
    pbar: list[float] = Field(min_length=1)
    ybar: Optional[list[float]] = None
    domain_box: Optional[BoxSpec] = None
    param_box: Optional[BoxSpec] = None


class SolverSection(_Model):
    alpha: Optional[float] = Field(default=None, gt=0)
    ell: Optional[float] = Field(default=None, ge=0)
    tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=200, ge=0)
    trust_radius_r: Optional[float] = Field(default=None, gt=0)


class ScheduleSection(_Model):
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2**64)
    eta0: float = Field(default=0.5, gt=0)
    levels: int = Field(default=10, ge=1)
    samples_per_shell: int = Field(default=512, ge=1)


class LoopSpec(_Model):
    center: list[float] = Field(min_length=2)
    radius: float = Field(gt=0)
    count: int = Field(ge=3)


class RangeSpec(_Model):
    lower: list[float] = Field(min_length=1)
    upper: list[float] = Field(min_length=1)
    count: int = Field(ge=1)


class SweepSection(_Model):
    points: Optional[list[list[float]]] = None
    loop: Optional[LoopSpec] = None
    range: Optional[RangeSpec] = None
    resolution: Optional[int] = Field(default=None, ge=2)


class OutputSection(_Model):
    dir: Optional[str] = None
    format: Literal["csv", "json"] = "json"


class ProblemDocument(_Model):
    maps: MapsSection
    problem: ProblemSection
    solver: SolverSection = SolverSection()
    schedule: ScheduleSection = ScheduleSection()
    sweep: Optional[SweepSection] = None
    output: OutputSection = OutputSection()

    # ---- runtime objects -------------------------------------------------

    @property
    def dim_x(self) -> int:
        return len(self.problem.xbar)

    @property
    def dim_p(self) -> int:
        return len(self.problem.pbar)

    def F(self) -> SetValuedMap:
        if self.maps.F is None:
            raise ValidationError("this command needs F", "maps.F")
        return build_map(self.maps.F)

    def g(self) -> SingleValued:
        if self.maps.g is None:
            raise ValidationError("this command needs g", "maps.g")
        return build_param_map(self.maps.g)

    def G(self) -> ParamMap:
        """The second map of the coincidence problem: maps.G, else maps.g."""
        if self.maps.G is not None:
            return build_param_map(self.maps.G)
        return self.g()

    def phi(self):
        if self.maps.phi is None:
            raise ValidationError("this command needs phi", "maps.phi")
        e = Expr(self.maps.phi, self.dim_x, self.dim_p)
        return lambda x, p: float(e(np.asarray(x, float), np.asarray(p, float)))

    def xbar(self) -> np.ndarray:
        return np.array(self.problem.xbar, dtype=float)

    def pbar(self) -> np.ndarray:
        return np.array(self.problem.pbar, dtype=float)

    def ybar(self) -> np.ndarray:
        """problem.ybar, else g(xbar, pbar) projected onto F(xbar)."""
        if self.problem.ybar is not None:
            return np.array(self.problem.ybar, dtype=float)
        F = self.F()
        Fx = F.value(self.xbar())
        if self.maps.G is None and self.maps.g is not None:
            return Fx.project(self.g().point(self.xbar(), self.pbar()))
        if F.single_valued:
            return F.point(self.xbar())
        raise ValidationError("ybar is required when F is set-valued and G is given", "problem.ybar")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver.model_dump())

    def sampling_schedule(self, seed: Optional[int] = None) -> SamplingSchedule:
        s = self.schedule
        return SamplingSchedule.ladder(s.eta0, s.levels, s.samples_per_shell, s.seed if seed is None else seed)

    def sweep_points(self) -> list:
        sw = self.sweep
        if sw is None:
            raise ValidationError("this command needs a sweep section", "sweep")
        if sw.points is not None:
            return [np.array(p, dtype=float) for p in sw.points]
        if sw.loop is not None:
            th = 2 * np.pi * np.arange(sw.loop.count) / sw.loop.count
            c = np.array(sw.loop.center, dtype=float)
            return [c + sw.loop.radius * np.array([np.cos(a), np.sin(a)]) for a in th]
        axes = [np.linspace(lo, hi, sw.range.count) for lo, hi in zip(sw.range.lower, sw.range.upper)]
        return [np.array(p, dtype=float) for p in zip(*[a.ravel() for a in np.meshgrid(*axes, indexing="ij")])]

    def instance(self, name: str = "instance"):
        from .marginal import ProblemInstance

        if self.problem.domain_box is None:
            raise ValidationError("marginal commands need a compact domain_box", "problem.domain_box")
        pbox = self.problem.param_box or BoxSpec(lower=[None] * self.dim_p, upper=[None] * self.dim_p)
        return ProblemInstance(
            self.F(), self.g(), self.phi(), self.xbar(), self.pbar(), build_set(self.problem.domain_box),
            build_set(pbox), name,
        )

    def dumps(self) -> str:
        return json.dumps(self.model_dump(mode="json", exclude_none=True), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# builders


def _bounds(vals, fill):
    return np.array([fill if v is None else v for v in vals], dtype=float)


def build_set(spec) -> ConvexSet:
    if isinstance(spec, WholeSpaceSpec):
        return WholeSpace(spec.dim)
    if isinstance(spec, EmptySpec):
        return EmptySet(spec.dim)
    if isinstance(spec, SingletonSpec):
        return Singleton(np.array(spec.point))
    if isinstance(spec, BoxSpec):
        return Box(_bounds(spec.lower, -np.inf), _bounds(spec.upper, np.inf))
    return Polyhedron(np.array(spec.A), np.array(spec.b))


def build_map(spec) -> SetValuedMap:
    if isinstance(spec, SmoothSpec):
        v = VectorExpr(spec.components, spec.dim_in)
        return Smooth(lambda x: v(x), spec.dim_in, v.dim_out, jac=v.jac_x, name="expression")
    if isinstance(spec, BuiltinSpec):
        return BUILTIN_MAPS[spec.name]()
    if isinstance(spec, AffineSpec):
        return Affine(np.array(spec.A), None if spec.b is None else np.array(spec.b))
    if isinstance(spec, IdentitySpec):
        return Affine(np.eye(spec.dim))
    if isinstance(spec, ConstantSetSpec):
        return ConstantSet(build_set(spec.set), spec.dim_in)
    if isinstance(spec, NormalConeSpec):
        return NormalCone(build_set(spec.set))
    if isinstance(spec, IdentityPlusNormalConeSpec):
        return IdentityPlusNormalCone(build_set(spec.set))
    if isinstance(spec, SumSpec):
        return Sum(build_map(spec.left), build_map(spec.right))
    return Negate(build_map(spec.inner))


def build_param_map(spec) -> ParamMap:
    if isinstance(spec, SingleValuedSpec):
        v = VectorExpr(spec.components, spec.dim_x, spec.dim_p)
        return SingleValued(lambda x, p: v(x, p), spec.dim_x, spec.dim_p, v.dim_out, jac_x=v.jac_x)
    if isinstance(spec, AffineParamSpec):
        A, B = np.array(spec.A), np.array(spec.B)
        c = np.zeros(A.shape[0]) if spec.c is None else np.array(spec.c)
        return SingleValued(lambda x, p: A @ x + B @ p + c, A.shape[1], B.shape[1], A.shape[0], jac_x=lambda x, p: A)
    if isinstance(spec, ConstantInXSpec):
        return _constant_in_x(spec)
    return SumWithSetMap(build_param_map(spec.single), build_map(spec.setmap))


def _constant_in_x(spec: ConstantInXSpec) -> ConstantInX:
    s = spec.set
    if s.kind == "singleton":
        pt = VectorExpr(s.point, 0, spec.dim_p)
        return ConstantInX(lambda p: Singleton(pt(None, p)), spec.dim_x, spec.dim_p, len(s.point))
    lo = [None if e is None else Expr(e, 0, spec.dim_p) for e in s.lower]
    hi = [None if e is None else Expr(e, 0, spec.dim_p) for e in s.upper]

    def h(p):
        return Box(
            np.array([-np.inf if e is None else e(None, p) for e in lo], dtype=float),
            np.array([np.inf if e is None else e(None, p) for e in hi], dtype=float),
        )

    return ConstantInX(h, spec.dim_x, spec.dim_p, len(s.lower))


# ---------------------------------------------------------------------------
# dimension checks


def _set_dim(spec, key) -> int:
    if isinstance(spec, (WholeSpaceSpec, EmptySpec)):
        return spec.dim
    if isinstance(spec, SingletonSpec):
        return len(spec.point)
    if isinstance(spec, BoxSpec):
        if len(spec.lower) != len(spec.upper):
            raise ValidationError("lower and upper have different lengths", f"{key}.upper")
        for i, (a, b) in enumerate(zip(spec.lower, spec.upper)):
            if a is not None and b is not None and a > b:
                raise ValidationError(f"lower[{i}] > upper[{i}]", f"{key}.lower")
        return len(spec.lower)
    _matrix(spec.A, f"{key}.A")
    if len(spec.b) != len(spec.A):
        raise ValidationError(f"b has {len(spec.b)} entries for {len(spec.A)} rows", f"{key}.b")
    return len(spec.A[0])


def _matrix(A, key) -> tuple:
    widths = {len(row) for row in A}
    if len(widths) != 1 or 0 in widths:
        raise ValidationError("matrix rows must be nonempty and of equal length", key)
    return len(A), widths.pop()


def _components(comps, dim_x, dim_p, key):
    for i, c in enumerate(comps):
        validate(c, dim_x, dim_p, f"{key}.components[{i}]")


def _map_dims(spec, key) -> tuple:
    """(dim_in, dim_out) of a map spec, validating nested payloads."""
    if isinstance(spec, SmoothSpec):
        _components(spec.components, spec.dim_in, 0, key)
        return spec.dim_in, len(spec.components)
    if isinstance(spec, BuiltinSpec):
        return 2, 2
    if isinstance(spec, AffineSpec):
        m, n = _matrix(spec.A, f"{key}.A")
        if spec.b is not None and len(spec.b) != m:
            raise ValidationError(f"b has {len(spec.b)} entries, A has {m} rows", f"{key}.b")
        return n, m
    if isinstance(spec, IdentitySpec):
        return spec.dim, spec.dim
    if isinstance(spec, ConstantSetSpec):
        d = _set_dim(spec.set, f"{key}.set")
        return (spec.dim_in or d), d
    if isinstance(spec, (NormalConeSpec, IdentityPlusNormalConeSpec)):
        d = _set_dim(spec.set, f"{key}.set")
        return d, d
    if isinstance(spec, SumSpec):
        a, b = _map_dims(spec.left, f"{key}.left"), _map_dims(spec.right, f"{key}.right")
        if a != b:
            raise ValidationError(f"operands have dimensions {a} and {b}", key)
        return a
    return _map_dims(spec.inner, f"{key}.inner")


def _param_dims(spec, key) -> tuple:
    """(dim_x, dim_p, dim_out) of a parameterized map spec."""
    if isinstance(spec, SingleValuedSpec):
        _components(spec.components, spec.dim_x, spec.dim_p, key)
        return spec.dim_x, spec.dim_p, len(spec.components)
    if isinstance(spec, AffineParamSpec):
        m, n = _matrix(spec.A, f"{key}.A")
        mb, d = _matrix(spec.B, f"{key}.B")
        if mb != m:
            raise ValidationError(f"B has {mb} rows, A has {m}", f"{key}.B")
        if spec.c is not None and len(spec.c) != m:
            raise ValidationError(f"c has {len(spec.c)} entries, A has {m} rows", f"{key}.c")
        return n, d, m
    if isinstance(spec, ConstantInXSpec):
        s, k = spec.set, f"{key}.set"
        if s.kind == "singleton":
            if not s.point or s.lower is not None or s.upper is not None:
                raise ValidationError("a singleton takes only a nonempty point", k)
            _components(s.point, 0, spec.dim_p, k)
            return spec.dim_x, spec.dim_p, len(s.point)
        if s.point is not None or not s.lower or s.upper is None or len(s.lower) != len(s.upper):
            raise ValidationError("a box takes lower and upper of equal nonzero length", k)
        _components([e for e in s.lower + s.upper if e is not None], 0, spec.dim_p, k)
        return spec.dim_x, spec.dim_p, len(s.lower)
    sx, sp, so = _param_dims(spec.single, f"{key}.single")
    mi, mo = _map_dims(spec.setmap, f"{key}.setmap")
    if (sx, so) != (mi, mo):
        raise ValidationError(f"single part is {sx}->{so}, set part is {mi}->{mo}", key)
    return sx, sp, so


def _expect(actual, expected, what, key):
    if actual != expected:
        raise ValidationError(f"{what} is {actual}, expected {expected}", key)


def cross_check(doc: ProblemDocument) -> None:
    n, d = doc.dim_x, doc.dim_p
    pr, m = doc.problem, doc.maps
    dim_out = None
    if m.F is not None:
        fi, fo = _map_dims(m.F, "maps.F")
        _expect(fi, n, "F input dimension", "maps.F")
        dim_out = fo
    for name in ("g", "G"):
        spec = getattr(m, name)
        if spec is None:
            continue
        gx, gp, go = _param_dims(spec, f"maps.{name}")
        _expect(gx, n, f"{name} x-dimension", f"maps.{name}")
        _expect(gp, d, f"{name} p-dimension", f"maps.{name}")
        if dim_out is not None:
            _expect(go, dim_out, f"{name} output dimension", f"maps.{name}")
    if m.phi is not None:
        validate(m.phi, n, d, "maps.phi")
    if pr.ybar is not None and dim_out is not None:
        _expect(len(pr.ybar), dim_out, "ybar length", "problem.ybar")
    if pr.domain_box is not None:
        _expect(_set_dim(pr.domain_box, "problem.domain_box"), n, "domain_box dimension", "problem.domain_box")
    if pr.param_box is not None:
        _expect(_set_dim(pr.param_box, "problem.param_box"), d, "param_box dimension", "problem.param_box")
    sw = doc.sweep
    if sw is not None:
        given = [k for k in ("points", "loop", "range") if getattr(sw, k) is not None]
        if len(given) != 1:
            raise ValidationError("give exactly one of points, loop, range", "sweep")
        if sw.points is not None:
            for i, p in enumerate(sw.points):
                _expect(len(p), d, "sweep point length", f"sweep.points[{i}]")
        if sw.loop is not None:
            _expect(d, 2, "parameter dimension for a loop", "sweep.loop")
            _expect(len(sw.loop.center), 2, "loop center length", "sweep.loop.center")
        if sw.range is not None:
            _expect(len(sw.range.lower), d, "range lower length", "sweep.range.lower")
            _expect(len(sw.range.upper), d, "range upper length", "sweep.range.upper")


# ---------------------------------------------------------------------------
# loading


def _key(loc) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def parse_document(data: dict) -> ProblemDocument:
    """Validate a decoded document; raises ValidationError naming the key."""
    try:
        doc = ProblemDocument.model_validate(data)
    except pydantic.ValidationError as exc:
        err = exc.errors()[0]
        raise ValidationError(err["msg"], _key(err["loc"]) or "document") from None
    cross_check(doc)
    return doc


def _reject_constant(name):
    raise ValueError(f"{name} is not a valid number; use null for an unbounded box side")


def loads(text: str) -> ProblemDocument:
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if not isinstance(data, dict):
        raise ParseError("a document must be a JSON object", 1, 1)
    return parse_document(data)


def load_document(path) -> ProblemDocument:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc.reason}") from None
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return loads(text)
