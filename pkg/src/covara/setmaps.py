"""Closed convex sets, set-valued maps F: R^n => R^m and parameterized maps G(x, p).

Every map value is a closed convex set (possibly empty), so distances and
nearest points are well defined and unique. Spaces are Euclidean with the
l2 norm throughout.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from .errors import (
    DimensionMismatch,
    EmptyValue,
    JacobianUnavailable,
    PointNotInSet,
    UnsupportedMapClass,
)

MEMBERSHIP_TOL = 1e-9


def as_vector(v, dim: Optional[int] = None, name: str = "vector") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def finite_difference_jacobian(f: Callable, x: np.ndarray, dim_out: int) -> np.ndarray:
    """Central differences with step 1e-6 * (1 + |x_i|)."""
    x = np.asarray(x, dtype=float)
    J = np.empty((dim_out, x.size))
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(f(xp), float).reshape(dim_out) - np.asarray(f(xm), float).reshape(dim_out)) / (2 * h)
    return J


# ---------------------------------------------------------------------------
# convex sets


class ConvexSet:
    dim: int
    is_empty = False

    def project(self, y) -> np.ndarray:
        raise NotImplementedError

    def distance(self, y) -> float:
        y = as_vector(y, self.dim)
        return float(np.linalg.norm(y - self.project(y)))

    def contains(self, z, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.distance(z) <= tol

    def negated(self) -> "ConvexSet":
        raise NotImplementedError

    @property
    def is_singleton(self) -> bool:
        return False


@dataclass(eq=False)
class EmptySet(ConvexSet):
    dim: int
    is_empty = True

    def project(self, y):
        raise EmptyValue("projection onto the empty set")

    def distance(self, y):
        return float("inf")

    def contains(self, z, tol=MEMBERSHIP_TOL):
        return False

    def negated(self):
        return self


@dataclass(eq=False)
class WholeSpace(ConvexSet):
    dim: int

    def project(self, y):
        return as_vector(y, self.dim).copy()

    def distance(self, y):
        as_vector(y, self.dim)
        return 0.0

    def negated(self):
        return self


@dataclass(eq=False)
class Singleton(ConvexSet):
    point: np.ndarray

    def __post_init__(self):
        self.point = as_vector(self.point, name="singleton point")
        if not np.all(np.isfinite(self.point)):
            raise ValueError("singleton point must be finite")
        self.dim = self.point.size

    def project(self, y):
        as_vector(y, self.dim)
        return self.point.copy()

    def negated(self):
        return Singleton(-self.point)

    @property
    def is_singleton(self):
        return True


@dataclass(eq=False)
class Box(ConvexSet):
    """Product of closed intervals; infinite bounds allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = as_vector(self.lower, name="box lower")
        self.upper = as_vector(self.upper, self.lower.size, name="box upper")
        if np.any(self.lower > self.upper):
            raise ValueError("box requires lower <= upper componentwise")
        self.dim = self.lower.size

    def project(self, y):
        return np.clip(as_vector(y, self.dim), self.lower, self.upper)

    def negated(self):
        return Box(-self.upper, -self.lower)

    @property
    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))


@dataclass(eq=False)
class Polyhedron(ConvexSet):
    """{z : A z <= b}."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = as_vector(self.b, self.A.shape[0], name="polyhedron b")
        self.dim = self.A.shape[1]

    def _feasible(self, z, tol=MEMBERSHIP_TOL):
        return bool(np.all(self.A @ z - self.b <= tol))

    def project(self, y):
        y = as_vector(y, self.dim)
        if self._feasible(y, 0.0):
            return y.copy()
        m = self.A.shape[0]
        if m > 14:
            return self._project_slsqp(y)
        best, best_d = None, np.inf
        # active-set enumeration of the KKT system, smallest sets first
        for k in range(1, min(m, self.dim) + 1):
            for S in itertools.combinations(range(m), k):
                AS = self.A[list(S)]
                lam, *_ = np.linalg.lstsq(AS @ AS.T, AS @ y - self.b[list(S)], rcond=None)
                if np.any(lam < -1e-12):
                    continue
                z = y - AS.T @ lam
                if not self._feasible(z, 1e-10):
                    continue
                d = np.linalg.norm(z - y)
                if d < best_d - 1e-14:
                    best, best_d = z, d
        if best is None:
            raise EmptyValue("polyhedron appears to be empty")
        return best

    def _project_slsqp(self, y):
        from scipy.optimize import minimize

        res = minimize(
            lambda z: 0.5 * np.sum((z - y) ** 2),
            y,
            jac=lambda z: z - y,
            constraints=[{"type": "ineq", "fun": lambda z: self.b - self.A @ z, "jac": lambda z: -self.A}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        return res.x

    def negated(self):
        return Polyhedron(-self.A, self.b)


@dataclass(eq=False)
class Cone(ConvexSet):
    """{sum l_i g_i + sum m_j h_j : l_i >= 0, m_j real}; no vectors means {0}."""

    generators: list = field(default_factory=list)
    lineality: list = field(default_factory=list)
    dim: int = 0

    def __post_init__(self):
        vecs = [as_vector(g) for g in list(self.generators) + list(self.lineality)]
        if vecs:
            self.dim = vecs[0].size
        if any(v.size != self.dim for v in vecs) or self.dim < 1:
            raise DimensionMismatch("cone vectors must share one positive dimension")
        self.generators = [as_vector(g) for g in self.generators]
        self.lineality = [as_vector(h) for h in self.lineality]
        self._coord_bounds = self._coordinate_bounds()

    def _coordinate_bounds(self):
        """Per-coordinate sign bounds when every vector is a signed unit axis."""
        lo = np.zeros(self.dim)
        hi = np.zeros(self.dim)
        for v, free in [(g, False) for g in self.generators] + [(h, True) for h in self.lineality]:
            nz = np.flatnonzero(v)
            if nz.size != 1 or v[nz[0]] == 0.0:
                return None
            i = nz[0]
            if free:
                lo[i], hi[i] = -np.inf, np.inf
            elif v[i] > 0:
                hi[i] = np.inf
            else:
                lo[i] = -np.inf
        return lo, hi

    def project(self, y):
        y = as_vector(y, self.dim)
        if self._coord_bounds is not None:
            return np.clip(y, *self._coord_bounds)
        cols = self.generators + self.lineality + [-h for h in self.lineality]
        M = np.column_stack(cols)
        lam, _ = nnls(M, y)
        return M @ lam

    def negated(self):
        return Cone([-g for g in self.generators], list(self.lineality), self.dim)

    @property
    def is_singleton(self):
        return not self.generators and not self.lineality

    def members(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Random nonnegative combinations of the generators (rows)."""
        out = np.zeros((count, self.dim))
        for g in self.generators:
            out += rng.exponential(size=(count, 1)) * g
        for h in self.lineality:
            out += rng.normal(size=(count, 1)) * h
        return out


@dataclass(eq=False)
class Translated(ConvexSet):
    base: ConvexSet
    offset: np.ndarray

    def __post_init__(self):
        self.offset = as_vector(self.offset, self.base.dim, name="offset")
        self.dim = self.base.dim
        self.is_empty = self.base.is_empty

    def project(self, y):
        y = as_vector(y, self.dim)
        return self.base.project(y - self.offset) + self.offset

    def distance(self, y):
        return self.base.distance(as_vector(y, self.dim) - self.offset)

    def negated(self):
        return Translated(self.base.negated(), -self.offset)

    @property
    def is_singleton(self):
        return self.base.is_singleton


def _split(s: ConvexSet):
    if isinstance(s, Translated):
        return s.base, s.offset
    if isinstance(s, Singleton):
        return Cone([], [], s.dim), s.point
    return s, np.zeros(s.dim)


def minkowski_sum(a: ConvexSet, b: ConvexSet) -> ConvexSet:
    if a.dim != b.dim:
        raise DimensionMismatch("Minkowski sum of sets with different dimensions")
    if a.is_empty or b.is_empty:
        return EmptySet(a.dim)
    ba, oa = _split(a)
    bb, ob = _split(b)
    off = oa + ob
    if isinstance(ba, WholeSpace) or isinstance(bb, WholeSpace):
        return WholeSpace(a.dim)
    if isinstance(ba, Cone) and ba.is_singleton:
        return Translated(bb, off)
    if isinstance(bb, Cone) and bb.is_singleton:
        return Translated(ba, off)
    if isinstance(ba, Cone) and isinstance(bb, Cone):
        return Translated(Cone(ba.generators + bb.generators, ba.lineality + bb.lineality, a.dim), off)
    raise UnsupportedMapClass(
        f"Minkowski sum of {type(ba).__name__} and {type(bb).__name__} is not representable"
    )


def normal_cone(cset: ConvexSet, z, tol: float = MEMBERSHIP_TOL) -> Cone:
    """Classical normal cone of a convex set at z, as generators."""
    z = as_vector(z, cset.dim, name="z")
    if not cset.contains(z, tol):
        raise PointNotInSet(f"{z} is not in the set")
    n = cset.dim
    eye = np.eye(n)
    if isinstance(cset, WholeSpace):
        return Cone([], [], n)
    if isinstance(cset, Singleton):
        return Cone([], list(eye), n)
    if isinstance(cset, Box):
        gens = []
        for i in range(n):
            if abs(z[i] - cset.lower[i]) <= tol:
                gens.append(-eye[i])
            if abs(z[i] - cset.upper[i]) <= tol:
                gens.append(eye[i])
        return Cone(gens, [], n)
    if isinstance(cset, Polyhedron):
        active = np.abs(cset.A @ z - cset.b) <= tol
        return Cone(list(cset.A[active]), [], n)
    if isinstance(cset, Translated):
        return normal_cone(cset.base, z - cset.offset, tol)
    raise UnsupportedMapClass(f"normal cone of {type(cset).__name__} is not implemented")


# ---------------------------------------------------------------------------
# set-valued maps


class SetValuedMap:
    dim_in: int
    dim_out: int

    def value(self, x) -> ConvexSet:
        raise NotImplementedError

    @property
    def single_valued(self) -> bool:
        return False

    def _check(self, x):
        return as_vector(x, self.dim_in, name="x")


class SingleValuedMap(SetValuedMap):
    """Maps whose value is always one point and which carry a Jacobian."""

    @property
    def single_valued(self):
        return True

    def point(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        raise NotImplementedError

    def value(self, x):
        return Singleton(self.point(x))

    def points(self, X) -> np.ndarray:
        """Batch evaluation, one row per input row."""
        return np.array([self.point(x) for x in np.atleast_2d(X)])

    def __call__(self, x):
        return self.point(x)


@dataclass(eq=False)
class Smooth(SingleValuedMap):
    """x -> f(x); `jac` omitted means central finite differences.

    `preimages(t)` may return every solution of f(x) = t (closed-form inverse),
    enabling exact metric-regularity checks.
    """

    f: Callable
    dim_in: int
    dim_out: int
    jac: Optional[Callable] = None
    preimages: Optional[Callable] = None
    name: str = "smooth"

    def point(self, x):
        x = self._check(x)
        y = np.asarray(self.f(x), dtype=float).reshape(self.dim_out)
        return y

    def points(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        try:
            # vectorized call on columns; verified against the scalar path
            Y = np.asarray(self.f(X.T), dtype=float)
            if Y.shape == (self.dim_out, X.shape[0]) and np.allclose(Y[:, 0], self.point(X[0]), rtol=0, atol=1e-12):
                return Y.T.copy()
        except Exception:
            pass
        return super().points(X)

    def jacobian(self, x):
        x = self._check(x)
        if self.jac is None:
            return finite_difference_jacobian(self.f, x, self.dim_out)
        return np.asarray(self.jac(x), dtype=float).reshape(self.dim_out, self.dim_in)


@dataclass(eq=False)
class Affine(SingleValuedMap):
    A: np.ndarray
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.dim_out, self.dim_in = self.A.shape
        self.b = np.zeros(self.dim_out) if self.b is None else as_vector(self.b, self.dim_out, "b")

    def point(self, x):
        return self.A @ self._check(x) + self.b

    def points(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.A.T + self.b

    def jacobian(self, x):
        self._check(x)
        return self.A.copy()


def identity(n: int) -> Affine:
    return Affine(np.eye(n))


@dataclass(eq=False)
class ConstantSet(SetValuedMap):
    set: ConvexSet
    dim_in: Optional[int] = None

    def __post_init__(self):
        self.dim_out = self.set.dim
        if self.dim_in is None:
            self.dim_in = self.set.dim

    def value(self, x):
        self._check(x)
        return self.set


@dataclass(eq=False)
class NormalCone(SetValuedMap):
    """x -> N(x; set), empty outside the set."""

    set: ConvexSet

    def __post_init__(self):
        self.dim_in = self.dim_out = self.set.dim

    def value(self, x):
        x = self._check(x)
        if not self.set.contains(x):
            return EmptySet(self.dim_out)
        return normal_cone(self.set, x)


@dataclass(eq=False)
class IdentityPlusNormalCone(SetValuedMap):
    """x -> x + N(x; set); its inverse is the projection onto the set."""

    set: ConvexSet

    def __post_init__(self):
        self.dim_in = self.dim_out = self.set.dim

    def value(self, x):
        x = self._check(x)
        if not self.set.contains(x):
            return EmptySet(self.dim_out)
        return Translated(normal_cone(self.set, x), x)


@dataclass(eq=False)
class Sum(SetValuedMap):
    left: SetValuedMap
    right: SetValuedMap

    def __post_init__(self):
        if (self.left.dim_in, self.left.dim_out) != (self.right.dim_in, self.right.dim_out):
            raise DimensionMismatch("Sum operands must have equal input and output dimensions")
        self.dim_in, self.dim_out = self.left.dim_in, self.left.dim_out

    @property
    def single_valued(self):
        return self.left.single_valued and self.right.single_valued

    def value(self, x):
        x = self._check(x)
        return minkowski_sum(self.left.value(x), self.right.value(x))

    def point(self, x):
        return self.left.point(x) + self.right.point(x)

    def jacobian(self, x):
        return self.left.jacobian(x) + self.right.jacobian(x)

    def __call__(self, x):
        return self.point(x)


@dataclass(eq=False)
class Negate(SetValuedMap):
    inner: SetValuedMap

    def __post_init__(self):
        self.dim_in, self.dim_out = self.inner.dim_in, self.inner.dim_out

    @property
    def single_valued(self):
        return self.inner.single_valued

    def value(self, x):
        return self.inner.value(x).negated()

    def point(self, x):
        return -self.inner.point(x)

    def jacobian(self, x):
        return -self.inner.jacobian(x)

    def __call__(self, x):
        return self.point(x)


def evaluate_distance(F: SetValuedMap, x, y) -> float:
    """dist(y; F(x)); +inf when F(x) is empty."""
    x = as_vector(x, F.dim_in, "x")
    y = as_vector(y, F.dim_out, "y")
    return F.value(x).distance(y)


def project(F: SetValuedMap, x, y) -> np.ndarray:
    x = as_vector(x, F.dim_in, "x")
    y = as_vector(y, F.dim_out, "y")
    val = F.value(x)
    if val.is_empty:
        raise EmptyValue(f"F({x}) is empty")
    return val.project(y)


def precoderivative_apply_smooth(h: SetValuedMap, x, ystar) -> np.ndarray:
    """Regular coderivative of a smooth single-valued map: grad h(x)^T y*."""
    if not h.single_valued:
        raise JacobianUnavailable(f"{type(h).__name__} has no Jacobian")
    ystar = as_vector(ystar, h.dim_out, "ystar")
    return h.jacobian(x).T @ ystar


def jacobian_mismatch(F: SingleValuedMap, lower, upper, count: int = 100, seed: int = 0) -> float:
    """Worst ||J - J_fd|| / (1 + ||J_fd||) over random probes in a box."""
    rng = np.random.default_rng(seed)
    lower, upper = as_vector(lower, F.dim_in), as_vector(upper, F.dim_in)
    worst = 0.0
    for _ in range(count):
        x = rng.uniform(lower, upper)
        J = F.jacobian(x)
        Jfd = finite_difference_jacobian(F.point, x, F.dim_out)
        worst = max(worst, np.linalg.norm(J - Jfd, 2) / (1 + np.linalg.norm(Jfd, 2)))
    return worst


# ---------------------------------------------------------------------------
# parameterized maps


class ParamMap:
    dim_x: int
    dim_p: int
    dim_out: int

    def value(self, x, p) -> ConvexSet:
        raise NotImplementedError

    def at(self, p) -> SetValuedMap:
        """The map x -> G(x, p) for a frozen parameter."""
        p = as_vector(p, self.dim_p, "p")
        return _Frozen(self, p)


@dataclass(eq=False)
class SingleValued(ParamMap):
    g: Callable
    dim_x: int
    dim_p: int
    dim_out: int
    jac_x: Optional[Callable] = None

    def point(self, x, p):
        x = as_vector(x, self.dim_x, "x")
        p = as_vector(p, self.dim_p, "p")
        return np.asarray(self.g(x, p), dtype=float).reshape(self.dim_out)

    def __call__(self, x, p):
        return self.point(x, p)

    def jacobian_x(self, x, p):
        x = as_vector(x, self.dim_x, "x")
        p = as_vector(p, self.dim_p, "p")
        if self.jac_x is None:
            return finite_difference_jacobian(lambda u: self.g(u, p), x, self.dim_out)
        return np.asarray(self.jac_x(x, p), dtype=float).reshape(self.dim_out, self.dim_x)

    def value(self, x, p):
        return Singleton(self.point(x, p))

    def at(self, p):
        p = as_vector(p, self.dim_p, "p")
        return Smooth(
            lambda x: self.g(x, p),
            self.dim_x,
            self.dim_out,
            jac=lambda x: self.jacobian_x(x, p),
        )


@dataclass(eq=False)
class ConstantInX(ParamMap):
    h: Callable  # p -> ConvexSet
    dim_x: int
    dim_p: int
    dim_out: int

    def value(self, x, p):
        as_vector(x, self.dim_x, "x")
        s = self.h(as_vector(p, self.dim_p, "p"))
        if s.dim != self.dim_out:
            raise DimensionMismatch("ConstantInX value has the wrong dimension")
        return s


@dataclass(eq=False)
class SumWithSetMap(ParamMap):
    single: SingleValued
    setmap: SetValuedMap

    def __post_init__(self):
        if self.single.dim_x != self.setmap.dim_in or self.single.dim_out != self.setmap.dim_out:
            raise DimensionMismatch("SumWithSetMap operands disagree on dimensions")
        self.dim_x, self.dim_p, self.dim_out = self.single.dim_x, self.single.dim_p, self.single.dim_out

    def value(self, x, p):
        return minkowski_sum(self.single.value(x, p), self.setmap.value(x))


@dataclass(eq=False)
class _Frozen(SetValuedMap):
    G: ParamMap
    p: np.ndarray

    def __post_init__(self):
        self.dim_in, self.dim_out = self.G.dim_x, self.G.dim_out

    def value(self, x):
        return self.G.value(x, self.p)
