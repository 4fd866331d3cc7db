"""Numerical estimates of covering, Lipschitz-like and calmness moduli.

Covering constants are sup-over-eta / inf-over-ball quantities. They are
evaluated on a halving ladder of radii, every radius reusing the same
scaled low-discrepancy pattern, and the limit is extrapolated from the last
two shells. Brute-force oracles (`empirical_covering`,
`metric_regularity_check`) verify the covering and metric-regularity
inclusions directly and are independent of the coderivative formulas.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .errors import DegenerateSampling, InverseUnavailable, JacobianUnavailable, NotOnGraph, UnsupportedMapClass
from .inverse import least_norm_newton, nearest_preimage
from .sampling import (
    SamplingSchedule,
    ball_points,
    converged,
    extrapolate,
    sphere_points,
    unit_ball_pattern,
)
from .setmaps import (
    MEMBERSHIP_TOL,
    Box,
    ConstantSet,
    ConvexSet,
    IdentityPlusNormalCone,
    ParamMap,
    Polyhedron,
    SetValuedMap,
    Singleton,
    SingleValued,
    WholeSpace,
    as_vector,
)

KINDS = (
    "alpha_hat",
    "alpha_point",
    "alpha_hat_semilocal",
    "lipschitz_like",
    "calmness",
    "calmness_above",
    "calmness_below",
    "beta",
    "theta",
    "deviation_lipschitz",
)


@dataclass
class ModulusEstimate:
    kind: str
    value: float
    per_shell_values: list
    converged: bool
    etas: list = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def sup(self) -> float:
        """Largest shell value: the modulus on the whole first neighbourhood."""
        return float(max(self.per_shell_values)) if self.per_shell_values else self.value

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "shells": [{"eta": e, "value": v} for e, v in zip(self.etas, self.per_shell_values)],
            "converged": self.converged,
            "seed": self.seed,
        }


@dataclass
class Violation:
    x: np.ndarray
    target: np.ndarray
    rho: float
    ratio: float  # needed displacement / allowed displacement


@dataclass
class CoveringCertificate:
    alpha: float
    radius_r: float
    center_x: np.ndarray
    center_y: np.ndarray
    neighborhood_V_radius: float
    violations: list
    checked: int
    violation_count: int = 0

    @property
    def holds(self) -> bool:
        return self.violation_count == 0

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "radius_r": self.radius_r,
            "center_x": list(self.center_x),
            "center_y": list(self.center_y),
            "neighborhood_V_radius": self.neighborhood_V_radius,
            "holds": self.holds,
            "checked": self.checked,
            "violation_count": self.violation_count,
            "violations": [
                {"x": list(v.x), "target": list(v.target), "rho": v.rho, "ratio": v.ratio} for v in self.violations
            ],
        }


MAX_STORED_VIOLATIONS = 32


def smallest_singular_value(J: np.ndarray) -> float:
    """inf over unit y* of ||J^T y*||; zero when J has more rows than columns."""
    m, n = J.shape
    if m > n:
        return 0.0
    return float(np.linalg.svd(J, compute_uv=False).min())


def _interior_margin(S: ConvexSet, y: np.ndarray) -> float:
    if isinstance(S, WholeSpace):
        return np.inf
    if isinstance(S, Singleton):
        return 0.0
    if isinstance(S, Box):
        return float(min(np.min(y - S.lower), np.min(S.upper - y)))
    if isinstance(S, Polyhedron):
        return float(np.min((S.b - S.A @ y) / np.linalg.norm(S.A, axis=1)))
    raise UnsupportedMapClass(f"interior margin of {type(S).__name__}")


def _shell_infima(F: SetValuedMap, xbar, ybar, schedule: SamplingSchedule) -> list:
    """Per-radius inf of precoderivative norms; ybar=None drops the y-ball."""
    n = F.dim_in
    pattern = unit_ball_pattern(n, schedule.samples_per_shell, schedule.seed)
    shells = []
    if F.single_valued:
        for eta in schedule.eta_sequence:
            best = np.inf
            for u in pattern:
                x = xbar + eta * u
                if ybar is not None and np.linalg.norm(F.point(x) - ybar) > eta:
                    continue
                best = min(best, smallest_singular_value(F.jacobian(x)))
            shells.append(best)
    elif isinstance(F, IdentityPlusNormalCone) and isinstance(F.set, Box):
        # graph of x + N_box(x) is parametrized by z: x = proj(z), y = z; per coordinate
        # the graph is a line of slope 1 or a vertical ray (y_i != x_i), where y*_i = 0 is forced
        # so any unit y* supported off the vertical coordinates gives ||x*|| = ||y*|| = 1
        centre = ybar if ybar is not None else xbar
        for eta in schedule.eta_sequence:
            best = np.inf
            for u in pattern:
                z = centre + eta * u
                x = F.set.project(z)
                if np.linalg.norm(x - xbar) > eta:
                    continue
                if np.any(np.abs(z - x) <= 0.0):
                    best = 1.0
                    break
            if ybar is None:
                best = 1.0  # y = x is always in F(x)
            shells.append(best)
    elif isinstance(F, ConstantSet):
        # gph = R^n x S: x* = 0 and -y* in N(y; S); no unit y* exists at interior y
        for eta in schedule.eta_sequence:
            if ybar is None:
                shells.append(np.inf if isinstance(F.set, WholeSpace) else 0.0)
            else:
                shells.append(np.inf if _interior_margin(F.set, ybar) > eta else 0.0)
    else:
        raise UnsupportedMapClass(
            f"coderivative formula unavailable for {type(F).__name__}; use empirical_covering"
        )
    return list(np.maximum.accumulate(np.asarray(shells, dtype=float)))


def alpha_hat(F: SetValuedMap, xbar, ybar, schedule: SamplingSchedule = SamplingSchedule()) -> ModulusEstimate:
    """Covering constant of F around (xbar, ybar)."""
    xbar = as_vector(xbar, F.dim_in, "xbar")
    ybar = as_vector(ybar, F.dim_out, "ybar")
    if not F.value(xbar).contains(ybar, MEMBERSHIP_TOL):
        raise NotOnGraph(f"{ybar} is not in F({xbar})")
    shells = _shell_infima(F, xbar, ybar, schedule)
    return ModulusEstimate(
        "alpha_hat", extrapolate(shells), shells, converged(shells), list(schedule.eta_sequence), schedule.seed
    )


def alpha_hat_semilocal(F: SetValuedMap, xbar, schedule: SamplingSchedule = SamplingSchedule()) -> ModulusEstimate:
    """Covering constant with the inner inf over every y in F(x)."""
    xbar = as_vector(xbar, F.dim_in, "xbar")
    shells = _shell_infima(F, xbar, None, schedule)
    return ModulusEstimate(
        "alpha_hat_semilocal",
        extrapolate(shells),
        shells,
        converged(shells),
        list(schedule.eta_sequence),
        schedule.seed,
    )


def alpha_point(F: SetValuedMap, xbar) -> ModulusEstimate:
    if not F.single_valued:
        raise JacobianUnavailable(f"{type(F).__name__} is not smooth single-valued")
    v = smallest_singular_value(F.jacobian(as_vector(xbar, F.dim_in, "xbar")))
    return ModulusEstimate("alpha_point", v, [v], True)


# ---------------------------------------------------------------------------
# brute-force covering / metric regularity oracles


def _covered_by_search(F: SetValuedMap, x, rho, t, seed, tol) -> bool:
    """Least-norm Newton from x, then dense search of B(x, rho) plus local solve."""
    if F.single_valued:
        z, res = least_norm_newton(F, x, t)
        if res <= tol and np.linalg.norm(z - x) <= rho * (1 + 1e-9):
            return True
    pts = ball_points(x, rho, 128, seed)
    res = np.array([F.value(p).distance(t) for p in pts])
    if res.min() <= tol:
        return True
    for start in pts[np.argsort(res)[:3]]:
        if F.single_valued:
            fun = lambda z: 0.5 * np.sum((F.point(z) - t) ** 2)
            jac = lambda z: F.jacobian(z).T @ (F.point(z) - t)
        else:
            fun = lambda z: 0.5 * F.value(z).distance(t) ** 2
            jac = None
        sol = minimize(
            fun,
            start,
            jac=jac,
            method="SLSQP",
            constraints=[{"type": "ineq", "fun": lambda z: rho**2 - np.sum((z - x) ** 2)}],
            options={"ftol": 1e-16, "maxiter": 200},
        )
        z = sol.x
        if np.linalg.norm(z - x) <= rho * (1 + 1e-9) and F.value(z).distance(t) <= tol:
            return True
    return False


def _preimage_ratio(F, x, rho, t, seed, tol) -> float:
    """needed displacement / rho (> 1 means t is not in F(B(x, rho)))."""
    try:
        xp = nearest_preimage(F, x, t)
    except InverseUnavailable:
        return 0.0 if _covered_by_search(F, x, rho, t, seed, tol) else np.inf
    if xp is None:
        return np.inf
    return float(np.linalg.norm(xp - x)) / rho


def _target_directions(F: SetValuedMap, x, count: int, seed: int) -> np.ndarray:
    dirs = list(sphere_points(F.dim_out, count, seed))
    if F.single_valued:
        U, _, _ = np.linalg.svd(F.jacobian(x))
        # weakest left singular directions are where covering fails first
        for j in range(U.shape[1]):
            dirs.extend([U[:, j], -U[:, j]])
    return np.array(dirs)


def _graph_points_in(F: SetValuedMap, x, center_y, radius, seed, count=3) -> list:
    val = F.value(x)
    if val.is_empty:
        return []
    cands = [val.project(center_y)]
    if not val.is_singleton:
        cands += [val.project(q) for q in ball_points(center_y, radius, count * 4, seed)[1:]]
    out = []
    for y in cands:
        if np.linalg.norm(y - center_y) <= radius * (1 + 1e-12) and not any(np.allclose(y, o) for o in out):
            out.append(y)
        if len(out) >= count:
            break
    return out


def empirical_covering(
    F: SetValuedMap, xbar, ybar, r: float, alpha: float, schedule: SamplingSchedule = SamplingSchedule()
) -> CoveringCertificate:
    """Check F(x) n V + alpha*rho*B inside F(B(x, rho)) whenever B(x, rho) lies in U.

    U = B(xbar, r), V = B(ybar, alpha r). Targets are sampled on the sphere of
    radius alpha*rho (plus the Jacobian's singular directions) and membership is
    decided by a closed-form inverse when one exists, else by dense search.
    """
    xbar = as_vector(xbar, F.dim_in, "xbar")
    ybar = as_vector(ybar, F.dim_out, "ybar")
    v_radius = alpha * r
    n_x = max(4, schedule.samples_per_shell // 32)
    fractions = np.asarray(schedule.eta_sequence) / schedule.eta_sequence[0]
    xs = ball_points(xbar, r, n_x, schedule.seed)
    tol = 1e-9
    violations, count, checked = [], 0, 0

    def cases():
        for i, x in enumerate(xs):
            avail = r - np.linalg.norm(x - xbar)
            if avail <= 1e-12:
                continue
            for y in _graph_points_in(F, x, ybar, v_radius, schedule.seed + i):
                dirs = _target_directions(F, x, 6, schedule.seed + i)
                for rho in avail * fractions:
                    for d in dirs:
                        yield x, rho, y + alpha * rho * d

    for x, rho, t in cases():
        checked += 1
        ratio = _preimage_ratio(F, x, rho, t, schedule.seed, tol * (1 + alpha * rho))
        if ratio > 1 + 1e-9:
            count += 1
            violations.append(Violation(x.copy(), t, float(rho), float(ratio)))
            if count >= MAX_STORED_VIOLATIONS:
                # verdict is settled; stop the brute-force sweep
                break
    return CoveringCertificate(alpha, r, xbar, ybar, v_radius, violations, checked, count)


def metric_regularity_check(
    F: SetValuedMap,
    xbar,
    ybar,
    alpha: float,
    schedule: SamplingSchedule = SamplingSchedule(),
    r: Optional[float] = None,
) -> CoveringCertificate:
    """Check dist(x; F^{-1}(y)) <= dist(y; F(x)) / alpha on U x V.

    U = B(xbar, r), V = B(ybar, alpha r); r defaults to the first ladder radius.
    Needs a closed-form inverse (InverseUnavailable otherwise).
    """
    xbar = as_vector(xbar, F.dim_in, "xbar")
    ybar = as_vector(ybar, F.dim_out, "ybar")
    r = schedule.eta_sequence[0] if r is None else r
    v_radius = alpha * r
    nearest_preimage(F, xbar, ybar)  # raises InverseUnavailable early
    n_x = max(4, schedule.samples_per_shell // 32)
    xs = ball_points(xbar, r, n_x, schedule.seed)
    violations, count, checked = [], 0, 0
    for i, x in enumerate(xs):
        ys = list(ball_points(ybar, v_radius, 8, schedule.seed + i))
        val = F.value(x)
        if not val.is_empty:
            base = val.project(ybar)
            for d in _target_directions(F, x, 2, schedule.seed + i):
                for s in (v_radius, 0.5 * v_radius, 0.1 * v_radius):
                    y = base + s * d
                    if np.linalg.norm(y - ybar) <= v_radius:
                        ys.append(y)
        for y in ys:
            checked += 1
            xp = nearest_preimage(F, x, y)
            lhs = np.inf if xp is None else float(np.linalg.norm(xp - x))
            rhs = val.distance(y) / alpha
            if lhs > rhs * (1 + 1e-9) + 1e-12:
                count += 1
                if len(violations) < MAX_STORED_VIOLATIONS:
                    ratio = np.inf if rhs == 0 else lhs / rhs
                    violations.append(Violation(x.copy(), y, float(r), float(ratio)))
    return CoveringCertificate(alpha, r, xbar, ybar, v_radius, violations, checked, count)


# ---------------------------------------------------------------------------
# Lipschitz-like and calmness moduli


def _excess(A: ConvexSet, B: ConvexSet, v_center, v_radius, seed) -> float:
    """Sampled sup over a in A n V of dist(a; B)."""
    if A.is_empty:
        return 0.0
    if A.is_singleton:
        a = A.project(np.zeros(A.dim))
        if v_center is not None and np.linalg.norm(a - v_center) > v_radius:
            return 0.0
        return B.distance(a)
    pts = _points_of(A, v_center, v_radius, seed)
    return max((B.distance(a) for a in pts), default=0.0)


def _points_of(A: ConvexSet, v_center, v_radius, seed):
    if v_center is None:
        raise UnsupportedMapClass("set-valued excess needs a bounded V")
    pts = []
    for q in ball_points(v_center, v_radius, 16, seed):
        a = A.project(q)
        if np.linalg.norm(a - v_center) <= v_radius:
            pts.append(a)
    return pts


def lipschitz_like_estimate(
    G: ParamMap,
    p,
    U_center,
    U_radius: float,
    V_center=None,
    V_radius: Optional[float] = None,
    schedule: SamplingSchedule = SamplingSchedule(),
) -> ModulusEstimate:
    """Sampled smallest l with G(x,p) n V inside G(u,p) + l||x-u|| B on U."""
    p = as_vector(p, G.dim_p, "p")
    c = as_vector(U_center, G.dim_x, "U_center")
    if U_radius <= 0 or schedule.samples_per_shell < 2:
        raise DegenerateSampling("need a positive radius and at least two samples")
    if isinstance(G, SingleValued):
        V_center = None
    elif V_center is not None:
        V_center = as_vector(V_center, G.dim_out, "V_center")
    n_pairs = max(8, schedule.samples_per_shell // 4)
    base = unit_ball_pattern(G.dim_x, n_pairs, schedule.seed)
    dirs = sphere_points(G.dim_x, n_pairs, schedule.seed + 1)
    cache = {}

    def value(x):
        key = x.tobytes()
        if key not in cache:
            cache[key] = G.value(x, p)
        return cache[key]

    shells = []
    for k, eta in enumerate(schedule.eta_sequence):
        s = U_radius * eta / schedule.eta_sequence[0]
        best = 0.0
        for j, (u0, d) in enumerate(zip(base, dirs)):
            x = c + U_radius * u0
            u = x + s * d
            if np.linalg.norm(u - c) > U_radius:
                u = c + (u - c) * (U_radius / np.linalg.norm(u - c))
            dist = np.linalg.norm(x - u)
            if dist <= 1e-14:
                continue
            ex = max(
                _excess(value(x), value(u), V_center, V_radius, schedule.seed + j),
                _excess(value(u), value(x), V_center, V_radius, schedule.seed + j),
            )
            best = max(best, ex / dist)
        shells.append(best)
    value_ = float(max(shells))
    return ModulusEstimate(
        "lipschitz_like", value_, shells, converged(shells), list(schedule.eta_sequence), schedule.seed
    )


def calmness_estimate(
    f: Callable, xbar, kind: str = "two_sided", schedule: SamplingSchedule = SamplingSchedule()
) -> ModulusEstimate:
    """Per-radius max of the calmness ratio at xbar; value is the shrinking limit.

    kind: two_sided ||f(x)-f(xbar)||/|x-xbar|, above max(0, f(xbar)-f(x))/|x-xbar|,
    below max(0, f(x)-f(xbar))/|x-xbar|. `.sup` is the modulus over the first ball.
    """
    if kind not in ("two_sided", "above", "below"):
        raise ValueError(f"unknown calmness kind {kind!r}")
    xbar = as_vector(xbar, name="xbar")
    f0 = np.asarray(f(xbar), dtype=float)
    if kind != "two_sided" and f0.size != 1:
        raise ValueError("one-sided calmness needs a scalar function")
    pattern = unit_ball_pattern(xbar.size, schedule.samples_per_shell, schedule.seed)[1:]
    shells = []
    for eta in schedule.eta_sequence:
        best = 0.0
        for u in pattern:
            x = xbar + eta * u
            rho = np.linalg.norm(x - xbar)
            if rho == 0:
                continue
            fx = np.asarray(f(x), dtype=float)
            if kind == "two_sided":
                num = float(np.linalg.norm(fx - f0))
            elif kind == "above":
                num = max(0.0, f0.item() - fx.item())
            else:
                num = max(0.0, fx.item() - f0.item())
            best = max(best, num / rho)
        shells.append(best)
    name = {"two_sided": "calmness", "above": "calmness_above", "below": "calmness_below"}[kind]
    return ModulusEstimate(
        name, max(0.0, extrapolate(shells)), shells, converged(shells), list(schedule.eta_sequence), schedule.seed
    )


# ---------------------------------------------------------------------------
# image sampling at a scale (empirical covering rate)


def _polar_disk(center, r, count):
    nr = int(np.sqrt(count / 8))
    na = max(8, count // max(nr, 1))
    rad = np.linspace(0.0, r, nr + 1)
    ang = np.linspace(0.0, 2 * np.pi, na, endpoint=False)
    R, T = np.meshgrid(rad, ang)
    return center + np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])


def image_of_ball(F: SetValuedMap, center, r: float, count: int = 200000, seed: int = 0) -> np.ndarray:
    """F-images of dense samples of B(center, r); single-valued maps only.

    In the plane the samples are a polar grid (uniform in radius and angle).
    """
    if not F.single_valued:
        raise UnsupportedMapClass("image sampling needs a single-valued map")
    center = as_vector(center, F.dim_in)
    pts = _polar_disk(center, r, count) if F.dim_in == 2 else ball_points(center, r, count, seed)
    return F.points(pts)


def hausdorff_to_ball(points: np.ndarray, center, radius: float, probe: int = 50000, seed: int = 0) -> float:
    """Hausdorff distance between a point cloud and the closed ball B(center, radius)."""
    points = np.atleast_2d(points)
    center = np.asarray(center, dtype=float)
    outside = max(0.0, float(np.max(np.linalg.norm(points - center, axis=1)) - radius))
    probes = _polar_disk(center, radius, probe) if center.size == 2 else ball_points(center, radius, probe, seed)
    gap = float(cKDTree(points).query(probes)[0].max())
    return max(outside, gap)


def covering_scale_table(F: SetValuedMap, xbar, radii, count: int = 4096, seed: int = 0) -> list:
    """Per radius r: distance s from F(xbar) to the image of the sphere S(xbar, r), and s / r.

    When F(B(xbar, r)) has no holes, s is the inradius of the image around
    F(xbar), so s / r is the covering rate at that scale. Reported next to the
    limiting covering constant; the two differ at degenerate points.
    """
    xbar = as_vector(xbar, F.dim_in)
    y0 = F.point(xbar)
    if F.dim_in == 2:
        ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        dirs = sphere_points(F.dim_in, count, seed)
    rows = []
    for r in radii:
        img = F.points(xbar + r * dirs)
        s = float(np.min(np.linalg.norm(img - y0, axis=1)))
        rows.append({"r": float(r), "inradius": s, "rate": s / float(r)})
    return rows
