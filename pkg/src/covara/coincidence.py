"""Covering-step oracle and the coincidence-point iteration for F(x) n G(x, p).

The iteration starts at xbar. At x_k it takes y_k, the point of G(x_k, p)
nearest to F(x_k), and moves to a point x_{k+1} with y_k in F(x_{k+1}) at
distance at most dist(y_k; F(x_k)) / alpha. With G Lipschitz-like of modulus
ell < alpha the residuals contract by ell / alpha, and the total travel is at
most dist(ybar; G(xbar, p)) / (alpha - ell).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    CovaraError,
    InverseUnavailable,
    LaunchConditionViolated,
    MaxIterExceeded,
    NotContractive,
    NotOnGraph,
    StepFailed,
    TooFewPoints,
    UnsupportedMapClass,
)
from .inverse import affine_box_split, least_norm_newton, nearest_preimage
from .moduli import alpha_hat, empirical_covering, lipschitz_like_estimate
from .sampling import SamplingSchedule, parallel_map
from .setmaps import (
    MEMBERSHIP_TOL,
    Affine,
    ConstantSet,
    ConvexSet,
    IdentityPlusNormalCone,
    Negate,
    ParamMap,
    SetValuedMap,
    as_vector,
)

STEP_SLACK = 1e-6
DEFAULT_ALPHA_MARGIN = 0.9
DEFAULT_ELL_MARGIN = 1.1
PROBE_RADII = tuple(2.0 ** -k for k in range(0, 11))


@dataclass(frozen=True)
class SolverConfig:
    """Assumed moduli and stopping rule; None means estimate at solve time."""

    alpha: Optional[float] = None
    ell: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 200
    trust_radius_r: Optional[float] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.ell is not None and self.ell < 0:
            raise ValueError("ell must be nonnegative")
        if self.trust_radius_r is not None and not self.trust_radius_r > 0:
            raise ValueError("trust_radius_r must be positive")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "ell": self.ell,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "trust_radius_r": self.trust_radius_r,
        }


@dataclass
class CoincidenceResult:
    sigma: np.ndarray
    witness_y: np.ndarray
    residual: float
    iterations: int
    bound: float
    bound_satisfied: bool
    trace: list = field(default_factory=list)  # (x_k, residual_k)
    alpha: float = float("nan")
    ell: float = float("nan")
    trust_radius_r: float = float("nan")
    initial_distance: float = float("nan")

    @property
    def step_lengths(self) -> list:
        xs = [x for x, _ in self.trace]
        return [float(np.linalg.norm(b - a)) for a, b in zip(xs, xs[1:])]

    @property
    def residuals(self) -> list:
        return [r for _, r in self.trace]

    def to_dict(self) -> dict:
        return {
            "sigma": [float(v) for v in self.sigma],
            "witness_y": [float(v) for v in self.witness_y],
            "residual": self.residual,
            "iterations": self.iterations,
            "bound": self.bound,
            "bound_satisfied": self.bound_satisfied,
            "alpha": self.alpha,
            "ell": self.ell,
            "trust_radius_r": self.trust_radius_r,
            "initial_distance": self.initial_distance,
            "trace": [{"x": [float(v) for v in x], "residual": r} for x, r in self.trace],
        }


@dataclass
class SelectionEntry:
    p: np.ndarray
    result: Optional[CoincidenceResult]
    error: Optional[str] = None


@dataclass
class SelectionTable:
    entries: list
    config: Optional[SolverConfig] = None

    def sigmas(self) -> list:
        return [e.result.sigma if e.result is not None else None for e in self.entries]

    def rows(self) -> tuple:
        """CSV header and rows: p..., sigma..., residual, iterations, bound, bound_satisfied, error."""
        if not self.entries:
            return [], []
        dp = self.entries[0].p.size
        dx = next((e.result.sigma.size for e in self.entries if e.result is not None), 0)
        header = [f"p{i}" for i in range(dp)] + [f"sigma{i}" for i in range(dx)]
        header += ["residual", "iterations", "bound", "bound_satisfied", "error"]
        rows = []
        for e in self.entries:
            row = list(e.p)
            if e.result is None:
                row += [None] * dx + [None, None, None, None, e.error]
            else:
                res = e.result
                row += list(res.sigma) + [res.residual, res.iterations, res.bound, res.bound_satisfied, ""]
            rows.append(row)
        return header, rows


# ---------------------------------------------------------------------------
# covering step


def _raw_step(F: SetValuedMap, x: np.ndarray, t: np.ndarray, alpha: float, tol: float) -> np.ndarray:
    if isinstance(F, Affine):
        xn = nearest_preimage(F, x, t)
        if xn is None:
            raise StepFailed("target is outside the range of the affine map")
        return xn
    if isinstance(F, Negate):
        return _raw_step(F.inner, x, -t, alpha, tol)
    if isinstance(F, ConstantSet):
        if F.set.contains(t, tol):
            return x.copy()
        raise StepFailed("target lies outside the constant value")
    if isinstance(F, IdentityPlusNormalCone) or affine_box_split(F) is not None:
        try:
            return nearest_preimage(F, x, t)
        except InverseUnavailable as exc:
            raise UnsupportedMapClass(str(exc)) from exc
    if F.single_valued:
        d0 = float(np.linalg.norm(t - F.point(x)))
        cap = d0 / alpha
        xn, _ = least_norm_newton(F, x, t, tol=1e-16, max_iter=100, step_cap=lambda res: 2.0 * cap)
        return xn
    raise UnsupportedMapClass(f"no covering step for {type(F).__name__}")


def covering_step(F: SetValuedMap, x, y_target, alpha: float, tol: float = 1e-10) -> np.ndarray:
    """x' with dist(y_target; F(x')) <= tol (1 + |y_target|) and |x' - x| <= dist(y_target; F(x)) / alpha.

    The step-length contract carries a relative slack of 1e-6; StepFailed when
    either condition fails (alpha larger than the local covering rate).
    """
    x = as_vector(x, F.dim_in, "x")
    t = as_vector(y_target, F.dim_out, "y_target")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    d = F.value(x).distance(t)
    if d == 0.0:
        return x.copy()
    xn = _raw_step(F, x, t, alpha, tol)
    reached = F.value(xn).distance(t)
    if not reached <= tol * (1 + float(np.linalg.norm(t))):
        raise StepFailed(f"covering step left residual {reached:.3e} > tol {tol:.1e} (relative)")
    step = float(np.linalg.norm(xn - x))
    if step > d / alpha * (1 + STEP_SLACK):
        raise StepFailed(f"step {step:.6g} exceeds dist/alpha = {d / alpha:.6g}")
    return xn


# ---------------------------------------------------------------------------
# nearest points between two convex values


def nearest_pair(A: ConvexSet, B: ConvexSet, max_iter: int = 2000, tol: float = 1e-15):
    """(a, b) with a in A, b in B realizing dist(A, B), by alternating projections.

    Exact in one projection when either set is a single point.
    """
    if A.is_singleton:
        a = A.project(np.zeros(A.dim))
        return a, B.project(a)
    if B.is_singleton:
        b = B.project(np.zeros(B.dim))
        return A.project(b), b
    a = A.project(np.zeros(A.dim))
    b = B.project(a)
    for _ in range(max_iter):
        a_new = A.project(b)
        b_new = B.project(a_new)
        moved = np.linalg.norm(a_new - a) + np.linalg.norm(b_new - b)
        a, b = a_new, b_new
        if moved <= tol * (1 + np.linalg.norm(a)):
            break
    return a, b


# ---------------------------------------------------------------------------
# solver


def default_trust_radius(F: SetValuedMap, xbar, ybar, alpha: float, schedule: Optional[SamplingSchedule] = None) -> float:
    """Half the largest probe radius 2^-k at which empirical covering holds; 0 if none."""
    schedule = schedule or SamplingSchedule.ladder(levels=4, samples_per_shell=64)
    # an infinite covering constant cannot size the target sphere; probe at unit rate
    rate = alpha if np.isfinite(alpha) else 1.0
    for r in PROBE_RADII:
        if empirical_covering(F, xbar, ybar, r, rate, schedule).holds:
            return r / 2
    return 0.0


def resolve_config(
    F: SetValuedMap,
    G: ParamMap,
    xbar,
    ybar,
    p,
    cfg: SolverConfig,
    schedule: Optional[SamplingSchedule] = None,
) -> SolverConfig:
    """Fill missing alpha, ell and r from the estimators with safety margins."""
    schedule = schedule or SamplingSchedule()
    alpha, ell, r = cfg.alpha, cfg.ell, cfg.trust_radius_r
    if alpha is None:
        alpha = DEFAULT_ALPHA_MARGIN * alpha_hat(F, xbar, ybar, schedule).value
        if not alpha > 0:
            raise NotContractive("estimated covering constant is zero")
    if r is None:
        r = default_trust_radius(F, xbar, ybar, alpha)
    if ell is None:
        radius = r if r > 0 else schedule.eta_sequence[0]
        est = lipschitz_like_estimate(G, p, xbar, radius, ybar, alpha * radius, schedule)
        ell = DEFAULT_ELL_MARGIN * est.value
    return replace(cfg, alpha=float(alpha), ell=float(ell), trust_radius_r=float(r))


def solve_coincidence(
    F: SetValuedMap,
    G: ParamMap,
    xbar,
    ybar,
    p,
    cfg: SolverConfig = SolverConfig(),
    pbar=None,
    schedule: Optional[SamplingSchedule] = None,
) -> CoincidenceResult:
    """sigma with F(sigma) n G(sigma, p) nonempty and |sigma - xbar| <= dist(ybar; G(xbar,p)) / (alpha - ell)."""
    xbar = as_vector(xbar, F.dim_in, "xbar")
    ybar = as_vector(ybar, F.dim_out, "ybar")
    p = as_vector(p, G.dim_p, "p")
    if G.dim_x != F.dim_in or G.dim_out != F.dim_out:
        raise ValueError("F and G disagree on dimensions")
    if not F.value(xbar).contains(ybar, MEMBERSHIP_TOL):
        raise NotOnGraph("ybar is not in F(xbar)")
    if pbar is not None and not G.value(xbar, as_vector(pbar, G.dim_p, "pbar")).contains(ybar, MEMBERSHIP_TOL):
        raise NotOnGraph("ybar is not in G(xbar, pbar)")
    if cfg.alpha is not None and cfg.ell is not None and cfg.ell >= cfg.alpha:
        raise NotContractive(f"ell = {cfg.ell} >= alpha = {cfg.alpha}")

    G0 = G.value(xbar, p)
    if G0.is_empty:
        raise LaunchConditionViolated("G(xbar, p) is empty")
    d0 = G0.distance(ybar)
    tol = cfg.tol
    if d0 == 0.0:
        # xbar is already a coincidence point at p
        alpha = cfg.alpha if cfg.alpha is not None else float("nan")
        ell = cfg.ell if cfg.ell is not None else float("nan")
        r = cfg.trust_radius_r if cfg.trust_radius_r is not None else float("nan")
        return CoincidenceResult(xbar.copy(), ybar.copy(), 0.0, 0, 0.0, True, [(xbar.copy(), 0.0)], alpha, ell, r, 0.0)

    cfg = resolve_config(F, G, xbar, ybar, p, cfg, schedule)
    alpha, ell, r = cfg.alpha, cfg.ell, cfg.trust_radius_r
    if ell >= alpha:
        raise NotContractive(f"ell = {ell} >= alpha = {alpha}")
    if not d0 < (alpha - ell) * r:
        raise LaunchConditionViolated(f"dist(ybar; G(xbar,p)) = {d0:.6g} >= (alpha - ell) * r = {(alpha - ell) * r:.6g}")
    bound = d0 / (alpha - ell)

    x = xbar.copy()
    trace = []
    for k in range(cfg.max_iter + 1):
        Fx, Gx = F.value(x), G.value(x, p)
        if Fx.is_empty or Gx.is_empty:
            raise StepFailed(f"empty value at iterate {k}")
        y, _ = nearest_pair(Gx, Fx)
        res = Fx.distance(y)
        trace.append((x.copy(), float(res)))
        if res <= tol:
            gap = float(np.linalg.norm(x - xbar))
            return CoincidenceResult(
                x, y, float(res), k, bound, gap <= bound + 10 * tol, trace, alpha, ell, r, d0
            )
        if k == cfg.max_iter:
            break
        x = covering_step(F, x, y, alpha, tol * 1e-3)
    raise MaxIterExceeded(f"residual {trace[-1][1]:.3e} after {cfg.max_iter} iterations")


def _describe(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def solve_family(
    F: SetValuedMap,
    G: ParamMap,
    xbar,
    ybar,
    pbar,
    p_grid,
    cfg: SolverConfig = SolverConfig(),
    schedule: Optional[SamplingSchedule] = None,
) -> SelectionTable:
    """One solve per grid point; failures are recorded, not raised.

    Missing moduli are estimated once at pbar and shared by every grid point.
    """
    xbar = as_vector(xbar, F.dim_in, "xbar")
    ybar = as_vector(ybar, F.dim_out, "ybar")
    pbar = as_vector(pbar, G.dim_p, "pbar")
    grid = [as_vector(p, G.dim_p, "p") for p in p_grid]
    shared = cfg
    try:
        if cfg.alpha is None or cfg.ell is None or cfg.trust_radius_r is None:
            shared = resolve_config(F, G, xbar, ybar, pbar, cfg, schedule)
    except CovaraError as exc:
        return SelectionTable([SelectionEntry(p, None, _describe(exc)) for p in grid], cfg)

    def one(p):
        try:
            return SelectionEntry(p, solve_coincidence(F, G, xbar, ybar, p, shared, pbar, schedule))
        except CovaraError as exc:
            return SelectionEntry(p, None, _describe(exc))

    return SelectionTable(parallel_map(one, grid), shared)


# ---------------------------------------------------------------------------
# selection continuity along a loop


def _bottleneck_cycle(cands: list) -> float:
    """min over one choice per position of the max jump around the closed loop."""
    best = np.inf
    first = cands[0]
    for c0 in first:
        cost = np.array([0.0])
        prev = np.atleast_2d(c0)
        for cur in cands[1:]:
            cur = np.atleast_2d(cur)
            jumps = np.linalg.norm(cur[:, None, :] - prev[None, :, :], axis=2)
            cost = np.min(np.maximum(jumps, cost[None, :]), axis=1)
            prev = cur
        closing = np.linalg.norm(prev - np.asarray(c0)[None, :], axis=1)
        best = min(best, float(np.min(np.maximum(cost, closing))))
    return best


def detect_selection_discontinuity(table: SelectionTable, loop_order=None, branches=None) -> float:
    """Largest jump of the selection around a closed loop of parameters.

    Without `branches` the solved sigmas are used as given. With `branches`
    (one list of candidate solutions per table entry), returns the smallest
    achievable largest jump over all per-point choices.
    """
    n = len(table.entries)
    order = list(range(n)) if loop_order is None else [int(i) for i in loop_order]
    if sorted(order) != list(range(n)):
        raise ValueError("loop_order must be a permutation of the table indices")
    if n < 3:
        raise TooFewPoints(f"a loop needs at least 3 points, got {n}")
    if branches is None:
        pts = []
        for i in order:
            res = table.entries[i].result
            if res is None:
                raise ValueError(f"entry {i} has no solution: {table.entries[i].error}")
            pts.append(res.sigma)
        cands = [[s] for s in pts]
    else:
        if len(branches) != n:
            raise ValueError("branches needs one candidate list per table entry")
        cands = [[as_vector(c) for c in branches[i]] for i in order]
        if any(len(c) == 0 for c in cands):
            raise ValueError("every loop point needs at least one candidate")
    return _bottleneck_cycle(cands)
