"""Optimal value function mu(p) = inf{phi(x, p) : g(x, p) in F(x)} and its stability verdicts.

mu is evaluated over a compact domain box. Semicontinuity and calmness are
certified on finitely many parameters along a shrinking ladder of radii, so
every "certified" verdict means "certified on samples". Assumption audits
mirror the hypotheses of the underlying stability theorems: a failed audit
downgrades a passing empirical check to "inconclusive", while an empirical
violation refutes regardless of the audit.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import CovaraError, UnsupportedMapClass
from .inverse import least_norm_newton
from .moduli import alpha_hat, alpha_hat_semilocal, lipschitz_like_estimate
from .sampling import SamplingSchedule, parallel_map, product_pattern, unit_ball_pattern
from .setmaps import (
    Affine,
    Box,
    Cone,
    ConstantSet,
    ConvexSet,
    IdentityPlusNormalCone,
    NormalCone,
    Polyhedron,
    SetValuedMap,
    Singleton,
    SingleValued,
    Smooth,
    WholeSpace,
    as_vector,
)

FEASIBLE_TOL = 1e-8
ALPHA_MARGIN = 0.9
ELL_MARGIN = 1.1
GRID_BUDGET = 20000
VERDICT_KEYS = ("usc", "lsc", "continuous", "calm_above", "calm_below", "calm", "lipschitz")
CERTIFIED, REFUTED, INCONCLUSIVE = "certified", "refuted", "inconclusive"


@dataclass(eq=False)
class ProblemInstance:
    """minimize phi(x, p) subject to g(x, p) in F(x), x in domain_box."""

    F: SetValuedMap
    g: SingleValued
    phi: Callable
    xbar: np.ndarray
    pbar: np.ndarray
    domain_box: Box
    param_box: Box
    name: str = "instance"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.xbar = as_vector(self.xbar, self.F.dim_in, "xbar")
        self.pbar = as_vector(self.pbar, self.g.dim_p, "pbar")
        if self.g.dim_x != self.F.dim_in or self.g.dim_out != self.F.dim_out:
            raise ValueError("g and F disagree on dimensions")
        if self.domain_box.dim != self.F.dim_in or self.param_box.dim != self.g.dim_p:
            raise ValueError("box dimensions do not match x or p")
        if not self.domain_box.is_bounded:
            raise ValueError("domain_box must be compact")

    @property
    def dim_x(self) -> int:
        return self.F.dim_in

    @property
    def dim_p(self) -> int:
        return self.g.dim_p

    def residual(self, x, p) -> float:
        """dist(g(x, p); F(x)), +inf when F(x) is empty."""
        return self.F.value(x).distance(self.g.point(x, p))

    def cost(self, x, p) -> float:
        return float(self.phi(as_vector(x, self.dim_x), as_vector(p, self.dim_p)))

    def nominal_issues(self) -> list:
        issues = []
        if not self.residual(self.xbar, self.pbar) <= 1e-9:
            issues.append("xbar is not feasible at pbar")
        if not np.isfinite(self.cost(self.xbar, self.pbar)):
            issues.append("phi(xbar, pbar) is not finite")
        return issues


@dataclass
class FeasibleSample:
    p: np.ndarray
    points: list
    exhaustive: bool
    full_box: bool = False  # every domain point is feasible

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------------------
# feasible sets


def _grid_shape(dim: int, resolution: Optional[int]) -> int:
    if resolution is None:
        resolution = 401 if dim == 1 else int(GRID_BUDGET ** (1.0 / dim))
    return max(3, int(resolution))


def domain_grid(box: Box, resolution: Optional[int] = None) -> np.ndarray:
    """Tensor grid of a compact box including its corners."""
    k = _grid_shape(box.dim, resolution)
    axes = [np.linspace(lo, hi, k) for lo, hi in zip(box.lower, box.upper)]
    return np.array(list(itertools.product(*axes))) if box.dim > 1 else axes[0][:, None]


def _affine_model(g: SingleValued, p, box: Box, seed: int = 0):
    """(h0, M) with g(x, p) = h0 + M (x - c) on the box, c its centre; None if g is not affine in x."""
    c = 0.5 * (box.lower + box.upper)
    h0 = g.point(c, p)
    M = g.jacobian_x(c, p)
    rng = np.random.default_rng(seed)
    scale = 1.0 + np.abs(h0).max() + np.linalg.norm(M, 2) * np.linalg.norm(box.upper - box.lower)
    for _ in range(6):
        x = rng.uniform(box.lower, box.upper)
        if np.linalg.norm(g.point(x, p) - h0 - M @ (x - c)) > 1e-8 * scale:
            return None
    return c, h0, M


def _affine_solutions(M, rhs, x_fixed_mask, x_fixed_vals, box: Box, resolution) -> list:
    """Points x in the box with M[:, free] x_free = rhs and pinned coordinates fixed."""
    n = box.dim
    free = ~x_fixed_mask
    x = np.where(x_fixed_mask, x_fixed_vals, 0.0)
    if not free.any():
        return [x] if np.linalg.norm(rhs) <= 1e-9 * (1 + np.abs(rhs).max()) else []
    Mf = M[:, free]
    sol, *_ = np.linalg.lstsq(Mf, rhs, rcond=None)
    if np.linalg.norm(Mf @ sol - rhs) > 1e-9 * (1 + np.abs(rhs).max()):
        return []
    # null space of Mf: the solution set is sol + span(N)
    _, s, vt = np.linalg.svd(Mf)
    rank = int(np.sum(s > 1e-10 * max(1.0, s.max() if s.size else 1.0)))
    N = vt[rank:].T
    base = x.copy()
    base[free] = sol
    if N.shape[1] == 0:
        return [base]
    # sample the affine continuum on a grid covering the box
    k = _grid_shape(N.shape[1], resolution)
    reach = float(np.linalg.norm(box.upper - box.lower))
    ts = np.linspace(-reach, reach, k)
    out = []
    for t in itertools.product(ts, repeat=N.shape[1]):
        z = base.copy()
        z[free] += N @ np.array(t)
        out.append(z)
    return out


def _in_box(x, box: Box, tol=1e-12) -> bool:
    return bool(np.all(x >= box.lower - tol) and np.all(x <= box.upper + tol))


def _enumerate_normal_cone_faces(inst: ProblemInstance, p, model, shift_identity: bool, resolution):
    """Solutions of g(x,p) - [x] in N(x; B) face by face, B the box of the normal cone."""
    B = inst.F.set
    n = inst.dim_x
    c, h0, M = model
    if shift_identity:
        M = M - np.eye(n)
        h0 = h0 - c
    # h(x) = h0 + M (x - c) must vanish on free coordinates and have the
    # outward sign on pinned ones
    pts = []
    choices = []
    for i in range(n):
        opts = []
        if B.lower[i] == B.upper[i]:
            opts.append(3)  # degenerate interval: any normal component
        else:
            opts.append(0)
            if np.isfinite(B.lower[i]):
                opts.append(1)
            if np.isfinite(B.upper[i]):
                opts.append(2)
        choices.append(opts)
    for state in itertools.product(*choices):
        state = np.array(state)
        pinned = state != 0
        vals = np.where(state == 1, B.lower, np.where(state == 2, B.upper, np.where(state == 3, B.lower, 0.0)))
        rows = ~pinned
        rhs = (-(h0 - M @ c))[rows] if rows.any() else np.zeros(0)
        if rows.any():
            Mr = M[rows]
            # move pinned columns to the right-hand side
            rhs = rhs - Mr[:, pinned] @ vals[pinned]
            cand = _affine_solutions(Mr, rhs, pinned, vals, inst.domain_box, resolution)
        else:
            cand = [vals.copy()]
        for x in cand:
            if not _in_box(x, inst.domain_box):
                continue
            free = state == 0
            if np.any(x[free] <= B.lower[free]) or np.any(x[free] >= B.upper[free]):
                continue
            h = h0 + M @ (x - c)
            if np.any(h[state == 1] > FEASIBLE_TOL) or np.any(h[state == 2] < -FEASIBLE_TOL):
                continue
            pts.append(x)
    return pts


def _polish(inst: ProblemInstance, p, points) -> list:
    """Clip into the domain box and keep points within the feasibility tolerance."""
    out = []
    for x in points:
        x = np.clip(x, inst.domain_box.lower, inst.domain_box.upper)
        if inst.residual(x, p) <= FEASIBLE_TOL:
            out.append(x)
    return out


def _dedupe(points, tol=1e-9) -> list:
    # lexicographic order puts near-duplicates next to each other in practice
    out = []
    for x in sorted(points, key=lambda v: tuple(v)):
        if all(np.linalg.norm(x - y) > tol for y in out[-8:]):
            out.append(x)
    return out


def _sampled_feasible(inst: ProblemInstance, p, resolution) -> list:
    grid = domain_grid(inst.domain_box, resolution)
    res = np.array([inst.residual(x, p) for x in grid])
    order = np.argsort(res, kind="stable")[:32]
    found = [grid[i] for i in order if res[i] <= FEASIBLE_TOL]
    F = inst.F
    if F.single_valued:
        H = Smooth(
            lambda x: F.point(x) - inst.g.point(x, p),
            inst.dim_x,
            F.dim_out,
            jac=lambda x: F.jacobian(x) - inst.g.jacobian_x(x, p),
        )
        for i in order:
            if not np.isfinite(res[i]):
                continue
            x, r = least_norm_newton(H, grid[i], np.zeros(F.dim_out), tol=1e-15)
            if r <= FEASIBLE_TOL and _in_box(x, inst.domain_box, 1e-10):
                found.append(np.clip(x, inst.domain_box.lower, inst.domain_box.upper))
    return _dedupe(_polish(inst, p, found))


def feasible_set_sample(inst: ProblemInstance, p, resolution: Optional[int] = None) -> FeasibleSample:
    """S(p) intersected with the domain box.

    Branch enumeration (exhaustive) when F is Affine, a constant set, or a
    normal-cone map of a box, and g is affine in x; continua are represented
    by the domain grid. Otherwise residual-grid seeds refined by Gauss-Newton.
    """
    p = as_vector(p, inst.dim_p, "p")
    key = ("S", p.tobytes(), resolution)
    if key not in inst._cache:
        inst._cache[key] = _feasible_set_sample(inst, p, resolution)
    return inst._cache[key]


def _feasible_set_sample(inst: ProblemInstance, p, resolution) -> FeasibleSample:
    F, box = inst.F, inst.domain_box
    if isinstance(F, ConstantSet) and isinstance(F.set, WholeSpace):
        return FeasibleSample(p, list(domain_grid(box, resolution)), True, True)
    model = _affine_model(inst.g, p, box)
    if model is not None:
        c, h0, M = model
        if isinstance(F, Affine):
            # h0 + M (x - c) = A x + b
            D = M - F.A
            rhs = F.b - h0 + M @ c
            pts = _affine_solutions(D, rhs, np.zeros(inst.dim_x, bool), np.zeros(inst.dim_x), box, resolution)
            pts = [x for x in pts if _in_box(x, box)]
            return FeasibleSample(p, _dedupe(_polish(inst, p, pts)), True)
        if isinstance(F, ConstantSet) and isinstance(F.set, Singleton):
            rhs = F.set.point - h0 + M @ c
            pts = _affine_solutions(M, rhs, np.zeros(inst.dim_x, bool), np.zeros(inst.dim_x), box, resolution)
            pts = [x for x in pts if _in_box(x, box)]
            return FeasibleSample(p, _dedupe(_polish(inst, p, pts)), True)
        if isinstance(F, ConstantSet):
            grid = domain_grid(box, resolution)
            pts = [x for x in grid if F.set.contains(inst.g.point(x, p), FEASIBLE_TOL)]
            return FeasibleSample(p, pts, True, len(pts) == len(grid))
        if isinstance(F, (NormalCone, IdentityPlusNormalCone)) and isinstance(F.set, Box):
            pts = _enumerate_normal_cone_faces(inst, p, model, isinstance(F, IdentityPlusNormalCone), resolution)
            return FeasibleSample(p, _dedupe(_polish(inst, p, pts)), True)
    return FeasibleSample(p, _sampled_feasible(inst, p, resolution), False)


def evaluate_mu(inst: ProblemInstance, p, resolution: Optional[int] = None) -> float:
    """min of phi(., p) over the feasible sample, refined by bounded descent when S(p) is the whole box.

    +inf when no feasible point is found in the domain box.
    """
    p = as_vector(p, inst.dim_p, "p")
    key = ("mu", p.tobytes(), resolution)
    if key not in inst._cache:
        inst._cache[key] = _evaluate_mu(inst, p, resolution)
    return inst._cache[key]


def _evaluate_mu(inst: ProblemInstance, p, resolution) -> float:
    sample = feasible_set_sample(inst, p, resolution)
    if not sample.points:
        return float("inf")
    vals = [inst.cost(x, p) for x in sample.points]
    i = int(np.argmin(vals))
    best = float(vals[i])
    if sample.full_box:
        box = inst.domain_box
        res = minimize(
            lambda x: inst.cost(np.clip(x, box.lower, box.upper), p),
            sample.points[i],
            method="Powell",
            bounds=list(zip(box.lower, box.upper)),
            options={"xtol": 1e-12, "ftol": 1e-15, "maxfev": 4000},
        )
        if np.isfinite(res.fun):
            best = min(best, float(inst.cost(np.clip(res.x, box.lower, box.upper), p)))
    return best + 0.0  # no negative zero


# ---------------------------------------------------------------------------
# reports


@dataclass
class MarginalReport:
    grid: list = field(default_factory=list)  # (p, mu, feasible_count)
    verdicts: dict = field(default_factory=dict)
    moduli: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def merge(self, other: "MarginalReport") -> "MarginalReport":
        seen = {tuple(g[0]) for g in self.grid}
        grid = list(self.grid) + [g for g in other.grid if tuple(g[0]) not in seen]
        return MarginalReport(
            sorted(grid, key=lambda g: tuple(g[0])),
            {**self.verdicts, **other.verdicts},
            {**self.moduli, **other.moduli},
            {**self.witnesses, **other.witnesses},
            {**self.audit, **other.audit},
            list(self.notes) + [n for n in other.notes if n not in self.notes],
        )

    def to_dict(self) -> dict:
        return {
            "grid": [{"p": [float(v) for v in p], "mu": mu, "feasible_count": n} for p, mu, n in self.grid],
            "verdicts": dict(self.verdicts),
            "moduli": dict(self.moduli),
            "witnesses": self.witnesses,
            "audit": self.audit,
            "notes": list(self.notes),
        }

    def summary(self) -> str:
        basis = {
            "usc": "upper semicontinuity theorem (covering of F beats the Lipschitz modulus of g)",
            "lsc": "lower semicontinuity theorem (semilocal covering over S(pbar))",
            "continuous": "continuity corollary (usc and lsc combined)",
            "calm_above": "calmness from above, kappa = k1 + k1*k2/(alpha - ell)",
            "calm_below": "calmness from below, kappa = k1 + k1*k2/(alpha - ell)",
            "calm": "calmness corollary (both one-sided bounds)",
            "lipschitz": "Lipschitz theorem (convex cost and convex pair (g, F))",
        }
        lines = []
        for key in VERDICT_KEYS:
            if key in self.verdicts:
                lines.append(f"{key:<11} {self.verdicts[key]:<13} {basis[key]}")
        for key in sorted(self.moduli):
            lines.append(f"{key} = {self.moduli[key]!r}")
        for key in sorted(self.witnesses):
            lines.append(f"witness[{key}] = {self.witnesses[key]}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# parameter ladders and shrinking-limit rules


def _param_shells(inst: ProblemInstance, schedule: SamplingSchedule, p_grid=None):
    """(points, radii): parameter points other than pbar and a decreasing radius ladder."""
    pbar = inst.pbar
    if p_grid is not None:
        pts = [as_vector(p, inst.dim_p, "p") for p in p_grid]
        pts = [p for p in pts if np.linalg.norm(p - pbar) > 0]
        dists = sorted({float(np.linalg.norm(p - pbar)) for p in pts}, reverse=True)
        if not dists:
            raise ValueError("parameter grid has no point other than pbar")
        radii = [dists[0]]
        while radii[-1] / 2 >= dists[-1]:
            radii.append(radii[-1] / 2)
        if radii[-1] > dists[-1]:
            radii.append(dists[-1])
        return pts, radii
    R = schedule.eta_sequence[0]
    radii = [R * e / schedule.eta_sequence[0] for e in schedule.eta_sequence]
    eye = np.eye(inst.dim_p)
    extra = unit_ball_pattern(inst.dim_p, 2 * inst.dim_p + 5, schedule.seed)[1 + 2 * inst.dim_p :]
    dirs = [s * e for e in eye for s in (1.0, -1.0)]
    dirs += [u / np.linalg.norm(u) for u in extra if np.linalg.norm(u) > 0] if inst.dim_p > 1 else []
    pts = []
    for r in radii:
        for d in dirs:
            p = pbar + r * d
            if _in_box(p, inst.param_box):
                pts.append(p)
    return pts, radii


MIN_RADIUS_SPAN = 8.0  # a trend needs radii spanning at least this factor


def _decays(values, radii, tol) -> bool:
    """Shell excesses tend to zero: final excess at most tol or shrinking like sqrt(radius)."""
    vals = [max(0.0, v) for v in values]
    if vals[-1] <= tol:
        return True
    if not np.isfinite(vals[0]) or radii[0] < MIN_RADIUS_SPAN * radii[-1]:
        return False
    return vals[-1] <= vals[0] * np.sqrt(radii[-1] / radii[0])


def _persists(values, radii, tol) -> bool:
    """The smallest-radius excess is a sizeable share of the largest one."""
    vals = [max(0.0, v) for v in values]
    if radii[0] < MIN_RADIUS_SPAN * radii[-1]:
        return False
    return vals[-1] > tol and vals[-1] >= 0.5 * max(vals)


def _shell_extremes(points, mus, pbar, radii, mu_bar, sign):
    """Per radius, sup of sign*(mu(p) - mu_bar) over points within the radius, and the arg point."""
    out = []
    for r in radii:
        best, arg = -np.inf, None
        for p, m in zip(points, mus):
            d = np.linalg.norm(p - pbar)
            if d > r * (1 + 1e-12):
                continue
            v = sign * (m - mu_bar) if not (np.isinf(m) and np.isinf(mu_bar)) else 0.0
            key = (v, -d, tuple(p))
            if arg is None or key > best_key:
                best, arg, best_key = v, p, key
        out.append((best, arg))
    return out


def _joint_calmness(fn, x0, p0, radius, schedule: SamplingSchedule, base=None) -> float:
    """sup of |fn(u, p) - base| / (|u - x0| + |p - p0|) over u in B(x0, r), p in B(p0, r)."""
    base = fn(x0, p0) if base is None else base
    best = 0.0
    for u, v in product_pattern(x0.size, p0.size, schedule.samples_per_shell, schedule.seed):
        x, p = x0 + radius * u, p0 + radius * v
        den = np.linalg.norm(x - x0) + np.linalg.norm(p - p0)
        if den == 0:
            continue
        best = max(best, abs(float(fn(x, p)) - base) / den)
    return best


def _calmness_in_p(g: SingleValued, u, p0, radius, schedule: SamplingSchedule) -> float:
    base = g.point(u, p0)
    best = 0.0
    for v in unit_ball_pattern(p0.size, schedule.samples_per_shell, schedule.seed)[1:]:
        p = p0 + radius * v
        d = np.linalg.norm(p - p0)
        if d > 0:
            best = max(best, float(np.linalg.norm(g.point(u, p) - base)) / d)
    return best


def _one_sided_cost_limit(inst: ProblemInstance, centers, schedule: SamplingSchedule, sign: float):
    """Per radius t: sup of sign*(phi(u, p) - phi(x, pbar)) over x in centers, u in B(x,t), p in B(pbar,t).

    sign=+1 audits upper semicontinuity of phi, sign=-1 the uniform lower one.
    """
    pairs = product_pattern(inst.dim_x, inst.dim_p, max(64, schedule.samples_per_shell // 4), schedule.seed)
    shells = []
    for t in schedule.eta_sequence:
        best = -np.inf
        for x in centers:
            base = inst.cost(x, inst.pbar)
            for u, v in pairs:
                val = sign * (inst.cost(x + t * u, inst.pbar + t * v) - base)
                best = max(best, val)
        shells.append(best)
    return shells


def _mu_table(inst: ProblemInstance, points, resolution):
    def one(p):
        return evaluate_mu(inst, p, resolution), len(feasible_set_sample(inst, p, resolution))

    return parallel_map(one, points)


def _grid_rows(points, table):
    return [(np.asarray(p, float), float(m), int(n)) for p, (m, n) in zip(points, table)]


def _kappa(k1, k2, alpha, ell) -> tuple:
    """(kappa, k1*k1*k2/(alpha - ell)) from the calmness and covering moduli."""
    gap = alpha - ell
    if not gap > 0:
        return float("inf"), float("inf")
    return k1 + k1 * k2 / gap, k1 * k1 * k2 / gap


def _floats(**kw) -> dict:
    return {k: float(v) for k, v in kw.items()}


def _fmt(p) -> list:
    return [float(v) for v in np.atleast_1d(p)]


# ---------------------------------------------------------------------------
# certification


def certify_usc(
    inst: ProblemInstance,
    schedule: SamplingSchedule = SamplingSchedule(),
    p_grid=None,
    resolution: Optional[int] = None,
) -> MarginalReport:
    """Upper semicontinuity and calmness from above of mu at pbar."""
    rep = MarginalReport()
    delta = schedule.eta_sequence[0]
    audit = {"nominal": inst.nominal_issues() or "ok", "closed_graph": "closed by map class"}
    ybar = inst.g.point(inst.xbar, inst.pbar)
    try:
        a_hat = alpha_hat(inst.F, inst.xbar, ybar, schedule).value
    except CovaraError as exc:
        a_hat = float("nan")
        audit["alpha_hat"] = f"unavailable: {type(exc).__name__}"
    probe_ps = [inst.pbar] + [inst.pbar + delta * s * e for e in np.eye(inst.dim_p) for s in (1.0, -1.0)]
    ell_hat = max(lipschitz_like_estimate(inst.g, q, inst.xbar, delta, schedule=schedule).value for q in probe_ps)
    k2 = _calmness_in_p(inst.g, inst.xbar, inst.pbar, delta, schedule)
    phi_shells = _one_sided_cost_limit(inst, [inst.xbar], schedule, +1.0)
    phi_usc = _decays(phi_shells, list(schedule.eta_sequence), 1e-9 * (1 + abs(inst.cost(inst.xbar, inst.pbar))))
    audit.update(
        {
            "alpha_hat": audit.get("alpha_hat", a_hat),
            "ell_hat": ell_hat,
            "ell_below_alpha_hat": bool(ell_hat < a_hat),
            "g_xbar_continuous": bool(np.isfinite(k2)),
            "phi_usc": bool(phi_usc),
        }
    )
    audit_ok = audit["nominal"] == "ok" and audit["ell_below_alpha_hat"] and phi_usc and np.isfinite(k2)

    points, radii = _param_shells(inst, schedule, p_grid)
    mu_bar = evaluate_mu(inst, inst.pbar, resolution)
    table = _mu_table(inst, points, resolution)
    mus = [m for m, _ in table]
    rep.grid = sorted(
        _grid_rows([inst.pbar] + points, [(mu_bar, len(feasible_set_sample(inst, inst.pbar, resolution)))] + table),
        key=lambda g: tuple(g[0]),
    )
    ext = _shell_extremes(points, mus, inst.pbar, radii, mu_bar, +1.0)
    excess = [v for v, _ in ext]
    tol = 1e-9 * (1 + abs(mu_bar))
    if _persists(excess, radii, tol):
        rep.verdicts["usc"] = REFUTED
        arg = ext[-1][1]
        rep.witnesses["usc"] = {"p": _fmt(arg), "mu": float(_mu_at(points, mus, arg)), "mu_bar": mu_bar}
    elif _decays(excess, radii, tol):
        rep.verdicts["usc"] = CERTIFIED if audit_ok else INCONCLUSIVE
    else:
        rep.verdicts["usc"] = INCONCLUSIVE

    # calmness from above: mu(p) <= mu_bar + kappa |p - pbar|
    k1 = _joint_calmness(lambda x, p: inst.cost(x, p), inst.xbar, inst.pbar, delta, schedule)
    alpha = ALPHA_MARGIN * a_hat
    ell = ELL_MARGIN * ell_hat
    kappa, kappa_prod = _kappa(k1, k2, alpha, ell)
    rep.moduli.update(_floats(kappa1=k1, kappa2=k2, alpha=alpha, ell=ell, kappa=kappa, kappa_product_form=kappa_prod))
    rep.verdicts["calm_above"] = _calm_verdict(
        rep.verdicts["usc"], audit_ok, kappa, points, mus, inst.pbar, mu_bar, radii, +1.0, rep.witnesses, "calm_above"
    )
    rep.audit["usc"] = audit
    return rep


def _mu_at(points, mus, arg) -> float:
    for p, m in zip(points, mus):
        if p is arg or np.array_equal(p, arg):
            return m
    return float("nan")


def _calm_verdict(semi, audit_ok, kappa, points, mus, pbar, mu_bar, radii, sign, witnesses, key) -> str:
    if semi == REFUTED:
        return REFUTED
    worst = None
    for p, m in zip(points, mus):
        d = float(np.linalg.norm(p - pbar))
        excess = sign * (m - mu_bar) if np.isfinite(m) else (np.inf if sign > 0 else -np.inf)
        if excess > kappa * d + 1e-8:
            if worst is None or excess - kappa * d > worst[0]:
                worst = (excess - kappa * d, p, m)
    if worst is None:
        return CERTIFIED if audit_ok and np.isfinite(kappa) and semi == CERTIFIED else INCONCLUSIVE
    witnesses[key] = {"p": _fmt(worst[1]), "mu": float(worst[2]), "mu_bar": float(mu_bar), "kappa": kappa}
    # unbounded ratios toward pbar refute calmness outright
    ratios = []
    for r in radii:
        vals = [
            sign * (m - mu_bar) / np.linalg.norm(p - pbar)
            for p, m in zip(points, mus)
            if np.linalg.norm(p - pbar) <= r * (1 + 1e-12)
        ]
        ratios.append(max(vals) if vals else 0.0)
    if ratios and ratios[-1] > kappa and ratios[-1] >= 2 * max(ratios[0], 1e-300):
        return REFUTED
    return INCONCLUSIVE


def _feasible_centers(inst: ProblemInstance, resolution, limit=8) -> list:
    pts = feasible_set_sample(inst, inst.pbar, resolution).points
    if len(pts) > limit:
        idx = np.linspace(0, len(pts) - 1, limit).round().astype(int)
        pts = [pts[i] for i in sorted(set(idx))]
    # the nominal solution is always audited
    if not any(np.linalg.norm(inst.xbar - q) <= 1e-12 for q in pts):
        pts = [inst.xbar] + list(pts)
    return pts


def certify_lsc(
    inst: ProblemInstance,
    schedule: SamplingSchedule = SamplingSchedule(),
    p_grid=None,
    resolution: Optional[int] = None,
) -> MarginalReport:
    """Lower semicontinuity and calmness from below of mu at pbar."""
    rep = MarginalReport()
    delta = schedule.eta_sequence[0]
    centers = _feasible_centers(inst, resolution)
    audit = {"nominal": inst.nominal_issues() or "ok", "closed_graph": "closed by map class", "centers": len(centers)}
    one_shell = SamplingSchedule((delta,), schedule.samples_per_shell, schedule.seed)
    try:
        a_semi = min(alpha_hat_semilocal(inst.F, u, one_shell).per_shell_values[0] for u in centers)
    except CovaraError as exc:
        a_semi = float("nan")
        audit["alpha_semilocal"] = f"unavailable: {type(exc).__name__}"
    ell_hat = max(lipschitz_like_estimate(inst.g, inst.pbar, u, delta, schedule=schedule).value for u in centers)
    near = [u + delta * w for u in centers for w in unit_ball_pattern(inst.dim_x, 1 + 2 * inst.dim_x, schedule.seed)]
    k2 = max(_calmness_in_p(inst.g, u, inst.pbar, delta, schedule) for u in near)
    phi_shells = _one_sided_cost_limit(inst, centers, schedule, -1.0)
    phi_lsc = _decays(phi_shells, list(schedule.eta_sequence), 1e-9 * (1 + abs(inst.cost(inst.xbar, inst.pbar))))
    alpha = ALPHA_MARGIN * a_semi
    ell = ELL_MARGIN * ell_hat
    audit.update(
        {
            "alpha_semilocal": audit.get("alpha_semilocal", a_semi),
            "ell_hat": ell_hat,
            "alpha_above_ell": bool(alpha > ell),
            "g_uniformly_continuous_in_p": bool(np.isfinite(k2)),
            "phi_uniformly_lsc": bool(phi_lsc),
        }
    )
    audit_ok = audit["nominal"] == "ok" and audit["alpha_above_ell"] and phi_lsc and np.isfinite(k2)

    points, radii = _param_shells(inst, schedule, p_grid)
    mu_bar = evaluate_mu(inst, inst.pbar, resolution)
    table = _mu_table(inst, points, resolution)
    mus = [m for m, _ in table]
    rep.grid = sorted(
        _grid_rows([inst.pbar] + points, [(mu_bar, len(feasible_set_sample(inst, inst.pbar, resolution)))] + table),
        key=lambda g: tuple(g[0]),
    )
    ext = _shell_extremes(points, mus, inst.pbar, radii, mu_bar, -1.0)
    deficit = [v for v, _ in ext]
    tol = 1e-9 * (1 + abs(mu_bar))
    if _persists(deficit, radii, tol):
        rep.verdicts["lsc"] = REFUTED
        arg = ext[-1][1]
        rep.witnesses["lsc"] = {"p": _fmt(arg), "mu": float(_mu_at(points, mus, arg)), "mu_bar": mu_bar}
    elif _decays(deficit, radii, tol):
        rep.verdicts["lsc"] = CERTIFIED if audit_ok else INCONCLUSIVE
    else:
        rep.verdicts["lsc"] = INCONCLUSIVE

    k1 = max(
        _joint_calmness(lambda x, p: inst.cost(x, p), u, inst.pbar, delta, schedule, base=inst.cost(u, inst.pbar))
        for u in centers
    )
    kappa, kappa_prod = _kappa(k1, k2, alpha, ell)
    rep.moduli.update(_floats(kappa1_below=k1, kappa2_below=k2, alpha_below=alpha, ell_below=ell, kappa_below=kappa))
    rep.verdicts["calm_below"] = _calm_verdict(
        rep.verdicts["lsc"], audit_ok, kappa, points, mus, inst.pbar, mu_bar, radii, -1.0, rep.witnesses, "calm_below"
    )
    rep.audit["lsc"] = audit
    return rep


def certify_continuity_calmness(
    inst: ProblemInstance,
    schedule: SamplingSchedule = SamplingSchedule(),
    p_grid=None,
    resolution: Optional[int] = None,
) -> MarginalReport:
    """Both one-sided certifications plus the two-sided calmness bound with one kappa."""
    rep = certify_usc(inst, schedule, p_grid, resolution).merge(certify_lsc(inst, schedule, p_grid, resolution))
    v = rep.verdicts
    if v["usc"] == REFUTED or v["lsc"] == REFUTED:
        v["continuous"] = REFUTED
    elif v["usc"] == CERTIFIED and v["lsc"] == CERTIFIED:
        v["continuous"] = CERTIFIED
    else:
        v["continuous"] = INCONCLUSIVE

    m = rep.moduli
    k1 = max(m["kappa1"], m["kappa1_below"])
    k2 = max(m["kappa2"], m["kappa2_below"])
    alpha = min(m["alpha"], m["alpha_below"])
    ell = max(m["ell"], m["ell_below"])
    kappa, kappa_prod = _kappa(k1, k2, alpha, ell)
    m.update(_floats(kappa1=k1, kappa2=k2, alpha=alpha, ell=ell, kappa=kappa, kappa_product_form=kappa_prod))

    mu_bar = next(mu for p, mu, _ in rep.grid if np.array_equal(p, inst.pbar))
    worst = None
    for p, mu, _ in rep.grid:
        d = float(np.linalg.norm(p - inst.pbar))
        gap = abs(mu - mu_bar) if np.isfinite(mu) else np.inf
        if gap > kappa * d + 1e-8 and (worst is None or gap - kappa * d > worst[0]):
            worst = (gap - kappa * d, p, mu)
    if v["calm_above"] == REFUTED or v["calm_below"] == REFUTED:
        v["calm"] = REFUTED
    elif v["calm_above"] == CERTIFIED and v["calm_below"] == CERTIFIED and worst is None:
        v["calm"] = CERTIFIED
    else:
        v["calm"] = INCONCLUSIVE
    if worst is not None:
        rep.witnesses["calm"] = {"p": _fmt(worst[1]), "mu": float(worst[2]), "mu_bar": float(mu_bar), "kappa": kappa}
    rep.notes.append("kappa = k1 + k1*k2/(alpha - ell); kappa_product_form = k1*k1*k2/(alpha - ell) is reported alongside")
    return rep


# ---------------------------------------------------------------------------
# convexity


@dataclass
class ConvexPairResult:
    holds_on_samples: bool
    witness: Optional[dict]
    checked: int
    process_holds: Optional[bool] = None
    process_witness: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "holds_on_samples": self.holds_on_samples,
            "witness": self.witness,
            "checked": self.checked,
            "process_holds": self.process_holds,
            "process_witness": self.process_witness,
        }


LAMBDAS = (0.5, 0.25, 0.75, 0.0, 1.0)


def _lattice(dim: int, values=(0.0, 1.0, -1.0)) -> list:
    return [np.array(v) for v in itertools.product(values, repeat=dim)]


def _is_cone_set(S: ConvexSet) -> bool:
    if isinstance(S, (Cone, WholeSpace)):
        return True
    if isinstance(S, Box):
        return bool(np.all(np.isin(S.lower, [0.0, -np.inf])) and np.all(np.isin(S.upper, [0.0, np.inf])))
    if isinstance(S, Polyhedron):
        return bool(np.all(S.b == 0))
    return False


def _cone_valued(F: SetValuedMap) -> bool:
    if isinstance(F, ConstantSet):
        return _is_cone_set(F.set)
    if isinstance(F, Affine):
        return not np.any(F.b)
    return isinstance(F, NormalCone)


def _members(S: ConvexSet, rng, count: int) -> list:
    if S.is_empty:
        return []
    return [S.project(v) for v in rng.normal(scale=2.0, size=(count, S.dim))]


def _convex_process_test(F: SetValuedMap, rng, budget: int):
    n = F.dim_in
    xs = _lattice(n) + list(rng.uniform(-2, 2, size=(8, n)))
    checked = 0
    for x, z in itertools.product(xs, repeat=2):
        Fx, Fz, Fxz = F.value(x), F.value(z), F.value(x + z)
        for v, w in zip(_members(Fx, rng, 3), _members(Fz, rng, 3)):
            checked += 1
            if not Fxz.contains(v + w, FEASIBLE_TOL * (1 + np.linalg.norm(v + w))):
                return False, {"x": _fmt(x), "z": _fmt(z), "v": _fmt(v), "w": _fmt(w), "kind": "additive"}
        for lam in (0.5, 2.0, 0.0):
            Flx = F.value(lam * x)
            for v in _members(Fx, rng, 2):
                checked += 1
                if not Flx.contains(lam * v, FEASIBLE_TOL * (1 + np.linalg.norm(v))):
                    return False, {"x": _fmt(x), "lambda": lam, "v": _fmt(v), "kind": "homogeneous"}
        if checked >= budget:
            break
    return True, None


def check_convex_pair(
    g: SingleValued,
    F: SetValuedMap,
    sample_budget: int = 2000,
    seed: int = 0,
    pairs=None,
    box: Optional[Box] = None,
) -> ConvexPairResult:
    """Sampled test that convex combinations of graph pairs stay in the graph.

    Graph pairs (x, p) with g(x, p) in F(x) come from `pairs` when given, else
    from the lattice {0, 1, -1}^(n+d) followed by uniform draws in `box` (or
    [-2, 2]^n) and the parameter cube [-2, 2]^d. Lattice pairs and the fixed
    lambdas are tried first so that simple witnesses surface first.
    """
    rng = np.random.default_rng(seed)
    n, d = g.dim_x, g.dim_p

    def feasible(x, p):
        return F.value(x).distance(g.point(x, p)) <= FEASIBLE_TOL * (1 + np.linalg.norm(g.point(x, p)))

    if pairs is None:
        cand = [(x, p) for x in _lattice(n) for p in _lattice(d)]
        lo = box.lower if box is not None else -2 * np.ones(n)
        hi = box.upper if box is not None else 2 * np.ones(n)
        cand += [(rng.uniform(lo, hi), rng.uniform(-2, 2, size=d)) for _ in range(64)]
        pairs = [(x, p) for x, p in cand if feasible(x, p)]
    else:
        pairs = [(as_vector(x, n), as_vector(p, d)) for x, p in pairs]
    checked = 0
    witness = None
    for (x1, p1), (x2, p2) in itertools.combinations(pairs, 2):
        lams = LAMBDAS + tuple(rng.uniform(0, 1, size=2))
        for lam in lams:
            checked += 1
            combo = lam * g.point(x1, p1) + (1 - lam) * g.point(x2, p2)
            xm = lam * x1 + (1 - lam) * x2
            if F.value(xm).distance(combo) > FEASIBLE_TOL * (1 + np.linalg.norm(combo)):
                witness = {
                    "x1": _fmt(x1), "p1": _fmt(p1), "x2": _fmt(x2), "p2": _fmt(p2), "lambda": float(lam),
                    "combination": _fmt(combo), "value_at_combination": _describe_value(F.value(xm)),
                }
                break
        if witness is not None or checked >= sample_budget:
            break
    proc, proc_w = (None, None)
    if _cone_valued(F):
        proc, proc_w = _convex_process_test(F, rng, sample_budget)
    return ConvexPairResult(witness is None, witness, checked, proc, proc_w)


def _describe_value(S: ConvexSet):
    if S.is_singleton:
        return _fmt(S.project(np.zeros(S.dim)))
    return type(S).__name__


def certify_lipschitz(
    inst: ProblemInstance,
    schedule: SamplingSchedule = SamplingSchedule(),
    p_grid=None,
    resolution: Optional[int] = None,
    base: Optional[MarginalReport] = None,
) -> MarginalReport:
    """Local Lipschitz continuity of mu near pbar via convexity of phi and of the pair (g, F)."""
    rep = base if base is not None else certify_continuity_calmness(inst, schedule, p_grid, resolution)
    rng = np.random.default_rng(schedule.seed)
    audit = {}

    # joint midpoint convexity of phi on the domain x parameter boxes
    phi_w = None
    lat_x = [inst.domain_box.project(inst.xbar + v) for v in _lattice(inst.dim_x)]
    lat_p = [inst.param_box.project(inst.pbar + v) for v in _lattice(inst.dim_p)]
    cand = [(x, p) for x in lat_x for p in lat_p]
    cand += [
        (rng.uniform(inst.domain_box.lower, inst.domain_box.upper), _uniform_param(inst, rng)) for _ in range(64)
    ]
    for (x1, p1), (x2, p2) in itertools.combinations(cand, 2):
        f1, f2 = inst.cost(x1, p1), inst.cost(x2, p2)
        fm = inst.cost(0.5 * (x1 + x2), 0.5 * (p1 + p2))
        if fm > 0.5 * (f1 + f2) + 1e-9 * (1 + abs(f1) + abs(f2)):
            phi_w = {"x1": _fmt(x1), "p1": _fmt(p1), "x2": _fmt(x2), "p2": _fmt(p2), "mid_value": fm}
            break
    audit["phi_convex"] = phi_w is None

    # convexity of gph S by midpoint feasibility of sampled feasible pairs
    points, radii = _param_shells(inst, schedule, p_grid)
    graph = []
    for p in [inst.pbar] + points[: 4 * inst.dim_p + 4]:
        pts = feasible_set_sample(inst, p, resolution).points
        for x in pts[:: max(1, len(pts) // 6)][:6]:
            graph.append((x, p))
    gph_w = None
    for (x1, p1), (x2, p2) in itertools.combinations(graph, 2):
        xm, pm = 0.5 * (x1 + x2), 0.5 * (p1 + p2)
        if inst.residual(xm, pm) > FEASIBLE_TOL:
            gph_w = {"x1": _fmt(x1), "p1": _fmt(p1), "x2": _fmt(x2), "p2": _fmt(p2)}
            break
    audit["graph_S_convex"] = gph_w is None
    pair = check_convex_pair(inst.g, inst.F, seed=schedule.seed, pairs=graph or None, box=inst.domain_box)
    audit["convex_pair"] = pair.holds_on_samples

    # local Lipschitz estimate: max two-point slope of mu within each radius
    mus = {tuple(p): mu for p, mu, _ in rep.grid}
    grid_pts = [np.asarray(p) for p in mus]
    slopes = []
    for r in radii:
        inside = [p for p in grid_pts if np.linalg.norm(p - inst.pbar) <= r * (1 + 1e-12)]
        best = 0.0
        for a, b in itertools.combinations(inside, 2):
            ma, mb = mus[tuple(a)], mus[tuple(b)]
            if not (np.isfinite(ma) and np.isfinite(mb)):
                best = np.inf
                continue
            best = max(best, abs(ma - mb) / np.linalg.norm(a - b))
        slopes.append(best)
    estimate = slopes[-1] if slopes else float("nan")
    rep.moduli["local_lipschitz_estimate"] = float(estimate)
    rep.moduli["lipschitz_slopes"] = [float(v) for v in slopes]

    audits_ok = audit["phi_convex"] and audit["graph_S_convex"] and audit["convex_pair"]
    cont = rep.verdicts.get("continuous", INCONCLUSIVE)
    if cont == REFUTED or not np.isfinite(estimate):
        rep.verdicts["lipschitz"] = REFUTED
    elif audits_ok and cont == CERTIFIED:
        rep.verdicts["lipschitz"] = CERTIFIED
    else:
        rep.verdicts["lipschitz"] = INCONCLUSIVE
    if phi_w is not None:
        rep.witnesses["phi_convex"] = phi_w
    if gph_w is not None:
        rep.witnesses["graph_S_convex"] = gph_w
    if pair.witness is not None:
        rep.witnesses["convex_pair"] = pair.witness
    rep.audit["lipschitz"] = audit
    return rep


def _uniform_param(inst: ProblemInstance, rng) -> np.ndarray:
    lo = np.where(np.isfinite(inst.param_box.lower), inst.param_box.lower, inst.pbar - 1.0)
    hi = np.where(np.isfinite(inst.param_box.upper), inst.param_box.upper, inst.pbar + 1.0)
    return rng.uniform(lo, hi)


def certify_all(
    inst: ProblemInstance,
    schedule: SamplingSchedule = SamplingSchedule(),
    p_grid=None,
    resolution: Optional[int] = None,
) -> MarginalReport:
    rep = certify_continuity_calmness(inst, schedule, p_grid, resolution)
    return certify_lipschitz(inst, schedule, p_grid, resolution, base=rep)
