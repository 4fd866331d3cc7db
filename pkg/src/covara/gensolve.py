"""Generalized equations 0 in F(x) - g(x, p), implicit functions, and the beta / theta moduli.

Sign convention: a solution of the generalized equation is a coincidence
point of F and the single-valued G(x, p) = {g(x, p)}, i.e. g(sigma, p) lies in
F(sigma). The form 0 in G(x,p) + F(x) is recovered by replacing g with -G.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coincidence import CoincidenceResult, SolverConfig, solve_coincidence
from .errors import DegenerateSampling, JacobianUnavailable, NotOnGraph
from .moduli import ModulusEstimate
from .sampling import SamplingSchedule, converged, extrapolate, product_pattern, sphere_points, unit_ball_pattern
from .setmaps import MEMBERSHIP_TOL, SetValuedMap, SingleValued, Smooth, as_vector

FEASIBILITY_TOL = 1e-9


def _largest_singular_value(J: np.ndarray) -> float:
    return float(np.linalg.norm(J, 2)) if J.size else 0.0


def solve_generalized_equation(
    F: SetValuedMap,
    g: SingleValued,
    xbar,
    p,
    cfg: SolverConfig = SolverConfig(),
    pbar=None,
    schedule: Optional[SamplingSchedule] = None,
) -> CoincidenceResult:
    """sigma with g(sigma, p) in F(sigma) and |sigma - xbar| <= dist(g(xbar,p); F(xbar)) / (alpha - ell).

    The reference value ybar is the point of F(xbar) nearest to g(xbar, p), so
    the coincidence bound has exactly that numerator. When pbar is given,
    g(xbar, pbar) in F(xbar) is checked first.
    """
    xbar = as_vector(xbar, F.dim_in, "xbar")
    p = as_vector(p, g.dim_p, "p")
    Fx = F.value(xbar)
    if Fx.is_empty:
        raise NotOnGraph("F(xbar) is empty")
    if pbar is not None and not Fx.contains(g.point(xbar, pbar), MEMBERSHIP_TOL):
        raise NotOnGraph("g(xbar, pbar) is not in F(xbar)")
    ybar = Fx.project(g.point(xbar, p))
    return solve_coincidence(F, g, xbar, ybar, p, cfg, schedule=schedule)


def beta(h: SetValuedMap, x, schedule: SamplingSchedule = SamplingSchedule()) -> ModulusEstimate:
    """inf over shrinking t of sup over u in B(x, t) of the largest singular value of grad h(u)."""
    if not h.single_valued:
        raise JacobianUnavailable(f"{type(h).__name__} has no Jacobian")
    x = as_vector(x, h.dim_in, "x")
    pattern = unit_ball_pattern(h.dim_in, schedule.samples_per_shell, schedule.seed)
    shells = []
    for t in schedule.eta_sequence:
        shells.append(max(_largest_singular_value(h.jacobian(x + t * u)) for u in pattern))
    # sup over a shrinking ball can only decrease
    shells = list(np.minimum.accumulate(shells))
    return ModulusEstimate(
        "beta", max(0.0, extrapolate(shells)), shells, converged(shells), list(schedule.eta_sequence), schedule.seed
    )


@dataclass
class ThetaTable:
    radii: list
    theta_values: list
    inf_theta: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "radii": list(self.radii),
            "theta_values": list(self.theta_values),
            "inf_theta": self.inf_theta,
            "notes": list(self.notes),
        }


THETA_READING = "theta(r) takes the sup over x in B(xbar, r) and p in B(pbar, r)"


def theta_bound(
    g: SingleValued, xbar, pbar, radii=None, schedule: SamplingSchedule = SamplingSchedule()
) -> ThetaTable:
    """Sampled theta(r) = sup of beta(g(., p), x) over x in B(xbar, r), p in B(pbar, r).

    beta of a continuously differentiable map equals the largest singular value
    of its Jacobian at the point, which is what is sampled.
    """
    xbar = as_vector(xbar, g.dim_x, "xbar")
    pbar = as_vector(pbar, g.dim_p, "pbar")
    radii = list(schedule.eta_sequence if radii is None else radii)
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    pairs = product_pattern(g.dim_x, g.dim_p, schedule.samples_per_shell, schedule.seed)
    values = []
    for r in radii:
        values.append(
            max(_largest_singular_value(g.jacobian_x(xbar + r * u, pbar + r * v)) for u, v in pairs)
        )
    return ThetaTable([float(r) for r in radii], values, float(min(values)), [THETA_READING])


def deviation_lipschitz_estimate(
    f: SingleValued,
    xbar,
    pbar,
    U_radius: float,
    O_radius: float,
    schedule: SamplingSchedule = SamplingSchedule(),
) -> ModulusEstimate:
    """Sampled sup of |(f(x1,p)-f(x1,pbar)) - (f(x2,p)-f(x2,pbar))| / |x1-x2|.

    x1, x2 range over B(xbar, U_radius) and p over B(pbar, O_radius); shells
    shrink the pair distance along the schedule. The value is the max shell.
    """
    xbar = as_vector(xbar, f.dim_x, "xbar")
    pbar = as_vector(pbar, f.dim_p, "pbar")
    if U_radius <= 0 or schedule.samples_per_shell < 2:
        raise DegenerateSampling("need a positive radius and at least two samples")
    n_pairs = max(8, schedule.samples_per_shell // 4)
    base = unit_ball_pattern(f.dim_x, n_pairs, schedule.seed)
    dirs = sphere_points(f.dim_x, n_pairs, schedule.seed + 1)
    p_pattern = unit_ball_pattern(f.dim_p, n_pairs, schedule.seed + 2)
    fixed_p = [pbar + O_radius * v for v in p_pattern[: 1 + 2 * f.dim_p]]

    def dev(x, p):
        return f.point(x, p) - f.point(x, pbar)

    shells = []
    for eta in schedule.eta_sequence:
        s = U_radius * eta / schedule.eta_sequence[0]
        best = 0.0
        for j, (u0, d) in enumerate(zip(base, dirs)):
            x1 = xbar + U_radius * u0
            x2 = x1 + s * d
            if np.linalg.norm(x2 - xbar) > U_radius:
                x2 = xbar + (x2 - xbar) * (U_radius / np.linalg.norm(x2 - xbar))
            dist = np.linalg.norm(x1 - x2)
            if dist <= 1e-14:
                continue
            ps = fixed_p + [pbar + O_radius * p_pattern[j]]
            for p in ps:
                best = max(best, float(np.linalg.norm(dev(x1, p) - dev(x2, p))) / dist)
        shells.append(best)
    return ModulusEstimate(
        "deviation_lipschitz", float(max(shells)), shells, converged(shells), list(schedule.eta_sequence), schedule.seed
    )


@dataclass
class ImplicitResult:
    sigma: np.ndarray
    residual_norm: float
    bound: float
    c: float
    bound_satisfied: bool
    iterations: int = 0
    coincidence: Optional[CoincidenceResult] = None

    def to_dict(self) -> dict:
        out = {
            "sigma": [float(v) for v in self.sigma],
            "residual_norm": self.residual_norm,
            "bound": self.bound,
            "c": self.c,
            "bound_satisfied": self.bound_satisfied,
            "iterations": self.iterations,
        }
        if self.coincidence is not None:
            out["alpha"] = self.coincidence.alpha
            out["ell"] = self.coincidence.ell
        return out


def implicit_reduction(f: SingleValued, pbar):
    """(F, G) with F(x) = {f(x, pbar)} and G(x, p) = {f(x, pbar) - f(x, p)}.

    Their coincidence points at p are exactly the zeros of f(., p).
    """
    pbar = as_vector(pbar, f.dim_p, "pbar")
    F = Smooth(lambda x: f.point(x, pbar), f.dim_x, f.dim_out, jac=lambda x: f.jacobian_x(x, pbar), name="f(., pbar)")
    G = SingleValued(
        lambda x, p: f.point(x, pbar) - f.point(x, p),
        f.dim_x,
        f.dim_p,
        f.dim_out,
        jac_x=lambda x, p: f.jacobian_x(x, pbar) - f.jacobian_x(x, p),
    )
    return F, G


def solve_implicit(
    f: SingleValued,
    xbar,
    pbar,
    p,
    cfg: SolverConfig = SolverConfig(),
    schedule: Optional[SamplingSchedule] = None,
) -> ImplicitResult:
    """sigma(p) with f(sigma, p) = 0 and |sigma - xbar| <= |f(xbar, p)| / (alpha - ell)."""
    xbar = as_vector(xbar, f.dim_x, "xbar")
    pbar = as_vector(pbar, f.dim_p, "pbar")
    p = as_vector(p, f.dim_p, "p")
    if np.linalg.norm(f.point(xbar, pbar)) > FEASIBILITY_TOL:
        raise NotOnGraph("f(xbar, pbar) is not zero")
    F, G = implicit_reduction(f, pbar)
    res = solve_coincidence(F, G, xbar, F.point(xbar), p, cfg, schedule=schedule)
    resid = float(np.linalg.norm(f.point(res.sigma, p)))
    if res.iterations == 0:
        c = 1.0 / (cfg.alpha - cfg.ell) if cfg.alpha is not None and cfg.ell is not None else float("nan")
    else:
        c = 1.0 / (res.alpha - res.ell)
    bound = c * float(np.linalg.norm(f.point(xbar, p))) if np.isfinite(c) else 0.0
    gap = float(np.linalg.norm(res.sigma - xbar))
    return ImplicitResult(res.sigma, resid, bound, c, gap <= bound + 10 * cfg.tol, res.iterations, res)
