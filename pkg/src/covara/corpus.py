"""Built-in gallery of problem instances with expected values.

Each entry pairs a problem document and a runner that computes named
quantities with expectations. Every expectation carries a provenance string
naming where its value comes from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coincidence import SelectionEntry, SelectionTable, detect_selection_discontinuity
from .document import ProblemDocument, parse_document
from .errors import CovaraError
from .gensolve import solve_generalized_equation
from .marginal import certify_all, certify_lsc, certify_usc, evaluate_mu, feasible_set_sample
from .moduli import alpha_hat, alpha_point, covering_scale_table, hausdorff_to_ball, image_of_ball

RELATIONS = ("eq", "ge", "le")


@dataclass(frozen=True)
class Expectation:
    quantity: str
    value: object  # float or verdict string
    tolerance: float = 0.0
    provenance: str = ""
    relation: str = "eq"

    def check(self, actual) -> bool:
        if isinstance(self.value, str) or isinstance(actual, str):
            return actual == self.value
        if actual is None or not np.isfinite(actual) or not np.isfinite(self.value):
            return actual == self.value
        if self.relation == "ge":
            return actual >= self.value - self.tolerance
        if self.relation == "le":
            return actual <= self.value + self.tolerance
        return abs(actual - self.value) <= self.tolerance


@dataclass
class CorpusEntry:
    name: str
    description: str
    document: dict
    expected: list
    runner: Callable
    _doc: Optional[ProblemDocument] = field(default=None, repr=False)

    def __post_init__(self):
        missing = [e.quantity for e in self.expected if not e.provenance]
        if missing:
            raise ValueError(f"{self.name}: expectations without provenance: {missing}")

    @property
    def doc(self) -> ProblemDocument:
        if self._doc is None:
            self._doc = parse_document(self.document)
        return self._doc

    def run(self, seed: Optional[int] = None) -> dict:
        """Compute quantities and compare; returns a deterministic report record."""
        schedule = self.doc.sampling_schedule(seed)
        try:
            quantities, artifacts = self.runner(self.doc, schedule)
            error = None
        except CovaraError as exc:
            quantities, artifacts = {}, {}
            error = f"{type(exc).__name__}: {exc}"
        checks = []
        for e in self.expected:
            actual = quantities.get(e.quantity)
            checks.append(
                {
                    "quantity": e.quantity,
                    "value": actual,
                    "expected": e.value,
                    "tolerance": e.tolerance,
                    "relation": e.relation,
                    "provenance": e.provenance,
                    "passed": actual is not None and bool(e.check(actual)),
                }
            )
        return {
            "entry": self.name,
            "seed": schedule.seed,
            "checks": checks,
            "passed": error is None and all(c["passed"] for c in checks),
            "error": error,
            "artifacts": artifacts,
        }


# ---------------------------------------------------------------------------
# documents

_P_IDENTITY_2 = {"type": "single_valued", "dim_x": 2, "dim_p": 2, "components": [["p", 0], ["p", 1]]}

SQUARE_MAP = {
    "maps": {"F": {"type": "builtin", "name": "half_complex_square"}, "g": _P_IDENTITY_2},
    "problem": {"xbar": [0.0, 0.0], "pbar": [0.0, 0.0]},
    "solver": {"ell": 0.0},
}

SQUARE_MAP_LOOP = {**SQUARE_MAP, "sweep": {"loop": {"center": [0.0, 0.0], "radius": 0.02, "count": 64}}}

JUMP_MARGINAL_GRID = [[0.01 * k] for k in range(1, 101)] + [[-0.01 * k] for k in range(1, 101)] + [[0.0]]

JUMP_MARGINAL = {
    "maps": {
        "F": {"type": "constant_set", "set": {"type": "whole_space", "dim": 1}, "dim_in": 1},
        "g": {"type": "single_valued", "dim_x": 1, "dim_p": 1, "components": [0.0]},
        "phi": ["max", -1.0, ["mul", ["abs", ["p", 0]], ["x", 0]]],
    },
    "problem": {
        "xbar": [0.0],
        "pbar": [0.0],
        "domain_box": {"lower": [-100.0], "upper": [100.0]},
        "param_box": {"lower": [-1.0], "upper": [1.0]},
    },
    "sweep": {"points": JUMP_MARGINAL_GRID},
}

PROJECTION_GE = {
    "maps": {
        "F": {"type": "identity_plus_normal_cone", "set": {"type": "box", "lower": [0.0, 0.0], "upper": [1.0, 1.0]}},
        "g": _P_IDENTITY_2,
    },
    "problem": {"xbar": [0.0, 0.0], "pbar": [-1.0, -1.0]},
    "solver": {"alpha": 1.0, "ell": 0.0, "trust_radius_r": 10.0},
    "sweep": {"range": {"lower": [-0.5, -0.5], "upper": [1.5, 1.5], "count": 5}},
}

AFFINE_GE = {
    "maps": {
        "F": {"type": "affine", "A": [[1.0, 0.0, 1.0], [0.0, 2.0, 1.0]]},
        "g": {"type": "affine_param", "A": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], "B": [[1.0, 0.0], [0.0, 1.0]]},
    },
    "problem": {"xbar": [0.0, 0.0, 0.0], "pbar": [0.0, 0.0]},
    "solver": {"alpha": 1.0, "ell": 0.0, "trust_radius_r": 100.0},
}

CONVEX_MARGINAL = {
    "maps": {
        "F": {"type": "identity", "dim": 1},
        "g": {"type": "single_valued", "dim_x": 1, "dim_p": 1, "components": [["p", 0]]},
        "phi": ["abs", ["x", 0]],
    },
    "problem": {
        "xbar": [0.0],
        "pbar": [0.0],
        "domain_box": {"lower": [-5.0], "upper": [5.0]},
        "param_box": {"lower": [-2.0], "upper": [2.0]},
    },
}

BRANCH_VI = {
    "maps": {
        "F": {"type": "normal_cone", "set": {"type": "box", "lower": [0.0], "upper": [None]}},
        "g": {"type": "single_valued", "dim_x": 1, "dim_p": 1, "components": [["sub", ["x", 0], ["p", 0]]]},
        "phi": ["x", 0],
    },
    "problem": {
        "xbar": [0.0],
        "pbar": [0.0],
        "domain_box": {"lower": [-5.0], "upper": [5.0]},
        "param_box": {"lower": [-2.0], "upper": [2.0]},
    },
}


# ---------------------------------------------------------------------------
# runners


def _complex_sqrt_branches(t) -> list:
    w = np.sqrt(2 * complex(t[0], t[1]))
    root = np.array([w.real, w.imag])
    return [root, -root]


def run_square_map(doc: ProblemDocument, schedule) -> tuple:
    F = doc.F()
    off = np.array([0.6, 0.8])
    q = {
        "alpha_point_origin": alpha_point(F, doc.xbar()).value,
        "alpha_hat_origin": alpha_hat(F, doc.xbar(), F.point(doc.xbar()), schedule).value,
        "alpha_hat_off_origin": alpha_hat(F, off, F.point(off), schedule).value,
    }
    for r in (0.2, 0.4):
        pts = image_of_ball(F, doc.xbar(), r, seed=schedule.seed)
        q[f"image_hausdorff_r{r}"] = hausdorff_to_ball(pts, F.point(doc.xbar()), r * r / 2, seed=schedule.seed)
    table = covering_scale_table(F, doc.xbar(), [0.25, 0.5, 1.0], seed=schedule.seed)
    q["covering_rate_r1"] = table[-1]["rate"]
    return q, {"covering_scale_table": table}


def run_square_map_loop(doc: ProblemDocument, schedule) -> tuple:
    loop = doc.sweep_points()
    table = SelectionTable([SelectionEntry(p, None) for p in loop])
    jump = detect_selection_discontinuity(table, branches=[_complex_sqrt_branches(p) for p in loop])
    return {"min_max_jump": jump}, {"loop_points": len(loop)}


def run_jump_marginal(doc: ProblemDocument, schedule) -> tuple:
    inst = doc.instance("example-5-2")
    grid = doc.sweep_points()
    mus = [evaluate_mu(inst, p) for p in grid]
    off = [m for p, m in zip(grid, mus) if p[0] != 0]
    at0 = next(m for p, m in zip(grid, mus) if p[0] == 0)
    usc = certify_usc(inst, schedule, p_grid=grid)
    lsc = certify_lsc(inst, schedule, p_grid=grid)
    q = {
        "max_abs_mu_plus_one_off_origin": max(abs(m + 1.0) for m in off),
        "mu_at_origin": at0,
        "usc_verdict": usc.verdicts["usc"],
        "lsc_verdict": lsc.verdicts["lsc"],
    }
    rows = [[float(p[0]), m] for p, m in zip(grid, mus)]
    return q, {"mu_grid": rows, "lsc_witness": lsc.witnesses.get("lsc")}


def run_projection_ge(doc: ProblemDocument, schedule) -> tuple:
    F, g, cfg = doc.F(), doc.g(), doc.solver_config()
    worst_err, worst_ratio, all_bounds = 0.0, 0.0, True
    for p in doc.sweep_points():
        res = solve_generalized_equation(F, g, doc.xbar(), p, cfg, pbar=doc.pbar(), schedule=schedule)
        worst_err = max(worst_err, float(np.max(np.abs(res.sigma - np.clip(p, 0.0, 1.0)))))
        all_bounds = all_bounds and res.bound_satisfied
        rs = res.residuals
        for a, b in zip(rs, rs[1:]):
            if a > 0:
                worst_ratio = max(worst_ratio, b / a)
    q = {"max_error_vs_clip": worst_err, "bounds_satisfied": float(all_bounds), "max_contraction_ratio": worst_ratio}
    return q, {}


def run_affine_ge(doc: ProblemDocument, schedule) -> tuple:
    p = np.array([1.0, 2.0])
    res = solve_generalized_equation(doc.F(), doc.g(), doc.xbar(), p, doc.solver_config(), pbar=doc.pbar())
    q = {f"sigma{i}": float(v) for i, v in enumerate(res.sigma)}
    q["bound_satisfied"] = float(res.bound_satisfied)
    return q, {"result": res.to_dict()}


def run_convex_marginal(doc: ProblemDocument, schedule) -> tuple:
    rep = certify_all(doc.instance("convex-marginal"), schedule)
    m = rep.moduli
    q = {f"{k}_verdict": v for k, v in rep.verdicts.items()}
    q["kappa"] = m["kappa"]
    q["kappa_formula_gap"] = abs(m["kappa"] - (m["kappa1"] + m["kappa1"] * m["kappa2"] / (m["alpha"] - m["ell"])))
    q["local_lipschitz_estimate"] = m["local_lipschitz_estimate"]
    q["max_calmness_violation"] = max(abs(mu - 0.0) - m["kappa"] * abs(p[0]) for p, mu, _ in rep.grid)
    return q, {"report": rep.to_dict()}


def run_branch_vi(doc: ProblemDocument, schedule) -> tuple:
    inst = doc.instance("branch-vi")
    s_pos, s_neg = feasible_set_sample(inst, [1.0]), feasible_set_sample(inst, [-1.0])
    q = {
        "feasible_count_p1": float(len(s_pos)),
        "feasible_count_pm1": float(len(s_neg)),
        "mu_p1": evaluate_mu(inst, [1.0]),
        "mu_pm1": evaluate_mu(inst, [-1.0]),
    }
    return q, {"feasible_p1": [[float(v) for v in x] for x in s_pos.points]}


# ---------------------------------------------------------------------------
# registry

WORKED = "worked example"
CLOSED = "closed form"
ORACLE = "independent oracle"

CORPUS = {
    e.name: e
    for e in [
        CorpusEntry(
            "example-4-2",
            "F(x) = (x1^2 - x2^2, 2 x1 x2)/2 with g = p: covering constants and image of balls",
            SQUARE_MAP,
            [
                Expectation("alpha_point_origin", 0.0, 1e-8, CLOSED + ": Jacobian vanishes at 0"),
                Expectation("alpha_hat_origin", 0.0, 1e-8, CLOSED + ": infimum of |x| over balls around 0"),
                Expectation("alpha_hat_off_origin", 1.0, 1e-3, CLOSED + ": smallest singular value equals |x|"),
                Expectation("image_hausdorff_r0.2", 0.0, 1e-3, CLOSED + ": F(B(0,r)) = B(0, r^2/2)", "le"),
                Expectation("image_hausdorff_r0.4", 0.0, 1e-3, CLOSED + ": F(B(0,r)) = B(0, r^2/2)", "le"),
                Expectation("covering_rate_r1", 0.5, 1e-3, CLOSED + ": image radius r^2/2 over r at r = 1"),
            ],
            run_square_map,
        ),
        CorpusEntry(
            "example-4-2-loop",
            "square-root branches along a loop of radius 0.02 admit no continuous selection",
            SQUARE_MAP_LOOP,
            [
                Expectation("min_max_jump", 0.2, 0.0, WORKED + ": every selection jumps", "ge"),
                Expectation("min_max_jump", 0.4 * np.cos(np.pi / 128), 1e-9, CLOSED + ": 0.4 cos(pi/128)"),
            ],
            run_square_map_loop,
        ),
        CorpusEntry(
            "example-5-2",
            "phi = max(-1, |p| x), F = R, g = 0: mu = -1 off the origin and mu(0) = 0",
            JUMP_MARGINAL,
            [
                Expectation("max_abs_mu_plus_one_off_origin", 0.0, 1e-12, WORKED + ": mu(p) = -1 for p != 0"),
                Expectation("mu_at_origin", 0.0, 1e-12, WORKED + ": mu(0) = 0"),
                Expectation("usc_verdict", "certified", 0.0, WORKED + ": mu is usc at 0"),
                Expectation("lsc_verdict", "refuted", 0.0, WORKED + ": mu is not lsc at 0"),
            ],
            run_jump_marginal,
        ),
        CorpusEntry(
            "projection-ge",
            "p in x + N_[0,1]^2(x): the solution is the projection of p onto the box",
            PROJECTION_GE,
            [
                Expectation("max_error_vs_clip", 0.0, 1e-10, CLOSED + ": projection onto a box is clipping"),
                Expectation("bounds_satisfied", 1.0, 0.0, CLOSED + ": error bound of the coincidence theorem"),
                Expectation("max_contraction_ratio", 0.0, 1e-12, CLOSED + ": ell = 0 gives one-step convergence"),
            ],
            run_projection_ge,
        ),
        CorpusEntry(
            "affine-ge",
            "A x = p with A of full row rank: the iteration returns the least-norm solution",
            AFFINE_GE,
            [
                Expectation("sigma0", 1 / 3, 1e-8, ORACLE + ": A^T (A A^T)^-1 p solved by hand"),
                Expectation("sigma1", 2 / 3, 1e-8, ORACLE + ": A^T (A A^T)^-1 p solved by hand"),
                Expectation("sigma2", 2 / 3, 1e-8, ORACLE + ": A^T (A A^T)^-1 p solved by hand"),
                Expectation("bound_satisfied", 1.0, 0.0, CLOSED + ": error bound of the coincidence theorem"),
            ],
            run_affine_ge,
        ),
        CorpusEntry(
            "convex-marginal",
            "minimize |x| subject to x = p: mu(p) = |p| is convex and Lipschitz",
            CONVEX_MARGINAL,
            [
                Expectation("usc_verdict", "certified", 0.0, CLOSED + ": mu(p) = |p|"),
                Expectation("lsc_verdict", "certified", 0.0, CLOSED + ": mu(p) = |p|"),
                Expectation("calm_verdict", "certified", 0.0, CLOSED + ": mu(p) = |p|"),
                Expectation("lipschitz_verdict", "certified", 0.0, CLOSED + ": convex cost and convex pair"),
                Expectation("kappa", 1.0, 0.0, CLOSED + ": calmness modulus of |p| is 1", "ge"),
                Expectation("kappa_formula_gap", 0.0, 1e-12, CLOSED + ": k1 + k1*k2/(alpha - ell)"),
                Expectation("local_lipschitz_estimate", 1.0, 1e-3, CLOSED + ": slope of |p|"),
                Expectation("max_calmness_violation", 0.0, 1e-8, CLOSED + ": |mu(p) - mu(0)| <= kappa |p|", "le"),
            ],
            run_convex_marginal,
        ),
        CorpusEntry(
            "branch-vi",
            "x - p in N_[0,inf)(x): two solutions for p > 0, none for p < 0",
            BRANCH_VI,
            [
                Expectation("feasible_count_p1", 2.0, 0.0, CLOSED + ": S(1) = {0, 1}"),
                Expectation("feasible_count_pm1", 0.0, 0.0, CLOSED + ": S(-1) is empty"),
                Expectation("mu_p1", 0.0, 1e-12, CLOSED + ": min of S(1)"),
                Expectation("mu_pm1", float("inf"), 0.0, CLOSED + ": infimum over the empty set"),
            ],
            run_branch_vi,
        ),
    ]
}


def get_entry(name: str) -> CorpusEntry:
    try:
        return CORPUS[name]
    except KeyError:
        raise KeyError(f"unknown corpus entry {name!r}; known: {', '.join(CORPUS)}") from None
