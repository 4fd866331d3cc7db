"""Acceptance criteria 1-9; each test prints one PASS/FAIL line in the terminal summary."""
import subprocess
import sys
import time

import numpy as np
import pytest

from covara.coincidence import SelectionEntry, SelectionTable, SolverConfig, detect_selection_discontinuity, solve_coincidence
from covara.corpus import CONVEX_MARGINAL, SQUARE_MAP, SQUARE_MAP_LOOP, JUMP_MARGINAL, PROJECTION_GE
from covara.document import parse_document
from covara.gensolve import solve_generalized_equation, solve_implicit
from covara.marginal import (
    CERTIFIED,
    REFUTED,
    certify_continuity_calmness,
    certify_lipschitz,
    certify_lsc,
    certify_usc,
    check_convex_pair,
    evaluate_mu,
)
from covara.moduli import (
    alpha_hat,
    alpha_point,
    calmness_estimate,
    empirical_covering,
    hausdorff_to_ball,
    image_of_ball,
    lipschitz_like_estimate,
    metric_regularity_check,
)
from covara.sampling import SamplingSchedule
from covara.setmaps import Affine, Box, ConstantSet, SingleValued, Smooth

def random_affine(rng, max_dim=6, smin=0.1):
    """A (m x n), m <= n <= max_dim, singular values in [smin, 3] with smin attained."""
    m = int(rng.integers(1, max_dim + 1))
    n = int(rng.integers(m, max_dim + 1))
    U, _ = np.linalg.qr(rng.normal(size=(m, m)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    s = np.sort(rng.uniform(smin, 3.0, size=m))
    s[0] = max(s[0], smin)
    return U @ np.diag(s) @ V[:m], float(s[0])


def test_criterion_1_jump_marginal(criterion):
    criterion(1, "worked example: mu = -1 off 0, mu(0) = 0, usc certified, lsc refuted with witness, < 5 s")
    start = time.perf_counter()
    doc = parse_document(JUMP_MARGINAL)
    inst, grid = doc.instance("example-5-2"), doc.sweep_points()
    for p in grid:
        expected = 0.0 if p[0] == 0 else -1.0
        assert abs(evaluate_mu(inst, p) - expected) <= 1e-12
    assert certify_usc(inst, p_grid=grid).verdicts["usc"] == CERTIFIED
    lsc = certify_lsc(inst, p_grid=grid)
    assert lsc.verdicts["lsc"] == REFUTED and lsc.witnesses["lsc"]
    assert time.perf_counter() - start < 5.0


def test_criterion_2_square_map(criterion):
    criterion(2, "square map: alpha_point(0) = 0, alpha_hat(0.6, 0.8) = 1, image of B(0, r) is B(0, r^2/2), loop jump >= 0.2, < 10 s")
    start = time.perf_counter()
    F = parse_document(SQUARE_MAP).F()
    assert abs(alpha_point(F, [0.0, 0.0]).value) <= 1e-8
    x = np.array([0.6, 0.8])
    assert abs(alpha_hat(F, x, F.point(x)).value - np.linalg.norm(x)) <= 1e-3
    for r in (0.2, 0.4):
        pts = image_of_ball(F, [0.0, 0.0], r)
        assert hausdorff_to_ball(pts, [0.0, 0.0], r * r / 2) <= 1e-3
    loop = parse_document(SQUARE_MAP_LOOP).sweep_points()
    branches = []
    for t in loop:
        w = np.sqrt(2 * complex(t[0], t[1]))
        root = np.array([w.real, w.imag])
        assert F.point(root) == pytest.approx(t, abs=1e-14)
        branches.append([root, -root])
    table = SelectionTable([SelectionEntry(p, None) for p in loop])
    assert detect_selection_discontinuity(table, branches=branches) >= 0.2
    assert time.perf_counter() - start < 10.0


def test_criterion_3_error_bound_and_least_norm(criterion):
    criterion(3, "100 affine instances: |sigma - xbar| (alpha - ell) <= dist + 1e-7 and sigma = pinv(A) p within 1e-8, < 10 s")
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    for _ in range(100):
        A, smin = random_affine(rng)
        m, n = A.shape
        g = SingleValued(lambda x, p: p, n, m, m)
        p = rng.uniform(-1, 1, size=m)
        res = solve_generalized_equation(Affine(A), g, np.zeros(n), p, SolverConfig(smin, 0.0, trust_radius_r=1e3))
        assert np.linalg.norm(res.sigma) * (res.alpha - res.ell) <= np.linalg.norm(p) + 1e-7
        assert np.max(np.abs(res.sigma - np.linalg.pinv(A) @ p)) <= 1e-8
    assert time.perf_counter() - start < 10.0


def contraction_holds(res) -> bool:
    rs = [r for _, r in res.trace]
    q = res.ell / res.alpha
    return all(b <= q * a * 1.001 for a, b in zip(rs, rs[1:]))


def test_criterion_4_geometric_contraction(criterion):
    criterion(4, "residual_{k+1} <= (ell/alpha) residual_k * 1.001 on projection-ge and 50 smooth instances")
    doc = parse_document(PROJECTION_GE)
    for p in doc.sweep_points():
        res = solve_generalized_equation(doc.F(), doc.g(), doc.xbar(), p, doc.solver_config(), pbar=doc.pbar())
        assert contraction_holds(res)

    rng = np.random.default_rng(4)
    quick = SamplingSchedule.ladder(levels=4, samples_per_shell=64)
    moved = 0
    for _ in range(50):
        n = int(rng.integers(1, 4))
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        A = Q @ np.diag(rng.uniform(1.0, 2.0, size=n))
        C = rng.normal(size=(n, n))
        eps = 0.3 / np.linalg.norm(C, 2)
        # sigma_min of A + eps diag(cos(Cx)) C stays >= sigma_min(A) - eps |C| everywhere
        alpha = np.linalg.svd(A, compute_uv=False)[-1] - eps * np.linalg.norm(C, 2)
        F = Smooth(lambda x, A=A, C=C, e=eps: A @ x + e * np.sin(C @ x), n, n,
                   jac=lambda x, A=A, C=C, e=eps: A + e * np.cos(C @ x)[:, None] * C)
        ell0 = rng.uniform(0.1, 0.5) * alpha
        B = rng.normal(size=(n, n))
        g = SingleValued(lambda x, p, B=B, l=ell0: p + l * np.sin(B @ x) / np.linalg.norm(B, 2), n, n, n)
        assert alpha_hat(F, np.zeros(n), np.zeros(n), quick).value >= 2 * ell0
        p = rng.uniform(-0.5, 0.5, size=n)
        res = solve_coincidence(F, g, np.zeros(n), np.zeros(n), p, SolverConfig(alpha, ell0, trust_radius_r=100.0))
        moved += res.iterations > 1
        assert contraction_holds(res)
    assert moved > 25  # most traces have several contraction steps


def test_criterion_5_covering_regularity_duality(criterion):
    criterion(5, "empirical covering and metric regularity agree on 30 affine instances at 0.5, 0.99, 1.1 sigma_min")
    rng = np.random.default_rng(5)
    sch = SamplingSchedule.ladder(levels=4, samples_per_shell=128)
    r = 1.0
    for _ in range(30):
        A, smin = random_affine(rng, max_dim=4)
        F = Affine(A)
        x0, y0 = np.zeros(A.shape[1]), np.zeros(A.shape[0])
        for factor in (0.5, 0.99, 1.1):
            cov = empirical_covering(F, x0, y0, r, factor * smin, sch).holds
            reg = metric_regularity_check(F, x0, y0, factor * smin, sch, r=r).holds
            assert cov == reg == (factor < 1)


def test_criterion_6_implicit_bound(criterion):
    criterion(6, "2x + sin p: sigma = -sin(p)/2 within 1e-10 and the bound is attained within 1e-9 on 50 parameters")
    f = SingleValued(lambda x, p: 2 * x + np.sin(p), 1, 1, 1)
    cfg = SolverConfig(2.0, 0.0, trust_radius_r=10.0)
    for p in np.linspace(-1.5, 1.5, 50):
        res = solve_implicit(f, [0.0], [0.0], [p], cfg)
        assert abs(res.sigma[0] + np.sin(p) / 2) <= 1e-10
        assert abs(res.sigma[0]) <= res.bound + 1e-12
        assert abs(res.bound - abs(np.sin(p)) / (cfg.alpha - cfg.ell)) <= 1e-9
        assert abs(res.bound - abs(res.sigma[0])) <= 1e-9


def test_criterion_7_calmness_formula(criterion):
    criterion(7, "mu = |p|: kappa >= 1 equals k1 + k1 k2/(alpha - ell) from separate estimates, grid calm, Lipschitz slope 1")
    inst = parse_document(CONVEX_MARGINAL).instance("convex-marginal")
    sch = SamplingSchedule()
    rep = certify_continuity_calmness(inst, sch)
    m = rep.moduli
    # the same moduli recomputed directly from the estimators
    k1 = calmness_estimate(lambda z: inst.cost(z[:1], z[1:]), np.r_[inst.xbar, inst.pbar], "two_sided", sch).value
    k2 = calmness_estimate(lambda p: inst.g.point(inst.xbar, p), inst.pbar, "two_sided", sch).value
    alpha = 0.9 * alpha_hat(inst.F, inst.xbar, inst.g.point(inst.xbar, inst.pbar), sch).value
    ell = 1.1 * lipschitz_like_estimate(inst.g, inst.pbar, inst.xbar, sch.eta_sequence[0], schedule=sch).value
    assert (m["kappa1"], m["kappa2"], m["alpha"], m["ell"]) == pytest.approx((k1, k2, alpha, ell), abs=1e-12)
    kappa = k1 + k1 * k2 / (alpha - ell)
    assert m["kappa"] == pytest.approx(kappa, abs=1e-12) and kappa >= 1.0
    for p, mu, _ in rep.grid:
        assert abs(mu - abs(p[0])) <= 1e-12
        assert abs(mu - 0.0) <= kappa * abs(p[0]) + 1e-8
    assert rep.verdicts["calm"] == CERTIFIED
    lip = certify_lipschitz(inst, sch, base=rep)
    assert lip.verdicts["lipschitz"] == CERTIFIED
    assert abs(lip.moduli["local_lipschitz_estimate"] - 1.0) <= 1e-3


def test_criterion_8_convex_pair(criterion):
    criterion(8, "convex pair holds for the affine pair and the constant cone; square map gives the x1=0, x2=1, lambda=1/2 witness")
    A = np.array([[1.0, -2.0], [0.5, 1.0]])
    assert check_convex_pair(SingleValued(lambda x, p: A @ x, 2, 1, 2), Affine(A)).holds_on_samples
    cone = check_convex_pair(SingleValued(lambda x, p: p * p, 2, 2, 2), ConstantSet(Box([0.0, 0.0], [np.inf, np.inf]), 2))
    assert cone.holds_on_samples and cone.process_holds
    sq = check_convex_pair(SingleValued(lambda x, p: x**2, 1, 1, 1), Smooth(lambda x: x**2, 1, 1))
    w = sq.witness
    assert not sq.holds_on_samples
    assert (w["x1"], w["x2"], w["lambda"], w["combination"], w["value_at_combination"]) == ([0.0], [1.0], 0.5, [0.5], [0.25])


def test_criterion_9_determinism(criterion, tmp_path):
    criterion(9, "two runs of corpus run --seed 7 give byte-identical reports")
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        proc = subprocess.run(
            [sys.executable, "-m", "covara", "corpus", "run", "--seed", "7", "--out", str(out)],
            capture_output=True,
        )
        assert proc.returncode == 0, proc.stderr.decode()
        outputs.append((proc.stdout, proc.stderr, (out / "corpus.json").read_bytes()))
    assert outputs[0] == outputs[1]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
