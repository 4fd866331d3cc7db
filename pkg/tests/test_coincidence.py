import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covara.coincidence import (
    SelectionEntry,
    SelectionTable,
    SolverConfig,
    covering_step,
    detect_selection_discontinuity,
    nearest_pair,
    solve_coincidence,
    solve_family,
)
from covara.errors import (
    LaunchConditionViolated,
    MaxIterExceeded,
    NotContractive,
    NotOnGraph,
    StepFailed,
    TooFewPoints,
)
from covara.setmaps import Affine, Box, ConstantInX, IdentityPlusNormalCone, Singleton, SingleValued, identity

P_MAP2 = SingleValued(lambda x, p: p, 2, 2, 2)


def check_certificates(res, tol=1e-10):
    """The invariants every successful solve must satisfy."""
    r = res.residuals
    q = res.ell / res.alpha
    for a, b in zip(r, r[1:]):
        assert b <= q * a * (1 + 1e-3) + 1e-12  # roundoff floor
    assert np.linalg.norm(res.sigma - res.trace[0][0]) * (res.alpha - res.ell) <= res.initial_distance + 10 * tol
    assert sum(res.step_lengths) <= res.initial_distance / (res.alpha - res.ell) * (1 + 1e-3) + 1e-15
    assert res.residual <= tol


def test_covering_step_examples():
    assert covering_step(Affine([[1.0, 0.0]]), [0, 0], [3], 1) == pytest.approx([3, 0])
    x = covering_step(identity(2), [0, 0], [1, 0], 1)
    assert x == pytest.approx([1, 0]) and np.linalg.norm(x) == 1.0
    F = IdentityPlusNormalCone(Box([0.0], [np.inf]))
    assert covering_step(F, [2], [-1], 1) == pytest.approx([0])


def test_covering_step_rejects_too_large_alpha():
    with pytest.raises(StepFailed):
        covering_step(Affine([[0.5, 0.0]]), [0, 0], [1], 1.0)


def test_identity_solve_gives_equality_in_bound():
    p = np.array([0.3, -0.4])
    res = solve_coincidence(identity(2), P_MAP2, [0, 0], [0, 0], p, SolverConfig(1, 0, trust_radius_r=10))
    assert res.sigma == pytest.approx(p)
    assert res.bound == pytest.approx(0.5)
    assert np.linalg.norm(res.sigma) == pytest.approx(res.bound)
    check_certificates(res)


def test_nominal_parameter_needs_no_iterations():
    res = solve_coincidence(identity(2), P_MAP2, [0, 0], [0, 0], [0, 0], SolverConfig(1, 0))
    assert res.iterations == 0 and res.residual == 0 and res.sigma == pytest.approx([0, 0])


def test_square_map_off_origin(square_map):
    res = solve_coincidence(square_map, P_MAP2, [0.2, 0], [0.02, 0], [0.021, 0], SolverConfig(0.19, 0))
    # closed form: the complex square root of 2p on the branch through xbar
    assert res.sigma == pytest.approx([np.sqrt(0.042), 0], abs=1e-10)
    assert res.bound == pytest.approx(0.001 / 0.19)
    check_certificates(res)


def test_error_ordering():
    cfg = SolverConfig(1, 0, trust_radius_r=1)
    with pytest.raises(NotOnGraph):
        solve_coincidence(identity(2), P_MAP2, [0, 0], [1, 0], [0, 0], cfg)
    with pytest.raises(NotOnGraph):
        solve_coincidence(identity(2), P_MAP2, [0, 0], [0, 0], [0, 0], cfg, pbar=[1, 1])
    with pytest.raises(NotContractive):
        solve_coincidence(identity(2), P_MAP2, [0, 0], [0, 0], [0.1, 0], SolverConfig(1, 1))
    with pytest.raises(LaunchConditionViolated):
        solve_coincidence(identity(2), P_MAP2, [0, 0], [0, 0], [5, 0], cfg)


def test_max_iterations():
    g = SingleValued(lambda x, p: p + 0.5 * np.sin(x), 1, 1, 1)
    with pytest.raises(MaxIterExceeded):
        solve_coincidence(identity(1), g, [0], [0], [0.1], SolverConfig(1, 0.6, max_iter=2, trust_radius_r=1))


def test_nearest_pair_disjoint_boxes():
    a, b = nearest_pair(Box([0.0, 0.0], [1.0, 1.0]), Box([2.0, 0.5], [3.0, 3.0]))
    assert a == pytest.approx([1.0, 0.5]) and b == pytest.approx([2.0, 0.5])


def affine_instance(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    n = int(rng.integers(m, 5))
    U, _ = np.linalg.qr(rng.normal(size=(m, m)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    s = rng.uniform(0.2, 2.0, size=m)
    A = U @ np.diag(s) @ V[:m]
    return A, rng.normal(size=n), rng.normal(size=m), s.min()


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_affine_constant_g_matches_least_norm(seed, scale):
    A, xbar, c, smin = affine_instance(seed)
    F = Affine(A)
    G = ConstantInX(lambda p: Singleton(p), A.shape[1], A.shape[0], A.shape[0])
    cfg = SolverConfig(0.9 * smin, 0.0, trust_radius_r=1e6)
    res = solve_coincidence(F, G, xbar, F.point(xbar), c, cfg)
    oracle = xbar + np.linalg.pinv(A) @ (c - A @ xbar)
    assert res.sigma == pytest.approx(oracle, abs=1e-8)
    check_certificates(res)
    # scaling F and G together leaves sigma unchanged
    sF = Affine(scale * A)
    sG = ConstantInX(lambda p: Singleton(scale * p), A.shape[1], A.shape[0], A.shape[0])
    cfg2 = SolverConfig(0.9 * scale * smin, 0.0, trust_radius_r=1e6)
    res2 = solve_coincidence(sF, sG, xbar, sF.point(xbar), c, cfg2)
    assert res2.sigma == pytest.approx(res.sigma, abs=1e-8)


@given(st.integers(0, 10_000))
def test_nonlinear_contraction(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(2, 2))
    ell0 = rng.uniform(0.05, 0.4)
    g = SingleValued(lambda x, p: p + ell0 * np.sin(B @ x) / np.linalg.norm(B, 2), 2, 2, 2)
    p = rng.uniform(-0.3, 0.3, size=2)
    res = solve_coincidence(identity(2), g, [0, 0], [0, 0], p, SolverConfig(1.0, ell0, trust_radius_r=10))
    check_certificates(res)
    assert res.sigma == pytest.approx(g.point(res.sigma, p), abs=1e-9)


def test_solve_family_records_failures():
    tab = solve_family(identity(2), P_MAP2, [0, 0], [0, 0], [0, 0], [[-0.1, 0], [0, 0], [0.1, 0], [5, 0]],
                       SolverConfig(1, 0, trust_radius_r=1))
    sig = tab.sigmas()
    assert sig[0] == pytest.approx([-0.1, 0]) and sig[2] == pytest.approx([0.1, 0])
    assert sig[3] is None and tab.entries[3].error.startswith("LaunchConditionViolated")
    header, rows = tab.rows()
    assert header[:4] == ["p0", "p1", "sigma0", "sigma1"] and len(rows) == 4


def loop(radius, count=64):
    th = 2 * np.pi * np.arange(count) / count
    return [radius * np.array([np.cos(a), np.sin(a)]) for a in th]


def test_discontinuity_of_continuous_selection():
    pts = loop(0.5)
    tab = SelectionTable([SelectionEntry(p, None) for p in pts])
    branches = [[p] for p in pts]
    assert detect_selection_discontinuity(tab, branches=branches) == pytest.approx(2 * 0.5 * np.sin(np.pi / 64))
    const = [[np.ones(2)] for _ in pts]
    assert detect_selection_discontinuity(tab, branches=const) == 0.0


def test_discontinuity_of_square_root_branches():
    pts = loop(0.02)
    tab = SelectionTable([SelectionEntry(p, None) for p in pts])

    def roots(t):
        w = np.sqrt(2 * complex(*t))
        return [np.array([w.real, w.imag]), -np.array([w.real, w.imag])]

    jump = detect_selection_discontinuity(tab, branches=[roots(p) for p in pts])
    # one near-antipodal jump between neighbouring preimages is forced by monodromy
    assert jump == pytest.approx(0.4 * np.cos(np.pi / 128), abs=1e-12)
    assert jump >= 0.2


def test_discontinuity_from_solved_table():
    tab = solve_family(identity(2), P_MAP2, [0, 0], [0, 0], [0, 0], loop(0.1, 16), SolverConfig(1, 0, trust_radius_r=1))
    assert detect_selection_discontinuity(tab) == pytest.approx(2 * 0.1 * np.sin(np.pi / 16))


def test_discontinuity_needs_three_points():
    tab = SelectionTable([SelectionEntry(np.zeros(2), None)] * 2)
    with pytest.raises(TooFewPoints):
        detect_selection_discontinuity(tab, branches=[[np.zeros(2)]] * 2)


def test_default_moduli_are_estimated(square_map):
    res = solve_coincidence(square_map, P_MAP2, [0.2, 0], [0.02, 0], [0.021, 0])
    assert res.alpha == pytest.approx(0.9 * 0.2, rel=1e-3)
    assert res.ell == 0.0 and res.trust_radius_r > 0
    assert res.sigma == pytest.approx([np.sqrt(0.042), 0], abs=1e-9)


def test_config_validation():
    for bad in ({"tol": 0}, {"max_iter": -1}, {"alpha": 0}, {"ell": -1}, {"trust_radius_r": 0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
