import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covara.errors import DegenerateSampling, NotOnGraph
from covara.moduli import (
    alpha_hat,
    alpha_hat_semilocal,
    alpha_point,
    calmness_estimate,
    covering_scale_table,
    empirical_covering,
    hausdorff_to_ball,
    image_of_ball,
    lipschitz_like_estimate,
    metric_regularity_check,
)
from covara.sampling import SamplingSchedule
from covara.setmaps import Affine, Box, ConstantSet, IdentityPlusNormalCone, SingleValued, identity

QUICK = SamplingSchedule.ladder(levels=6, samples_per_shell=128)


def test_alpha_hat_examples(square_map):
    A = Affine(np.diag([2.0, 1.0]))
    assert alpha_hat(A, [0.3, -1], A.point([0.3, -1])).value == pytest.approx(1.0, abs=1e-12)
    assert alpha_hat(identity(3), np.zeros(3), np.zeros(3)).value == pytest.approx(1.0)
    x = np.array([0.6, 0.8])
    assert alpha_hat(square_map, x, square_map.point(x)).value == pytest.approx(1.0, abs=1e-3)


def test_alpha_point_examples(square_map):
    assert alpha_point(Affine([[3.0, 0.0], [0.0, 0.5]]), [1, 1]).value == 0.5
    assert alpha_point(square_map, [0, 0]).value == pytest.approx(0.0, abs=1e-12)
    assert alpha_point(square_map, [0.6, 0.8]).value == pytest.approx(1.0)


def test_alpha_hat_semilocal_examples(square_map):
    A = np.array([[1.0, 2.0], [0.5, -1.0]])
    assert alpha_hat_semilocal(Affine(A), [1, 1]).value == pytest.approx(np.linalg.svd(A)[1][-1], abs=1e-12)
    assert alpha_hat_semilocal(square_map, [0.6, 0.8]).value == pytest.approx(1.0, abs=1e-3)
    assert alpha_hat_semilocal(square_map, [0, 0]).value == pytest.approx(0.0, abs=1e-8)


def test_alpha_hat_needs_graph_point():
    with pytest.raises(NotOnGraph):
        alpha_hat(identity(2), [0, 0], [1, 0])


def test_alpha_hat_for_projection_resolvent():
    F = IdentityPlusNormalCone(Box([0.0], [np.inf]))
    # interior points: the map is the identity
    assert alpha_hat(F, [1.0], [1.0]).value == pytest.approx(1.0)
    # inside the vertical ray {0} x (-inf, 0) no unit y* has a coderivative, so the constant is infinite
    assert alpha_hat(F, [0.0], [-1.0]).value == np.inf
    assert alpha_hat(F, [0.0], [0.0]).value == pytest.approx(1.0)


def test_constant_set_alpha_hat():
    F = ConstantSet(Box([0.0], [1.0]), 1)
    assert alpha_hat(F, [0.0], [0.5]).value == np.inf


@given(st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2))
def test_shells_monotone_and_value_dominates(x):
    from covara.expr import half_complex_square

    F = half_complex_square()
    x = np.array(x)
    est = alpha_hat(F, x, F.point(x), QUICK)
    shells = est.per_shell_values
    assert all(b >= a - 1e-15 for a, b in zip(shells, shells[1:]))
    assert est.value >= max(shells) - 1e-12


@pytest.mark.parametrize("x", [[0.6, 0.8], [1.0, -0.5], [-0.3, 0.2], [2.0, 1.0]])
def test_alpha_hat_consistent_with_alpha_point(square_map, x):
    x = np.array(x)
    a = alpha_hat(square_map, x, square_map.point(x)).value
    b = alpha_point(square_map, x).value
    assert abs(a - b) <= 1e-4 * (1 + b)


def test_semilocal_below_pointwise():
    F = IdentityPlusNormalCone(Box([0.0, 0.0], [1.0, 1.0]))
    x = np.array([0.0, 1.0])
    semi = alpha_hat_semilocal(F, x, QUICK).value
    for y in ([0.0, 1.0], [-1.0, 2.0], [-0.5, 1.0]):
        assert semi <= alpha_hat(F, x, y, QUICK).value + 1e-9


@given(st.floats(0.1, 5.0))
def test_scaling_on_affine(c):
    A = np.array([[1.0, 2.0], [0.0, 1.5]])
    x = np.array([0.5, -0.2])
    F, cF = Affine(A), Affine(c * A)
    assert alpha_hat(cF, x, cF.point(x), QUICK).value == pytest.approx(c * alpha_hat(F, x, F.point(x), QUICK).value, abs=1e-9)
    assert alpha_point(cF, x).value == pytest.approx(c * alpha_point(F, x).value, abs=1e-9)
    G = SingleValued(lambda u, p: A @ u + p, 2, 2, 2)
    cG = SingleValued(lambda u, p: c * (A @ u + p), 2, 2, 2)
    l1 = lipschitz_like_estimate(G, [0, 0], x, 0.5, schedule=QUICK).value
    l2 = lipschitz_like_estimate(cG, [0, 0], x, 0.5, schedule=QUICK).value
    assert l2 == pytest.approx(c * l1, rel=1e-9)


def test_empirical_covering_examples(square_map):
    assert empirical_covering(identity(2), [0, 0], [0, 0], 1.0, 0.99, QUICK).holds
    assert not empirical_covering(identity(2), [0, 0], [0, 0], 1.0, 1.5, QUICK).holds
    cert = empirical_covering(square_map, [0, 0], [0, 0], 0.4, 0.2, QUICK)
    assert not cert.holds
    # the image of B(0, rho) is B(0, rho^2/2), so small balls around 0 fail
    assert any(np.linalg.norm(v.x) < 1e-12 for v in cert.violations)


def test_metric_regularity_examples():
    ok = metric_regularity_check(identity(2), [0, 0], [0, 0], 1.0, QUICK)
    assert ok.holds and ok.checked > 0
    D = Affine(np.diag([2.0, 1.0]))
    assert metric_regularity_check(D, [0, 0], [0, 0], 1.0, QUICK).holds
    bad = metric_regularity_check(D, [0, 0], [0, 0], 1.2, QUICK)
    assert not bad.holds
    # ratio 1.2 |A^-1 d| / |d| peaks at 1.2 along the second axis
    ratios = [v.ratio for v in bad.violations]
    assert max(ratios) == pytest.approx(1.2, rel=1e-6)
    assert all(1.0 < r <= 1.2 + 1e-9 for r in ratios)


def test_lipschitz_like_examples():
    two_x = SingleValued(lambda x, p: 2 * x, 1, 1, 1)
    assert lipschitz_like_estimate(two_x, [0], [0], 1.0).value == pytest.approx(2.0, abs=1e-6)
    p = np.pi / 2
    g = SingleValued(lambda x, p: 0.5 * np.sin(p) * x, 1, 1, 1)
    assert lipschitz_like_estimate(g, [p], [0], 1.0).value == pytest.approx(0.5, abs=1e-3)
    const = SingleValued(lambda x, p: p, 1, 1, 1)
    assert lipschitz_like_estimate(const, [0.3], [0], 1.0).value == 0.0
    with pytest.raises(DegenerateSampling):
        lipschitz_like_estimate(const, [0.3], [0], 0.0)


def test_calmness_examples():
    assert calmness_estimate(np.abs, [0.0]).value == pytest.approx(1.0)
    assert calmness_estimate(lambda x: x**2, [0.0]).value == pytest.approx(0.0, abs=1e-9)
    assert calmness_estimate(lambda x: -np.abs(x), [0.0], "above").value == pytest.approx(1.0)
    assert calmness_estimate(lambda x: -np.abs(x), [0.0], "below").value == 0.0
    with pytest.raises(ValueError):
        calmness_estimate(np.abs, [0.0], "sideways")


@pytest.mark.parametrize("r", [0.2, 0.4])
def test_image_of_ball_is_ball(square_map, r):
    pts = image_of_ball(square_map, [0, 0], r)
    assert hausdorff_to_ball(pts, [0, 0], r * r / 2) <= 1e-3


def test_covering_scale_table(square_map):
    rows = covering_scale_table(square_map, [0, 0], [0.25, 0.5, 1.0])
    for row in rows:
        assert row["inradius"] == pytest.approx(row["r"] ** 2 / 2, rel=1e-12)
        assert row["rate"] == pytest.approx(row["r"] / 2, rel=1e-12)


def test_estimates_serialize():
    d = alpha_hat(identity(1), [0], [0], QUICK).to_dict()
    assert d["kind"] == "alpha_hat" and d["seed"] == QUICK.seed and len(d["shells"]) == 6
