import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gcabem.kernels import INV_4PI, KernelSpec
from gcabem.mesh import AffineChart, MeshError, build_sphere_mesh, chart, make_surface_mesh
from gcabem.quadrature import (CASES, SUBINTEGRALS, build_rule, classify_pair,
                               clear_rule_cache, duffy_panel_rule,
                               gauss_legendre, integrate_pair, rule_cache_stats)


def planar_chart(v0, v1, v2):
    v0, v1, v2 = (np.array([p[0], p[1], 0.0]) for p in (v0, v1, v2))
    e1 = v1 - v0
    e2 = v2 - v1
    return AffineChart(v0, e1, e2, float(np.linalg.norm(np.cross(e1, e2))))


UNIT_CHART = planar_chart((0, 0), (1, 0), (0, 1))
# shared edge (1,0)-(0,1), both charts trace it as the image of {(s, 0)}
EDGE_X = planar_chart((1, 0), (0, 1), (0, 0))
EDGE_Y = planar_chart((1, 0), (0, 1), (1, 1))
# shared vertex (1,0) mapped to the origin of both charts
VERT_X = EDGE_X
VERT_Y = planar_chart((1, 0), (2, 0), (1.5, 1))


# ---------------------------------------------------------------------------
# 1D Gauss rules

def test_gauss_one_point():
    r = gauss_legendre(1)
    assert r.points[0] == pytest.approx(0.5)
    assert r.weights[0] == pytest.approx(1.0)


def test_gauss_two_points():
    r = gauss_legendre(2)
    off = 1.0 / (2.0 * np.sqrt(3.0))
    assert np.allclose(np.sort(r.points), [0.5 - off, 0.5 + off])
    assert np.allclose(r.weights, [0.5, 0.5])


def test_gauss_degree_nine():
    r = gauss_legendre(5)
    val = np.sum(r.weights * r.points ** 9)
    assert abs(val - 0.1) <= 1e-14


@settings(deadline=None, max_examples=32)
@given(n=st.integers(1, 32))
def test_gauss_weight_sum_and_exactness(n):
    r = gauss_legendre(n)
    assert abs(np.sum(r.weights) - 1.0) <= 1e-14
    assert np.all(r.points > 0) and np.all(r.points < 1)
    assert np.all(r.weights > 0)
    deg = min(2 * n - 1, 12)
    exact = 1.0 / (deg + 1)
    assert abs(np.sum(r.weights * r.points ** deg) - exact) <= 1e-13


def test_gauss_bounds():
    with pytest.raises(ValueError):
        gauss_legendre(0)
    with pytest.raises(ValueError):
        gauss_legendre(33)


# ---------------------------------------------------------------------------
# 4D rules

@pytest.mark.parametrize("case", CASES)
@pytest.mark.parametrize("n", [2, 3, 5, 6])
def test_constant_kernel_exactness(case, n):
    # the singular cases carry cubic Jacobian weights, so constant-kernel
    # exactness needs n >= 2; the disjoint case is exact from n = 1
    rule = build_rule(case, n)
    assert abs(np.sum(rule.weights) - 0.25) <= 1e-13


def test_constant_kernel_exactness_disjoint_n1():
    assert abs(np.sum(build_rule("disjoint", 1).weights) - 0.25) <= 1e-14


@pytest.mark.parametrize("case", CASES)
def test_point_counts_and_containment(case):
    n = 4
    rule = build_rule(case, n)
    assert rule.num_points == n ** 4 * SUBINTEGRALS[case]
    for pts in (rule.x_points, rule.y_points):
        assert np.all(pts[:, 1] >= -1e-14)
        assert np.all(pts[:, 1] <= pts[:, 0] + 1e-14)
        assert np.all(pts[:, 0] <= 1 + 1e-14)
    assert np.all(rule.weights > 0)


def test_vertex_rule_has_two_subintegrals():
    assert build_rule("vertex", 3).num_points == 2 * 3 ** 4


@pytest.mark.parametrize("case", ["vertex", "edge", "identical"])
def test_singular_rules_avoid_coincident_points(case):
    rule = build_rule(case, 5)
    gap = np.max(np.abs(rule.x_points - rule.y_points), axis=1)
    assert np.min(gap) > 0.0


def test_rule_bounds():
    with pytest.raises(ValueError):
        build_rule("disjoint", 0)
    with pytest.raises(ValueError):
        build_rule("disjoint", 13)
    with pytest.raises(ValueError):
        build_rule("nearby", 3)


def test_rule_cache_memoizes():
    clear_rule_cache()
    a = build_rule("edge", 4)
    b = build_rule("edge", 4)
    assert a is b
    stats = rule_cache_stats()
    assert stats["builds"] == 1
    assert stats["lookups"] == 2


@pytest.mark.parametrize("case", CASES)
def test_smooth_tiling_against_brute_force(case):
    """Each decomposition re-tiles That x That exactly: for a smooth
    integrand every case's rule converges to the same tensor-quadrature
    value."""

    def func(x1, x2, y1, y2):
        return np.exp(x1 - 2.0 * y2) + np.sin(1.0 + x2 * y1 + 0.3 * y1 * y1)

    ref = oracles.smooth_product_integral(func, n=60)
    rule = build_rule(case, 12)
    val = np.sum(rule.weights * func(rule.x_points[:, 0], rule.x_points[:, 1],
                                     rule.y_points[:, 0], rule.y_points[:, 1]))
    assert val == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("case,cx,cy,frozen", [
    ("identical", UNIT_CHART, UNIT_CHART, oracles.IDENTICAL_SELF_UNIT),
    ("edge", EDGE_X, EDGE_Y, oracles.EDGE_PAIR_UNIT),
    ("vertex", VERT_X, VERT_Y, oracles.VERTEX_PAIR_UNIT)])
def test_singular_convergence_to_oracle(case, cx, cy, frozen):
    spec = KernelSpec("laplace", "single")
    target = frozen * INV_4PI
    errs = []
    for n in range(3, 11):
        val = integrate_pair(cx, cy, spec, build_rule(case, n)).real
        errs.append(abs(val - target) / target)
    assert errs[5] <= 1e-4  # n = 8
    # successive differences against the n=12 value decrease monotonically
    ref12 = integrate_pair(cx, cy, spec, build_rule(case, 12)).real
    diffs = [abs(integrate_pair(cx, cy, spec, build_rule(case, n)).real - ref12)
             for n in range(3, 12)]
    assert all(a > b for a, b in zip(diffs, diffs[1:]))


def test_disjoint_convergence_monotone():
    spec = KernelSpec("laplace", "single")
    cx = UNIT_CHART
    cy = planar_chart((2.5, 0.2), (3.5, 0.0), (2.8, 1.1))
    ref12 = integrate_pair(cx, cy, spec, build_rule("disjoint", 12)).real
    diffs = [abs(integrate_pair(cx, cy, spec, build_rule("disjoint", n)).real - ref12)
             for n in range(3, 10)]
    assert all(a >= b for a, b in zip(diffs, diffs[1:]))


# ---------------------------------------------------------------------------
# classification

def test_classify_identical(sphere2):
    cls = classify_pair(sphere2, 7, 7)
    assert cls.case == "identical"
    assert cls.perm_x == cls.perm_y == (0, 1, 2)


def test_classify_edge_alignment():
    verts = np.array([[0, 0, 0.0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]])
    tris = np.array([[0, 1, 2], [1, 2, 3], [0, 4, 1], [1, 4, 3], [2, 4, 0],
                     [3, 4, 2]])
    m = make_surface_mesh(verts, tris, validate=False)
    cls = classify_pair(m, 0, 1)
    assert cls.case == "edge"
    assert cls.perm_x == (1, 2, 0)
    assert cls.perm_y == (0, 1, 2)
    # aligned slots hold the same global vertices, shared ones first
    va = tris[0][list(cls.perm_x)]
    vb = tris[1][list(cls.perm_y)]
    assert list(va[:2]) == list(vb[:2]) == [1, 2]


def test_classify_disjoint_and_vertex():
    verts = np.array([[0, 0, 0.0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [3, 0, 0],
                      [2, 1, 0]])
    tris = np.array([[0, 1, 2], [3, 4, 5], [1, 3, 5]])
    m = make_surface_mesh(verts, tris, validate=False)
    cls = classify_pair(m, 0, 1)
    assert cls.case == "disjoint"
    assert cls.perm_x == cls.perm_y == (0, 1, 2)
    cls = classify_pair(m, 0, 2)
    assert cls.case == "vertex"
    assert tris[0][cls.perm_x[0]] == tris[2][cls.perm_y[0]] == 1


def test_classify_symmetry(sphere2):
    for a, b in ((0, 1), (0, 9), (3, 100)):
        ab = classify_pair(sphere2, a, b)
        ba = classify_pair(sphere2, b, a)
        assert ab.case == ba.case
        assert ab.perm_x == ba.perm_y
        assert ab.perm_y == ba.perm_x


def test_classify_rejects_three_shared_vertices():
    verts = np.array([[0, 0, 0.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    tris = np.array([[0, 1, 2], [0, 2, 1], [0, 1, 3], [1, 2, 3]])
    m = make_surface_mesh(verts, tris, validate=False)
    with pytest.raises(MeshError):
        classify_pair(m, 0, 1)


@settings(deadline=None, max_examples=40)
@given(a=st.integers(0, 127), b=st.integers(0, 127))
def test_classification_case_matches_shared_count(a, b):
    m = build_sphere_mesh(2)
    cls = classify_pair(m, a, b)
    shared = len(set(m.triangles[a]) & set(m.triangles[b]))
    expected = {3: "identical", 2: "edge", 1: "vertex", 0: "disjoint"}[shared]
    if a == b:
        expected = "identical"
    assert cls.case == expected
    if cls.case != "identical":
        got = [int(m.triangles[a][p]) for p in cls.perm_x[:shared]]
        assert got == [int(m.triangles[b][p]) for p in cls.perm_y[:shared]]
        assert got == sorted(got)


# ---------------------------------------------------------------------------
# pair integration

def test_constant_kernel_pair_integral():
    val = integrate_pair(UNIT_CHART, UNIT_CHART,
                         lambda X, Y: np.ones(len(X)),
                         build_rule("disjoint", 3))
    assert val.real == pytest.approx(0.25, abs=1e-13)


def test_far_field_point_mass_limit():
    cx = UNIT_CHART
    cy = planar_chart((100, 0), (101, 0), (100, 1))
    spec = KernelSpec("laplace", "single")
    val = integrate_pair(cx, cy, spec, build_rule("disjoint", 3)).real
    assert val == pytest.approx(0.25 / (4 * np.pi * 100.0), rel=0.01)


def test_disjoint_swap_symmetric_kernel():
    def sym_kernel(X, Y):
        d = X - Y
        return 1.0 / np.sqrt(np.sum(d * d, axis=1))

    cx = UNIT_CHART
    cy = planar_chart((2.5, 0.2), (3.5, 0.0), (2.8, 1.1))
    rule = build_rule("disjoint", 4)
    a = integrate_pair(cx, cy, sym_kernel, rule).real
    b = integrate_pair(cy, cx, sym_kernel, rule).real
    assert abs(a - b) <= 1e-15 * abs(a)


def test_dlp_requires_normal():
    spec = KernelSpec("laplace", "double")
    with pytest.raises(ValueError):
        integrate_pair(UNIT_CHART, UNIT_CHART, spec, build_rule("identical", 3))


def test_basis_functions_enter_the_integrand():
    rule = build_rule("disjoint", 6)
    val = integrate_pair(UNIT_CHART, UNIT_CHART,
                         lambda X, Y: np.ones(len(X)), rule,
                         basis_x=lambda p: p[:, 0],
                         basis_y=lambda p: np.ones(len(p)))
    # integral of s over the reference triangle = 1/3; times area 1/2
    assert val.real == pytest.approx((1 / 3) * 0.5, rel=1e-12)


def test_duffy_panel_rule_integrates_area():
    pts, w = duffy_panel_rule(3)
    assert pts.shape == (9, 2)
    assert np.sum(w) == pytest.approx(0.5, abs=1e-14)
    # integral of s^2 over {0 <= t <= s <= 1} is 1/4
    val = np.sum(w * pts[:, 0] ** 2)
    assert val == pytest.approx(1.0 / 4.0, abs=1e-14)
