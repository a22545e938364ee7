"""Gauss rules and the four panel-pair quadrature cases on the reference triangle.

A pair of panels is classified as identical, sharing a common edge, sharing a
common vertex, or disjoint. For each case a fully expanded 4D point/weight
list on That x That (That = {0 <= t <= s <= 1}) is built by regularizing
coordinate transformations so that a plain weighted sum evaluates the pair
integral. The disjoint case uses the Duffy transformation on both variables;
for the singular cases the pair's charts must align the shared vertices first
(classify_pair provides the permutations).

Sub-integral decompositions and their locked ordering
-----------------------------------------------------
Tensor variables are (xi, e1, e2, e3) in [0,1]^4; weights include all
Jacobian factors. Points are listed per sub-integral in the order given
below, each expanded over the tensor grid in C order.

disjoint, 1 term (Duffy transformation on both variables, renamed (a,b,c,d)):
    x = (a, a b),   y = (c, c d),                   w = a c
vertex, 2 terms, weight xi^3 e2:
    x = (xi, xi e1),              y = (xi e2, xi e2 e3)
    x = (xi e2, xi e2 e3),        y = (xi, xi e1)
edge, 5 terms, weights xi^3 e1^2 (first) and xi^3 e1^2 e2 (rest):
    x = (xi, xi e1 e3),                  y = (xi(1-e1 e2), xi e1(1-e2))
    x = (xi, xi e1),                     y = (xi(1-e1 e2 e3), xi e1 e2(1-e3))
    x = (xi(1-e1 e2), xi e1(1-e2)),      y = (xi, xi e1 e2 e3)
    x = (xi(1-e1 e2 e3), xi e1 e2(1-e3)), y = (xi, xi e1)
    x = (xi(1-e1 e2 e3), xi e1(1-e2 e3)), y = (xi, xi e1 e2)
identical, 6 terms, weight xi^3 e1^2 e2, pairs of swaps:
    x = (xi, xi(1-e1+e1 e2)),            y = (xi(1-e1 e2 e3), xi(1-e1))
    ... and x <-> y
    x = (xi, xi e1(1-e2+e2 e3)),         y = (xi(1-e1 e2), xi e1(1-e2))
    ... and x <-> y
    x = (xi(1-e1 e2 e3), xi e1(1-e2 e3)), y = (xi, xi e1(1-e2))
    ... and x <-> y

The decompositions are locked by the constant-kernel exactness test (every
rule integrates the constant 1 to exactly 1/4) and by convergence tests
against independently computed singular integrals.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec, eval_batch
from .mesh import AffineChart, MeshError, SurfaceMesh

CASES = ("disjoint", "vertex", "edge", "identical")
SUBINTEGRALS = {"disjoint": 1, "vertex": 2, "edge": 5, "identical": 6}
MAX_GAUSS_POINTS = 32
MAX_RULE_ORDER = 12


@dataclass(frozen=True)
class Rule1D:
    points: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class QuadRule4D:
    case: str
    order: int
    x_points: np.ndarray  # (Q, 2) reference coordinates for the test variable
    y_points: np.ndarray  # (Q, 2) for the trial variable
    weights: np.ndarray   # (Q,) positive, include all Jacobian factors

    @property
    def num_points(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class PairClassification:
    case: str
    perm_x: tuple[int, int, int]
    perm_y: tuple[int, int, int]


def gauss_legendre(n: int) -> Rule1D:
    """n-point Gauss-Legendre rule mapped to [0, 1]."""
    if not 1 <= n <= MAX_GAUSS_POINTS:
        raise ValueError(f"point count {n} outside [1, {MAX_GAUSS_POINTS}]")
    x, w = np.polynomial.legendre.leggauss(n)
    return Rule1D(0.5 * (x + 1.0), 0.5 * w)


def duffy_panel_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """2D Duffy rule on the reference triangle: (points (n*n, 2), weights)."""
    g = gauss_legendre(n)
    a, b = np.meshgrid(g.points, g.points, indexing="ij")
    wa, wb = np.meshgrid(g.weights, g.weights, indexing="ij")
    pts = np.stack([a.ravel(), (a * b).ravel()], axis=1)
    return pts, (wa * wb).ravel() * a.ravel()


def _tensor4(n: int):
    g = gauss_legendre(n)
    a, b, c, d = np.meshgrid(g.points, g.points, g.points, g.points, indexing="ij")
    wa, wb, wc, wd = np.meshgrid(g.weights, g.weights, g.weights, g.weights,
                                 indexing="ij")
    w = (wa * wb * wc * wd).ravel()
    return a.ravel(), b.ravel(), c.ravel(), d.ravel(), w


def _terms_disjoint(a, b, c, d, w):
    return [((a, a * b), (c, c * d), w * (a * c))]


def _terms_vertex(xi, e1, e2, e3, w):
    wj = w * (xi ** 3 * e2)
    return [
        ((xi, xi * e1), (xi * e2, xi * e2 * e3), wj),
        ((xi * e2, xi * e2 * e3), (xi, xi * e1), wj),
    ]


def _terms_edge(xi, e1, e2, e3, w):
    w1 = w * (xi ** 3 * e1 ** 2)
    w2 = w * (xi ** 3 * e1 ** 2 * e2)
    return [
        ((xi, xi * e1 * e3), (xi * (1 - e1 * e2), xi * (e1 * (1 - e2))), w1),
        ((xi, xi * e1), (xi * (1 - e1 * e2 * e3), xi * (e1 * e2 * (1 - e3))), w2),
        ((xi * (1 - e1 * e2), xi * (e1 * (1 - e2))), (xi, xi * (e1 * e2 * e3)), w2),
        ((xi * (1 - e1 * e2 * e3), xi * (e1 * e2 * (1 - e3))), (xi, xi * e1), w2),
        ((xi * (1 - e1 * e2 * e3), xi * (e1 * (1 - e2 * e3))), (xi, xi * (e1 * e2)), w2),
    ]


def _terms_identical(xi, e1, e2, e3, w):
    wj = w * (xi ** 3 * e1 ** 2 * e2)
    base = [
        ((xi, xi * (1 - e1 + e1 * e2)), (xi * (1 - e1 * e2 * e3), xi * (1 - e1))),
        ((xi, xi * (e1 * (1 - e2 + e2 * e3))), (xi * (1 - e1 * e2), xi * (e1 * (1 - e2)))),
        ((xi * (1 - e1 * e2 * e3), xi * (e1 * (1 - e2 * e3))), (xi, xi * (e1 * (1 - e2)))),
    ]
    terms = []
    for x, y in base:
        terms.append((x, y, wj))
        terms.append((y, x, wj))
    return terms


_TERM_BUILDERS = {
    "disjoint": _terms_disjoint,
    "vertex": _terms_vertex,
    "edge": _terms_edge,
    "identical": _terms_identical,
}

_rule_cache: dict[tuple[str, int], QuadRule4D] = {}
_cache_lock = threading.Lock()
_cache_stats = {"builds": 0, "lookups": 0}


def rule_cache_stats() -> dict[str, int]:
    with _cache_lock:
        return dict(_cache_stats)


def clear_rule_cache() -> None:
    with _cache_lock:
        _rule_cache.clear()
        _cache_stats["builds"] = 0
        _cache_stats["lookups"] = 0


def build_rule(case: str, n: int) -> QuadRule4D:
    """Fully expanded 4D rule for one singularity case, memoized per (case, n)."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    if not 1 <= n <= MAX_RULE_ORDER:
        raise ValueError(f"order {n} outside [1, {MAX_RULE_ORDER}]")
    key = (case, n)
    with _cache_lock:
        _cache_stats["lookups"] += 1
        cached = _rule_cache.get(key)
        if cached is not None:
            return cached
        a, b, c, d, w = _tensor4(n)
        xs, ys, ws = [], [], []
        for (x1, x2), (y1, y2), wj in _TERM_BUILDERS[case](a, b, c, d, w):
            xs.append(np.stack([x1, x2], axis=1))
            ys.append(np.stack([y1, y2], axis=1))
            ws.append(wj)
        rule = QuadRule4D(case, n,
                          np.ascontiguousarray(np.concatenate(xs)),
                          np.ascontiguousarray(np.concatenate(ys)),
                          np.ascontiguousarray(np.concatenate(ws)))
        _cache_stats["builds"] += 1
        _rule_cache[key] = rule
        return rule


def classify_pair(mesh: SurfaceMesh, tri_a: int, tri_b: int) -> PairClassification:
    """Singularity case of a panel pair plus vertex permutations that place
    shared vertices first, pairwise aligned (x-slot k and y-slot k hold the
    same geometric vertex). Shared vertices are ordered by global index;
    unshared vertices keep their original relative order."""
    if tri_a == tri_b:
        return PairClassification("identical", (0, 1, 2), (0, 1, 2))
    va = mesh.triangles[tri_a]
    vb = mesh.triangles[tri_b]
    shared = sorted(set(int(v) for v in va) & set(int(v) for v in vb))
    if len(shared) == 3:
        raise MeshError(
            f"triangles {tri_a} and {tri_b} are distinct but share 3 vertices")
    if not shared:
        return PairClassification("disjoint", (0, 1, 2), (0, 1, 2))

    def perm_for(tri_verts) -> tuple[int, int, int]:
        verts = [int(v) for v in tri_verts]
        lead = [verts.index(g) for g in shared]
        rest = [p for p in range(3) if p not in lead]
        return tuple(lead + rest)

    case = "edge" if len(shared) == 2 else "vertex"
    return PairClassification(case, perm_for(va), perm_for(vb))


def integrate_pair(chart_x: AffineChart, chart_y: AffineChart, kernel,
                   rule: QuadRule4D, normal_y=None,
                   basis_x=None, basis_y=None) -> complex:
    """One pairwise panel integral:

        gram_x * gram_y * sum_q w_q phi(x_q) g(Phi_x(x_q), Phi_y(y_q)) psi(y_q)

    `kernel` is a KernelSpec or a callable kernel(X, Y) over (n, 3) point
    stacks. Charts must already be permuted per the pair classification and
    the rule case must match the pair. Piecewise-constant bases are the
    default (basis_x = basis_y = 1); for KernelSpec kernels with default
    bases this delegates to the same fused batch kernel the scheduler
    backends use, so per-pair results are bitwise identical everywhere.
    """
    if isinstance(kernel, KernelSpec):
        if kernel.needs_normal and normal_y is None:
            raise ValueError("double-layer integral requires the trial normal")
        if basis_x is None and basis_y is None:
            from .pairquad import pair_values
            ny = None
            if normal_y is not None:
                ny = np.asarray(normal_y, dtype=np.float64).reshape(1, 3)
            out = pair_values(
                kernel,
                chart_x.origin.reshape(1, 3), chart_x.edge1.reshape(1, 3),
                chart_x.edge2.reshape(1, 3), np.array([chart_x.gramian]),
                chart_y.origin.reshape(1, 3), chart_y.edge1.reshape(1, 3),
                chart_y.edge2.reshape(1, 3), np.array([chart_y.gramian]),
                ny, rule.x_points, rule.y_points, rule.weights)
            return complex(out[0])
    X = chart_x.map_points(rule.x_points)
    Y = chart_y.map_points(rule.y_points)
    if isinstance(kernel, KernelSpec):
        if kernel.needs_normal:
            normals = np.broadcast_to(np.asarray(normal_y, dtype=np.float64), X.shape)
            kern = eval_batch(kernel, X, Y, normals)
        else:
            kern = eval_batch(kernel, X, Y)
    else:
        kern = np.asarray(kernel(X, Y))
    vals = kern * rule.weights
    if basis_x is not None:
        vals = vals * basis_x(rule.x_points)
    if basis_y is not None:
        vals = vals * basis_y(rule.y_points)
    total = np.sum(vals)
    total = total * chart_x.gramian
    total = total * chart_y.gramian
    return complex(total)
