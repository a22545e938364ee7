"""Independent reference computations used to pin expected test values.

These deliberately avoid the package's 4D quadrature rules: pair integrals of
1/|x-y| over coplanar triangles use the closed-form in-plane potential of a
uniformly charged triangle (polar sectors) for the inner integral and a 2D
tensor rule only for the smooth outer integral; smooth double integrals over
the reference-triangle product use plain tensor Duffy quadrature.
"""
import numpy as np


def gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def duffy2d(n: int):
    """Tensor Duffy rule on {0 <= t <= s <= 1}: (points (n*n, 2), weights)."""
    p, w = gauss01(n)
    a, b = np.meshgrid(p, p, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    pts = np.stack([a.ravel(), (a * b).ravel()], axis=1)
    return pts, (wa * wb).ravel() * a.ravel()


def tri_potential_inplane(x, tri) -> float:
    """integral over tri of 1/|x - y| dA(y) for a 2D point x in the plane,
    signed by the orientation of tri (positive for counter-clockwise)."""
    total = 0.0
    for k in range(3):
        a = tri[k] - x
        b = tri[(k + 1) % 3] - x
        cross = a[0] * b[1] - a[1] * b[0]
        if cross == 0.0:
            continue
        lab = float(np.hypot(*(b - a)))
        d = cross / lab
        u = b - a
        ta = -float(a @ u) / lab
        tb = float(b @ u) / lab
        ad = abs(d)
        total += np.sign(d) * ad * (np.arcsinh(tb / ad) + np.arcsinh(ta / ad))
    return total


def pair_integral_1_over_r(tri_x, tri_y, n: int = 170) -> float:
    """integral over tri_x of integral over tri_y of 1/|x-y|, coplanar 2D
    triangles; inner integral analytic, outer via the tensor Duffy rule."""
    pts, wq = duffy2d(n)
    v0, v1, v2 = (np.asarray(v, dtype=np.float64) for v in tri_x)
    e1 = v1 - v0
    e2 = v2 - v1
    gram = abs(e1[0] * e2[1] - e1[1] * e2[0])
    xq = v0[None, :] + pts[:, 0:1] * e1[None, :] + pts[:, 1:2] * e2[None, :]
    tri_y = [np.asarray(v, dtype=np.float64) for v in tri_y]
    inner = np.array([tri_potential_inplane(x, tri_y) for x in xq])
    return abs(gram * float(np.sum(wq * inner)))


def smooth_product_integral(func, n: int = 60) -> float:
    """Brute-force integral of func(x1, x2, y1, y2) over That x That."""
    pts, wq = duffy2d(n)
    x1 = pts[:, 0][:, None]
    x2 = pts[:, 1][:, None]
    y1 = pts[:, 0][None, :]
    y2 = pts[:, 1][None, :]
    vals = func(x1, x2, y1, y2)
    return float(wq @ vals @ wq)


# Frozen reference values for the 1/|x-y| pair integrals (computed by
# pair_integral_1_over_r with outer orders 120/170/240 agreeing to ~1e-9):
# identical pair: unit right triangle (0,0),(1,0),(0,1) against itself
IDENTICAL_SELF_UNIT = 1.003065884979
# common edge (1,0)-(0,1): (1,0),(0,1),(0,0) and (1,0),(0,1),(1,1)
EDGE_PAIR_UNIT = 0.483538914315
# common vertex (1,0): (1,0),(0,1),(0,0) and (1,0),(2,0),(1.5,1)
VERTEX_PAIR_UNIT = 0.225006419777


if __name__ == "__main__":
    T = [np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    TX = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, 0.0])]
    TY = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    TZ = [np.array([1.0, 0.0]), np.array([2.0, 0.0]), np.array([1.5, 1.0])]
    for name, a, b in (("identical", T, T), ("edge", TX, TY), ("vertex", TX, TZ)):
        vals = [pair_integral_1_over_r(a, b, n) for n in (120, 170, 240)]
        print(name, vals)
