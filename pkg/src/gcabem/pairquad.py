"""Fused panel-pair quadrature kernels (numba).

One compiled routine per (equation, layer) evaluates, for a batch of panel
pairs, the mapped quadrature points, the kernel, and the weighted sum in a
single pass. integrate_pair and both scheduler backends all funnel through
these routines, which makes assembled coefficients bitwise identical across
backends, worker counts, and list sizes by construction: the per-pair
floating-point operation sequence is fixed here and nowhere else.

The accumulation over rule points is plain left-to-right in rule order
(sub-integral-major, tensor indices in C order).
"""
from __future__ import annotations

import numba
import numpy as np

_SIG_REAL = numba.types.void(
    numba.float64[:, ::1], numba.float64[:, ::1], numba.float64[:, ::1],
    numba.float64[::1],
    numba.float64[:, ::1], numba.float64[:, ::1], numba.float64[:, ::1],
    numba.float64[::1], numba.float64[:, ::1], numba.float64,
    numba.float64[:, ::1], numba.float64[:, ::1], numba.float64[::1],
    numba.complex128[::1])


def _pair_loop(kernel_point):
    """Build the fused batch loop around a point-kernel function."""

    @numba.njit(_SIG_REAL, nogil=True, cache=True, error_model="numpy")
    def run(ox, e1x, e2x, gx, oy, e1y, e2y, gy, ny, kappa, xs, ys, w, out):
        npairs = ox.shape[0]
        nq = w.shape[0]
        for i in range(npairs):
            acc = 0.0 + 0.0j
            for q in range(nq):
                s = xs[q, 0]
                t = xs[q, 1]
                x0 = ox[i, 0] + s * e1x[i, 0] + t * e2x[i, 0]
                x1 = ox[i, 1] + s * e1x[i, 1] + t * e2x[i, 1]
                x2 = ox[i, 2] + s * e1x[i, 2] + t * e2x[i, 2]
                s = ys[q, 0]
                t = ys[q, 1]
                y0 = oy[i, 0] + s * e1y[i, 0] + t * e2y[i, 0]
                y1 = oy[i, 1] + s * e1y[i, 1] + t * e2y[i, 1]
                y2 = oy[i, 2] + s * e1y[i, 2] + t * e2y[i, 2]
                acc += w[q] * kernel_point(
                    x0 - y0, x1 - y1, x2 - y2,
                    ny[i, 0], ny[i, 1], ny[i, 2], kappa)
            val = acc * gx[i]
            out[i] = val * gy[i]

    return run


_INV_4PI = 1.0 / (4.0 * np.pi)


@numba.njit(inline="always", cache=True, error_model="numpy")
def _laplace_slp_point(d0, d1, d2, n0, n1, n2, kappa):
    r = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    return complex(_INV_4PI / r, 0.0)


@numba.njit(inline="always", cache=True, error_model="numpy")
def _laplace_dlp_point(d0, d1, d2, n0, n1, n2, kappa):
    r2 = d0 * d0 + d1 * d1 + d2 * d2
    r = np.sqrt(r2)
    dn = d0 * n0 + d1 * n1 + d2 * n2
    return complex(_INV_4PI * dn / (r2 * r), 0.0)


@numba.njit(inline="always", cache=True, error_model="numpy")
def _helmholtz_slp_point(d0, d1, d2, n0, n1, n2, kappa):
    r = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    return np.exp(1j * (kappa * r)) * (1.0 / r)


@numba.njit(inline="always", cache=True, error_model="numpy")
def _helmholtz_dlp_point(d0, d1, d2, n0, n1, n2, kappa):
    r2 = d0 * d0 + d1 * d1 + d2 * d2
    r = np.sqrt(r2)
    dn = d0 * n0 + d1 * n1 + d2 * n2
    return np.exp(1j * (kappa * r)) * (1.0 - 1j * (kappa * r)) * (dn / (r2 * r))


_LOOPS = {
    ("laplace", "single"): _pair_loop(_laplace_slp_point),
    ("laplace", "double"): _pair_loop(_laplace_dlp_point),
    ("helmholtz", "single"): _pair_loop(_helmholtz_slp_point),
    ("helmholtz", "double"): _pair_loop(_helmholtz_dlp_point),
}


def pair_values(spec, ox, e1x, e2x, gx, oy, e1y, e2y, gy, ny, xs, ys, w) -> np.ndarray:
    """Weighted pair integrals for a batch of charts; complex128 (npairs,).

    Coincident points produce non-finite entries silently (the disjoint-rule
    pass over singular pairs relies on that; those slots get overwritten).
    """
    loop = _LOOPS[(spec.equation, spec.layer)]
    npairs = ox.shape[0]
    out = np.empty(npairs, dtype=np.complex128)
    if ny is None:
        ny = np.zeros((npairs, 3))
    loop(np.ascontiguousarray(ox), np.ascontiguousarray(e1x),
         np.ascontiguousarray(e2x), np.ascontiguousarray(gx),
         np.ascontiguousarray(oy), np.ascontiguousarray(e1y),
         np.ascontiguousarray(e2y), np.ascontiguousarray(gy),
         np.ascontiguousarray(ny), float(spec.kappa),
         xs, ys, w, out)
    return out
