"""Laplace and Helmholtz layer-potential kernels, scalar and batch entry points.

Conventions: Laplace g(x,y) = 1/(4 pi r); Helmholtz g(x,y) = exp(i kappa r)/r
(no 1/(4 pi) factor); double-layer kernels are dg/dn(y) with the unit normal
at the trial point y.

All evaluation funnels through one componentwise routine so that scalar and
batch calls perform identical floating-point operations; results are
bitwise reproducible across batch shapes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INV_4PI = 1.0 / (4.0 * np.pi)

EQUATIONS = ("laplace", "helmholtz")
LAYERS = ("single", "double")


@dataclass(frozen=True)
class KernelSpec:
    equation: str
    layer: str
    kappa: float = 0.0

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ValueError(f"unknown equation {self.equation!r}")
        if self.layer not in LAYERS:
            raise ValueError(f"unknown layer {self.layer!r}")
        if self.equation == "helmholtz" and self.kappa < 0.0:
            raise ValueError("kappa must be >= 0")

    @property
    def is_complex(self) -> bool:
        return self.equation == "helmholtz"

    @property
    def needs_normal(self) -> bool:
        return self.layer == "double"


def kernel_values(spec: KernelSpec, dx0, dx1, dx2, n0=None, n1=None, n2=None):
    """Kernel at displacement d = x - y given componentwise; elementwise over
    any common array shape. Non-finite values are produced silently where
    r == 0; callers that forbid coincident points must check beforehand."""
    r2 = dx0 * dx0 + dx1 * dx1 + dx2 * dx2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(r2)
        if spec.equation == "laplace":
            if spec.layer == "single":
                return INV_4PI / r
            dn = dx0 * n0 + dx1 * n1 + dx2 * n2
            return INV_4PI * dn / (r2 * r)
        # helmholtz: complex exponential taken on complex dtype so every
        # element goes through the same libm path regardless of batch size
        phase = np.exp(1j * (spec.kappa * r))
        if spec.layer == "single":
            return phase / r
        dn = dx0 * n0 + dx1 * n1 + dx2 * n2
        return phase * (1.0 - 1j * (spec.kappa * r)) * dn / (r2 * r)


def eval(spec: KernelSpec, x, y, n_y=None) -> complex:  # noqa: A001 - spec name
    """Kernel value for a single point pair; raises on coincident points.

    Delegates to eval_batch on length-1 stacks, so scalar and batch
    evaluation share one floating-point path bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.array_equal(x, y):
        raise ValueError("kernel evaluated at coincident points x == y")
    normals = None
    if spec.needs_normal:
        if n_y is None:
            raise ValueError("double-layer kernel requires a normal at y")
        normals = np.asarray(n_y, dtype=np.float64).reshape(1, 3)
    return complex(eval_batch(spec, x.reshape(1, 3), y.reshape(1, 3), normals)[0])


def eval_batch(spec: KernelSpec, xs, ys, normals=None) -> np.ndarray:
    """Elementwise kernel over (..., 3) stacks; bit-identical to scalar eval."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValueError(f"shape mismatch: xs {xs.shape} vs ys {ys.shape}")
    if spec.needs_normal:
        if normals is None:
            raise ValueError("double-layer kernel requires normals")
        normals = np.asarray(normals, dtype=np.float64)
        if normals.shape != xs.shape:
            raise ValueError(f"shape mismatch: normals {normals.shape} vs xs {xs.shape}")
        out = kernel_values(spec,
                            xs[..., 0] - ys[..., 0],
                            xs[..., 1] - ys[..., 1],
                            xs[..., 2] - ys[..., 2],
                            normals[..., 0], normals[..., 1], normals[..., 2])
    else:
        out = kernel_values(spec,
                            xs[..., 0] - ys[..., 0],
                            xs[..., 1] - ys[..., 1],
                            xs[..., 2] - ys[..., 2])
    return np.asarray(out, dtype=np.complex128 if spec.is_complex else np.float64)
