"""Galerkin BEM for 3D Laplace/Helmholtz: Sauter-Schwab quadrature, Green
cross approximation compression, and a batched work-list scheduler."""

from .kernels import KernelSpec
from .mesh import SurfaceMesh, build_sphere_mesh, chart, read_mesh, write_mesh
from .quadrature import build_rule, classify_pair, gauss_legendre, integrate_pair

__all__ = [
    "KernelSpec", "SurfaceMesh", "build_sphere_mesh", "chart",
    "read_mesh", "write_mesh", "build_rule", "classify_pair",
    "gauss_legendre", "integrate_pair",
]

__version__ = "0.1.0"
