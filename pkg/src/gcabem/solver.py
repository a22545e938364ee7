"""Linear solves and the two verification problems on closed surfaces.

Interior Laplace Dirichlet data -> Neumann data: the Galerkin system
V alpha = (M/2 + K) beta with V the single-layer and K the double-layer
operator, M the piecewise-constant mass matrix (diagonal of panel areas),
solved by conjugate gradients.

Exterior Helmholtz Dirichlet problem via the combined ansatz
u = (DLP - i eta SLP) w. The kernels here follow the bare e^{i kappa r}/r
convention; the traced boundary equation is formed in the 1/(4 pi)
normalized convention (operators scaled internally), which gives the
textbook (M/2 + K - i eta V) w = F system. The exterior reproduction check
is invariant under that normalization choice.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import h2, scheduler
from .cluster import build_block_tree, build_cluster_tree
from .gca import GcaParams, build_interpolation_operators
from .kernels import INV_4PI, KernelSpec
from .mesh import SurfaceMesh, chart_arrays
from .quadrature import duffy_panel_rule
from .scheduler import SchedulerParams


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearOperator:
    apply: callable
    dim: int
    symmetric: bool = False
    positive_definite: bool = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)


@dataclass
class SolveStats:
    iterations: int
    residuals: list[float]


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the assemble-and-solve pipeline.

    eta_adm = 2.0: the conservative 1.0 admits no far field below ~10^4
    panels, leaving the representation effectively dense at desk scales.
    """
    leaf_size: int = 16
    eta_adm: float = 2.0
    orders: tuple[int, int] = (3, 5)   # disjoint / singular base point counts
    gca: GcaParams = field(default_factory=GcaParams)
    scheduler: SchedulerParams = field(default_factory=SchedulerParams)
    cg_tol: float = 1e-8


def operator_from_dense(A: np.ndarray, symmetric=False, positive_definite=False):
    return LinearOperator(lambda x: A @ x, A.shape[0], symmetric, positive_definite)


def operator_from_gca(M: h2.GCAMatrix, symmetric=False, positive_definite=False):
    rows, cols = M.shape
    if rows != cols:
        raise ValueError("square operator required")
    return LinearOperator(lambda x: h2.matvec(M, x), rows, symmetric, positive_definite)


def cg_solve(A: LinearOperator, b: np.ndarray, tol: float = 1e-8,
             maxit: int | None = None):
    """Conjugate gradients for a symmetric positive definite operator.

    Returns (x, iterations, residual history); the history holds Euclidean
    residual norms, ending once ||b - Ax|| <= tol * ||b|| or at maxit.
    """
    if not (A.symmetric and A.positive_definite):
        raise SolverError("cg_solve requires a symmetric positive definite operator")
    b = np.asarray(b, dtype=np.complex128)
    maxit = maxit if maxit is not None else 10 * A.dim
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.real(np.vdot(r, r))
    nb = np.sqrt(np.real(np.vdot(b, b)))
    history = [float(np.sqrt(rs))]
    if nb == 0.0:
        return x, 0, history
    for it in range(1, maxit + 1):
        Ap = A(p)
        pAp = np.real(np.vdot(p, Ap))
        if pAp <= 0.0:
            raise SolverError(f"CG breakdown at iteration {it}: p^T A p = {pAp:g}")
        alpha = rs / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = np.real(np.vdot(r, r))
        history.append(float(np.sqrt(rs_new)))
        if np.sqrt(rs_new) <= tol * nb:
            return x, it, history
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, maxit, history


def gmres_solve(A: LinearOperator, b: np.ndarray, tol: float = 1e-8,
                maxit: int | None = None):
    """Unrestarted GMRES with modified Gram-Schmidt and Givens rotations."""
    b = np.asarray(b, dtype=np.complex128)
    n = A.dim
    maxit = min(maxit if maxit is not None else 500, n)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b), 0, [0.0]
    Q = np.zeros((maxit + 1, n), dtype=np.complex128)
    H = np.zeros((maxit + 1, maxit), dtype=np.complex128)
    cs = np.zeros(maxit, dtype=np.complex128)
    sn = np.zeros(maxit, dtype=np.complex128)
    g = np.zeros(maxit + 1, dtype=np.complex128)
    Q[0] = b / nb
    g[0] = nb
    history = [float(nb)]
    k_final = 0
    for k in range(maxit):
        w = A(Q[k])
        for i in range(k + 1):
            H[i, k] = np.vdot(Q[i], w)
            w = w - H[i, k] * Q[i]
        H[k + 1, k] = np.linalg.norm(w)
        if H[k + 1, k] != 0.0:
            Q[k + 1] = w / H[k + 1, k]
        for i in range(k):
            t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -np.conj(sn[i]) * H[i, k] + np.conj(cs[i]) * H[i + 1, k]
            H[i, k] = t
        denom = np.sqrt(abs(H[k, k]) ** 2 + abs(H[k + 1, k]) ** 2)
        if denom == 0.0:
            cs[k], sn[k] = 1.0, 0.0
        else:
            cs[k] = np.conj(H[k, k]) / denom
            sn[k] = np.conj(H[k + 1, k]) / denom
        H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
        H[k + 1, k] = 0.0
        g[k + 1] = -np.conj(sn[k]) * g[k]
        g[k] = cs[k] * g[k]
        res = abs(g[k + 1])
        history.append(float(res))
        k_final = k + 1
        if res <= tol * nb:
            break
    else:
        if history[-1] > tol * nb:
            raise SolverError(
                f"GMRES stagnated: residual {history[-1]:.3e} after {maxit} iterations")
    y = np.linalg.solve(H[:k_final, :k_final], g[:k_final])
    x = Q[:k_final].T @ y
    return x, k_final, history


def gmres_or_cg_dispatch(A: LinearOperator, b: np.ndarray, tol: float = 1e-8,
                         maxit: int | None = None):
    """CG for symmetric positive definite operators, GMRES otherwise."""
    if A.symmetric and A.positive_definite:
        return cg_solve(A, b, tol, maxit)
    return gmres_solve(A, b, tol, maxit)


# ---------------------------------------------------------------------------
# boundary data in the piecewise-constant basis

def panel_integrals(mesh: SurfaceMesh, f, order: int = 3) -> np.ndarray:
    """Integral of f over every panel, 2D Duffy rule of the given order."""
    pts, wq = duffy_panel_rule(order)
    v0, e1, e2, gram = chart_arrays(mesh, np.arange(mesh.num_triangles))
    X = v0[:, None, :] + pts[None, :, 0, None] * e1[:, None, :] \
        + pts[None, :, 1, None] * e2[:, None, :]
    vals = np.asarray(f(X.reshape(-1, 3))).reshape(X.shape[:2])
    return (vals @ wq) * gram


def panel_averages(mesh: SurfaceMesh, f, order: int = 3) -> np.ndarray:
    return panel_integrals(mesh, f, order) / mesh.areas


def l2_relative_error(mesh: SurfaceMesh, approx: np.ndarray, exact: np.ndarray) -> float:
    areas = mesh.areas
    num = np.sqrt(np.sum(areas * np.abs(approx - exact) ** 2))
    den = np.sqrt(np.sum(areas * np.abs(exact) ** 2))
    return float(num / den) if den > 0 else float(num)


# ---------------------------------------------------------------------------
# operator assembly through the pipeline

@dataclass
class AssembledOperator:
    matrix: h2.GCAMatrix
    setup_ops_seconds: float
    assemble_seconds: float
    stats: scheduler.AssemblyStats


def assemble_operator(mesh: SurfaceMesh, spec: KernelSpec, config: PipelineConfig,
                      trees=None, ops=None) -> AssembledOperator:
    """Cluster/block trees, interpolation operators, scheduled assembly."""
    if trees is None:
        tree = build_cluster_tree(mesh, config.leaf_size)
        block_tree = build_block_tree(tree, tree, config.eta_adm)
    else:
        block_tree = trees
    t0 = time.monotonic()
    if ops is None:
        row_ops, col_ops = build_interpolation_operators(
            mesh, block_tree, KernelSpec(spec.equation, "single", spec.kappa),
            config.gca)
    else:
        row_ops, col_ops = ops
    t1 = time.monotonic()
    stats = scheduler.AssemblyStats()
    matrix = scheduler.run_assembly(mesh, block_tree, spec, row_ops, col_ops,
                                    config.scheduler, config.orders, stats)
    t2 = time.monotonic()
    return AssembledOperator(matrix, t1 - t0, t2 - t1, stats)


# ---------------------------------------------------------------------------
# the paper's verification problems

def harmonic_test_functions():
    """The three harmonic verification functions and their gradients."""
    src2 = np.array([1.2, 1.2, 1.2])
    src3 = np.array([1.0, 0.25, 1.0])

    def f1(x):
        return x[:, 0] ** 2 - x[:, 2] ** 2

    def grad_f1(x):
        g = np.zeros_like(x)
        g[:, 0] = 2.0 * x[:, 0]
        g[:, 2] = -2.0 * x[:, 2]
        return g

    def make_point_source(z):
        def f(x):
            return INV_4PI / np.linalg.norm(x - z, axis=1)

        def grad(x):
            d = x - z
            r = np.linalg.norm(d, axis=1)
            return -INV_4PI * d / (r ** 3)[:, None]
        return f, grad

    f2, grad_f2 = make_point_source(src2)
    f3, grad_f3 = make_point_source(src3)
    return {"f1": (f1, grad_f1), "f2": (f2, grad_f2), "f3": (f3, grad_f3)}


def laplace_dirichlet_neumann(mesh: SurfaceMesh, f, grad_f,
                              config: PipelineConfig | None = None,
                              operators: tuple | None = None):
    """Solve V alpha = (M/2 + K) beta for the Neumann coefficients alpha.

    beta holds panel averages of the Dirichlet data f; the returned info
    carries the L2 relative error of alpha against panel averages of the
    analytic normal derivative grad_f . n.
    """
    config = config or PipelineConfig()
    slp = KernelSpec("laplace", "single")
    dlp = KernelSpec("laplace", "double")
    if operators is None:
        V_op = assemble_operator(mesh, slp, config)
        K_op = assemble_operator(mesh, dlp, config,
                                 trees=V_op.matrix.block_tree,
                                 ops=(V_op.matrix.row_ops, V_op.matrix.col_ops))
        V, K = V_op.matrix, K_op.matrix
        setup = (V_op.setup_ops_seconds,
                 V_op.assemble_seconds + K_op.assemble_seconds)
    else:
        V, K = operators
        setup = (0.0, 0.0)

    beta = panel_averages(mesh, f)
    rhs = 0.5 * (mesh.areas * beta) + h2.matvec(K, beta)
    A = operator_from_gca(V, symmetric=True, positive_definite=True)
    t0 = time.monotonic()
    alpha, iters, history = cg_solve(A, rhs, tol=config.cg_tol)
    solve_seconds = time.monotonic() - t0

    # panel averages of the analytic Neumann data grad_f . n (panel normal)
    pts, wq = duffy_panel_rule(config.orders[0])
    v0, e1, e2, gram = chart_arrays(mesh, np.arange(mesh.num_triangles))
    X = v0[:, None, :] + pts[None, :, 0, None] * e1[:, None, :] \
        + pts[None, :, 1, None] * e2[:, None, :]
    grads = np.asarray(grad_f(X.reshape(-1, 3))).reshape(*X.shape)
    gn = np.sum(grads * mesh.normals[:, None, :], axis=2)
    gamma = (gn @ wq) * gram / mesh.areas

    alpha = np.real_if_close(alpha)
    err = l2_relative_error(mesh, np.real(alpha), gamma)
    info = {"l2_error": err, "iterations": iters, "residuals": history,
            "setup_ops_seconds": setup[0], "assemble_seconds": setup[1],
            "solve_seconds": solve_seconds, "dofs": mesh.num_triangles}
    return beta, np.real(alpha), info


def exterior_check_points(radius: float = 2.0) -> np.ndarray:
    """26 fixed points on a sphere: cube face/edge/corner directions."""
    dirs = []
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            for k in (-1, 0, 1):
                if (i, j, k) != (0, 0, 0):
                    d = np.array([i, j, k], dtype=np.float64)
                    dirs.append(d / np.linalg.norm(d))
    return radius * np.array(dirs)


def helmholtz_bw_solve(mesh: SurfaceMesh, kappa: float, eta: float, f,
                       config: PipelineConfig | None = None,
                       check_points: np.ndarray | None = None):
    """Exterior Dirichlet problem via u = (DLP - i eta SLP) w.

    Solves (M/2 + K/(4 pi) - i eta V/(4 pi)) w = F with F the Galerkin moments
    of the boundary data, then reproduces u at exterior check points and
    returns (w, info) with the relative reproduction error against f.
    """
    if eta <= 0.0:
        raise SolverError("eta must be > 0 for unique solvability")
    if kappa < 0.0:
        raise SolverError("kappa must be >= 0")
    config = config or PipelineConfig()
    slp = KernelSpec("helmholtz", "single", kappa)
    dlp = KernelSpec("helmholtz", "double", kappa)
    V_op = assemble_operator(mesh, slp, config)
    K_op = assemble_operator(mesh, dlp, config,
                             trees=V_op.matrix.block_tree,
                             ops=(V_op.matrix.row_ops, V_op.matrix.col_ops))
    V, K = V_op.matrix, K_op.matrix

    F = panel_integrals(mesh, f).astype(np.complex128)
    areas = mesh.areas

    def apply(w):
        return (0.5 * (areas * w) + INV_4PI * h2.matvec(K, w)
                - (1j * eta * INV_4PI) * h2.matvec(V, w))

    A = LinearOperator(apply, mesh.num_triangles)
    t0 = time.monotonic()
    w, iters, history = gmres_or_cg_dispatch(A, F, tol=config.cg_tol)
    solve_seconds = time.monotonic() - t0

    pts = exterior_check_points() if check_points is None else check_points
    u = potential_eval(mesh, dlp, w, pts, order=config.orders[0]) * INV_4PI \
        - 1j * eta * INV_4PI * potential_eval(mesh, slp, w, pts, order=config.orders[0])
    f_exact = np.asarray(f(pts), dtype=np.complex128)
    rel = np.abs(u - f_exact) / np.abs(f_exact)
    info = {"exterior_max_rel_error": float(np.max(rel)),
            "exterior_rms_rel_error": float(np.sqrt(np.mean(rel ** 2))),
            "iterations": iters, "residuals": history,
            "setup_ops_seconds": V_op.setup_ops_seconds,
            "assemble_seconds": V_op.assemble_seconds + K_op.assemble_seconds,
            "solve_seconds": solve_seconds, "dofs": mesh.num_triangles}
    return w, info


def potential_eval(mesh: SurfaceMesh, spec: KernelSpec, density: np.ndarray,
                   points: np.ndarray, order: int = 3) -> np.ndarray:
    """Layer potential sum_j density_j * integral over panel j of the kernel,
    evaluated at points strictly off the surface."""
    density = np.asarray(density)
    if density.shape != (mesh.num_triangles,):
        raise ValueError("density must hold one coefficient per panel")
    panel_pot = scheduler.potential_batch(mesh, spec, points, order)
    return panel_pot @ density.astype(panel_pot.dtype, copy=False)
