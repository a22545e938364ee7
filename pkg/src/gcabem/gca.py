"""Green cross approximation: per-cluster algebraic interpolation operators.

For a cluster t, monopole and dipole sources are placed on a tensor Gauss
grid over the boundary of the cluster box enlarged by (1 + delta) (the box is
cubified to the largest extent so every source keeps distance >= delta/2
times the box L-inf diameter from the cluster). The matrix A_t of panel
integrals against those source fields is compressed by partially pivoted
adaptive cross approximation; the row pivots become the cluster's
interpolation points and

    V = A_t[:, ct] * inv(A_t[tt, ct])

interpolates panel moments of any field that admits a Green representation
over the enlarged box. The column-side operator of a cluster is the
elementwise conjugate of its row-side operator (the ACA pivot sequence is
magnitude-driven, hence identical for the conjugated matrix), so only one
operator per cluster is stored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import BlockTree, ClusterTree
from .kernels import KernelSpec, kernel_values
from .mesh import SurfaceMesh, chart_arrays
from .quadrature import duffy_panel_rule

ROLE_MONOPOLE = 0
ROLE_DIPOLE = 1

DEFAULT_DELTA = 1.0
# 6 points per box-face axis: 4 leaves an epsilon-independent error floor
# visible in level-5 solves (Green quadrature underresolved)
DEFAULT_FACE_POINTS = 6
DEFAULT_EPSILON = 1e-4

_PIVOT_COND_LIMIT = 1e14
_PANEL_CHUNK = 256


class GcaError(RuntimeError):
    """Green cross approximation construction failure."""


@dataclass(frozen=True)
class GreenSourceSet:
    points: np.ndarray   # (P, 3) on the enlarged box boundary
    weights: np.ndarray  # (P,) Gauss weights times face area
    normals: np.ndarray  # (P, 3) outward face normals
    roles: np.ndarray    # (P,) ROLE_MONOPOLE / ROLE_DIPOLE


@dataclass(frozen=True)
class ACAResult:
    row_pivots: np.ndarray
    col_pivots: np.ndarray
    rank: int
    residual_estimate: float


@dataclass(frozen=True)
class InterpolationOperator:
    cluster: int
    pivots_local: np.ndarray    # positions within the cluster, selection order
    pivots_global: np.ndarray   # panel indices of the pivots
    V: np.ndarray               # (|t|, |tt|); rows at pivots_local are identity

    @property
    def rank(self) -> int:
        return self.V.shape[1]


@dataclass(frozen=True)
class GcaParams:
    delta: float = DEFAULT_DELTA
    m: int = DEFAULT_FACE_POINTS
    epsilon: float = DEFAULT_EPSILON
    rule_order: int = 3


def green_sources(box_lo, box_hi, delta: float, m: int,
                  scene_diameter: float = 0.0) -> GreenSourceSet:
    """Tensor Gauss sources on the box enlarged by delta times its largest
    half-extent along every axis (for a cube that is the (1 + delta)-scaled
    cube), so every source keeps distance >= (delta/2) times the L-inf box
    diameter from the cluster while the enlarged boundary stays tight around
    flat clusters.

    Per face: m x m geometric points, each carried twice (monopole then
    dipole role); weights are Gauss weights times the face area. Face order
    is axis 0,1,2 with the negative side first.
    """
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    if m < 1:
        raise ValueError("m must be >= 1")
    box_lo = np.asarray(box_lo, dtype=np.float64)
    box_hi = np.asarray(box_hi, dtype=np.float64)
    center = 0.5 * (box_lo + box_hi)
    hmax = 0.5 * max(float(np.max(box_hi - box_lo)), 1e-8 * scene_diameter)
    if hmax <= 0.0:
        raise ValueError("degenerate box with no scene diameter to fall back on")
    half = 0.5 * (box_hi - box_lo) + delta * hmax

    from .quadrature import gauss_legendre
    g = gauss_legendre(m)
    gu, gv = np.meshgrid(g.weights, g.weights, indexing="ij")
    guv = (gu * gv).ravel()

    pts, wts, nrm, roles = [], [], [], []
    for axis in range(3):
        a1, a2 = (axis + 1) % 3, (axis + 2) % 3
        u = -half[a1] + 2.0 * half[a1] * g.points
        v = -half[a2] + 2.0 * half[a2] * g.points
        ua, va = np.meshgrid(u, v, indexing="ij")
        face_w = guv * (4.0 * half[a1] * half[a2])
        for sign in (-1.0, 1.0):
            face = np.empty((m * m, 3))
            face[:, axis] = center[axis] + sign * half[axis]
            face[:, a1] = center[a1] + ua.ravel()
            face[:, a2] = center[a2] + va.ravel()
            normal = np.zeros(3)
            normal[axis] = sign
            # one monopole and one dipole entry per geometric point
            rep = np.repeat(face, 2, axis=0)
            pts.append(rep)
            wts.append(np.repeat(face_w, 2))
            nrm.append(np.tile(normal, (2 * m * m, 1)))
            roles.append(np.tile([ROLE_MONOPOLE, ROLE_DIPOLE], m * m))
    return GreenSourceSet(np.concatenate(pts), np.concatenate(wts),
                          np.concatenate(nrm), np.concatenate(roles).astype(np.uint8))


def build_green_matrix(mesh: SurfaceMesh, panels, sources: GreenSourceSet,
                       spec: KernelSpec, order: int = 3) -> np.ndarray:
    """A[i, j] = w_j * integral over panel i of source field j.

    Monopole columns carry the single-layer kernel of spec's equation,
    dipole columns its derivative along the source normal. Panel integrals
    use the 2D Duffy rule of the given order.
    """
    panels = np.asarray(panels, dtype=np.int64)
    pts, wq = duffy_panel_rule(order)
    mono_spec = KernelSpec(spec.equation, "single", spec.kappa)
    dip_spec = KernelSpec(spec.equation, "double", spec.kappa)
    dtype = np.complex128 if spec.is_complex else np.float64
    A = np.empty((len(panels), len(sources.weights)), dtype=dtype)

    src = sources.points
    srcn = sources.normals
    mono_cols = sources.roles == ROLE_MONOPOLE
    dip_cols = ~mono_cols

    for base in range(0, len(panels), _PANEL_CHUNK):
        sel = panels[base:base + _PANEL_CHUNK]
        v0, e1, e2, gram = chart_arrays(mesh, sel)
        X = v0[:, None, :] + pts[None, :, 0, None] * e1[:, None, :] \
            + pts[None, :, 1, None] * e2[:, None, :]
        # displacement panel-point -> source, per column group
        d0 = X[:, :, None, 0] - src[None, None, mono_cols, 0]
        d1 = X[:, :, None, 1] - src[None, None, mono_cols, 1]
        d2 = X[:, :, None, 2] - src[None, None, mono_cols, 2]
        mono = kernel_values(mono_spec, d0, d1, d2)
        d0 = X[:, :, None, 0] - src[None, None, dip_cols, 0]
        d1 = X[:, :, None, 1] - src[None, None, dip_cols, 1]
        d2 = X[:, :, None, 2] - src[None, None, dip_cols, 2]
        nd = srcn[dip_cols]
        dip = kernel_values(dip_spec, d0, d1, d2,
                            nd[None, None, :, 0], nd[None, None, :, 1],
                            nd[None, None, :, 2])
        if not (np.all(np.isfinite(mono)) and np.all(np.isfinite(dip))):
            raise GcaError("source coincides with a panel quadrature point")
        integ_mono = np.einsum("q,pqs->ps", wq, mono) * gram[:, None]
        integ_dip = np.einsum("q,pqs->ps", wq, dip) * gram[:, None]
        A[base:base + len(sel), mono_cols] = integ_mono * sources.weights[mono_cols]
        A[base:base + len(sel), dip_cols] = integ_dip * sources.weights[dip_cols]
    return A


def aca(matrix: np.ndarray, epsilon: float, max_rank: int | None = None) -> ACAResult:
    """Partially pivoted adaptive cross approximation.

    The next row is the largest-magnitude entry of the current residual
    column, the next column the largest entry of the residual row (ties to
    the lowest index). Stops when |u_k||v_k| <= epsilon times the running
    Frobenius estimate of the approximation, or at max_rank.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")
    A = np.asarray(matrix)
    nr, nc = A.shape
    limit = min(nr, nc) if max_rank is None else min(max_rank, nr, nc)

    us: list[np.ndarray] = []
    vs: list[np.ndarray] = []
    row_pivots: list[int] = []
    col_pivots: list[int] = []
    used = np.zeros(nr, dtype=bool)
    est_sq = 0.0
    residual = 0.0
    next_row = 0

    while len(row_pivots) < limit:
        if next_row >= nr or used[next_row]:
            remaining = np.flatnonzero(~used)
            if remaining.size == 0:
                break
            next_row = int(remaining[0])
        i = next_row
        row = A[i, :].astype(np.result_type(A.dtype, np.float64), copy=True)
        for u, v in zip(us, vs):
            row -= u[i] * v
        j = int(np.argmax(np.abs(row)))
        used[i] = True
        if row[j] == 0.0:
            next_row = nr  # fall through to the lowest unused row
            continue
        v = row / row[j]
        col = A[:, j].astype(row.dtype, copy=True)
        for u, vv in zip(us, vs):
            col -= vv[j] * u
        us.append(col)
        vs.append(v)
        row_pivots.append(i)
        col_pivots.append(j)

        nu = float(np.linalg.norm(col))
        nv = float(np.linalg.norm(v))
        cross = 0.0
        for u, vv in zip(us[:-1], vs[:-1]):
            cross += (np.vdot(u, col) * np.vdot(vv, v)).real
        est_sq = max(est_sq + nu * nu * nv * nv + 2.0 * cross, 0.0)
        residual = nu * nv
        if residual <= epsilon * np.sqrt(est_sq):
            break
        masked = np.abs(col)
        masked[used] = 0.0
        next_row = int(np.argmax(masked))
        if masked[next_row] == 0.0:
            next_row = nr
    return ACAResult(np.array(row_pivots, dtype=np.int64),
                     np.array(col_pivots, dtype=np.int64),
                     len(row_pivots), residual)


def _solve_with_refinement(A_cols: np.ndarray, pivot_block: np.ndarray) -> np.ndarray:
    """V = A_cols @ inv(pivot_block), polished so pivot rows sit on identity."""
    V = np.linalg.solve(pivot_block.T, A_cols.T).T
    for _ in range(2):
        R = A_cols - V @ pivot_block
        if np.max(np.abs(R)) <= 1e-15 * max(np.max(np.abs(A_cols)), 1.0):
            break
        V = V + np.linalg.solve(pivot_block.T, R.T).T
    return V


def build_interpolation_operator(mesh: SurfaceMesh, cluster_index: int, panels,
                                 box_lo, box_hi, spec: KernelSpec,
                                 params: GcaParams,
                                 scene_diameter: float = 0.0) -> InterpolationOperator:
    """Interpolation operator of one cluster: Green matrix + ACA + pivot solve."""
    panels = np.asarray(panels, dtype=np.int64)
    sources = green_sources(box_lo, box_hi, params.delta, params.m, scene_diameter)
    A = build_green_matrix(mesh, panels, sources, spec, params.rule_order)

    epsilon = params.epsilon
    for attempt in range(2):
        result = aca(A, epsilon)
        if result.rank == 0:
            raise GcaError(f"cluster {cluster_index}: zero Green matrix")
        block = A[np.ix_(result.row_pivots, result.col_pivots)]
        if np.linalg.cond(block) <= _PIVOT_COND_LIMIT:
            V = _solve_with_refinement(A[:, result.col_pivots], block)
            return InterpolationOperator(cluster_index,
                                         result.row_pivots,
                                         panels[result.row_pivots], V)
        epsilon *= 0.1  # retry once with a tighter tolerance
    raise GcaError(
        f"cluster {cluster_index}: singular ACA pivot block "
        f"(condition above {_PIVOT_COND_LIMIT:.0e})")


def build_interpolation_operators(mesh: SurfaceMesh, block_tree: BlockTree,
                                  spec: KernelSpec, params: GcaParams):
    """Operators for every cluster participating in an admissible block.

    Returns (row_ops, col_ops); with a shared cluster tree both names refer
    to the same dict. The column-side action (conjugate of V) is applied by
    the matrix-vector product, not stored.
    """
    scene = mesh.diameter()

    def build_for(tree: ClusterTree, ids) -> dict[int, InterpolationOperator]:
        ops = {}
        for cid in sorted(ids):
            node = tree.nodes[cid]
            ops[cid] = build_interpolation_operator(
                mesh, cid, tree.panels(node), node.lo, node.hi, spec, params,
                scene_diameter=scene)
        return ops

    row_ids = {leaf.row for leaf in block_tree.leaves if leaf.kind == "admissible"}
    col_ids = {leaf.col for leaf in block_tree.leaves if leaf.kind == "admissible"}
    if block_tree.row_tree is block_tree.col_tree:
        ops = build_for(block_tree.row_tree, row_ids | col_ids)
        return ops, ops
    return (build_for(block_tree.row_tree, row_ids),
            build_for(block_tree.col_tree, col_ids))
