"""Compressed operator container: near-field blocks, couplings, matvec, I/O.

An admissible block (t, s) is stored as the coupling S = G restricted to the
pivot sets (tt, ss); its action is V_t @ S @ V_s^T (the column-side operator
is the conjugate of the stored V_s, so its conjugate transpose is the plain
transpose). Near-field blocks are dense. Vectors enter and leave in external
panel order; the cluster-tree permutations are applied internally.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .cluster import BlockNode, BlockTree, ClusterNode, ClusterTree
from .gca import InterpolationOperator
from .kernels import KernelSpec
from .mesh import SurfaceMesh, chart, chart_arrays
from .quadrature import build_rule, classify_pair, duffy_panel_rule, integrate_pair

DENSE_EXPANSION_CAP = 4096

_MAGIC = b"GCAMAT01"
_FORMAT_VERSION = 1


@dataclass
class GCAMatrix:
    block_tree: BlockTree
    row_ops: dict[int, InterpolationOperator]
    col_ops: dict[int, InterpolationOperator]
    payloads: dict[int, np.ndarray]  # block-leaf index -> dense or coupling data

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.block_tree.row_tree.permutation),
                len(self.block_tree.col_tree.permutation))

    def checksum(self) -> str:
        """Hash of all leaf payloads in block-tree preorder."""
        import hashlib
        h = hashlib.sha256()
        for leaf in self.block_tree.leaves:
            h.update(np.ascontiguousarray(self.payloads[leaf.index]).tobytes())
        return h.hexdigest()


def matvec(M: GCAMatrix, x: np.ndarray) -> np.ndarray:
    """y = M x with deterministic block-tree preorder accumulation."""
    rows, cols = M.shape
    x = np.asarray(x)
    if x.shape != (cols,):
        raise ValueError(f"dimension mismatch: operator {M.shape}, vector {x.shape}")
    row_tree = M.block_tree.row_tree
    col_tree = M.block_tree.col_tree
    x_perm = np.asarray(x, dtype=np.complex128)[col_tree.permutation]
    y_perm = np.zeros(rows, dtype=np.complex128)
    for leaf in M.block_tree.leaves:
        t = row_tree.nodes[leaf.row]
        s = col_tree.nodes[leaf.col]
        xs = x_perm[s.start:s.start + s.size]
        payload = M.payloads[leaf.index]
        if leaf.kind == "dense":
            y_perm[t.start:t.start + t.size] += payload @ xs
        else:
            z = M.col_ops[leaf.col].V.T @ xs            # W_s^* x, W_s = conj(V_s)
            y_perm[t.start:t.start + t.size] += M.row_ops[leaf.row].V @ (payload @ z)
    y = np.empty(rows, dtype=np.complex128)
    y[row_tree.permutation] = y_perm
    return y


def to_dense(M: GCAMatrix, cap: int = DENSE_EXPANSION_CAP) -> np.ndarray:
    """Expand every leaf into the global matrix (verification only)."""
    rows, cols = M.shape
    if rows > cap or cols > cap:
        raise ValueError(f"matrix {rows}x{cols} exceeds the expansion cap {cap}")
    row_perm = M.block_tree.row_tree.permutation
    col_perm = M.block_tree.col_tree.permutation
    G = np.zeros((rows, cols), dtype=np.complex128)
    for leaf in M.block_tree.leaves:
        t = M.block_tree.row_tree.nodes[leaf.row]
        s = M.block_tree.col_tree.nodes[leaf.col]
        payload = M.payloads[leaf.index]
        if leaf.kind == "dense":
            block = payload
        else:
            block = M.row_ops[leaf.row].V @ payload @ M.col_ops[leaf.col].V.T
        gi = row_perm[t.start:t.start + t.size]
        gj = col_perm[s.start:s.start + s.size]
        G[np.ix_(gi, gj)] = block
    return G


def storage_bytes(M: GCAMatrix) -> dict[str, int]:
    """Actual byte footprint of the compressed representation by component."""
    near = sum(M.payloads[l.index].nbytes for l in M.block_tree.leaves
               if l.kind == "dense")
    coupling = sum(M.payloads[l.index].nbytes for l in M.block_tree.leaves
                   if l.kind == "admissible")
    ops = {id(op): op for op in list(M.row_ops.values()) + list(M.col_ops.values())}
    bases = sum(op.V.nbytes + op.pivots_global.nbytes for op in ops.values())
    return {"near": near, "coupling": coupling, "bases": bases,
            "total": near + coupling + bases}


# ---------------------------------------------------------------------------
# reference assembly (schedulerless oracles)

def assemble_direct(mesh: SurfaceMesh, block_tree: BlockTree, spec: KernelSpec,
                    row_ops, col_ops, orders: tuple[int, int] = (3, 5)) -> GCAMatrix:
    """Loop every block leaf and call integrate_pair per panel pair.

    Reference for the scheduler: identical block structure and identical
    per-entry arithmetic, no work lists, no threads.
    """
    disjoint_n, singular_n = orders
    payloads: dict[int, np.ndarray] = {}
    row_tree = block_tree.row_tree
    col_tree = block_tree.col_tree
    for leaf in block_tree.leaves:
        if leaf.kind == "dense":
            rows = row_tree.panels(row_tree.nodes[leaf.row])
            cols = col_tree.panels(col_tree.nodes[leaf.col])
        else:
            rows = row_ops[leaf.row].pivots_global
            cols = col_ops[leaf.col].pivots_global
        block = np.empty((len(rows), len(cols)), dtype=np.complex128)
        for a, i in enumerate(rows):
            for b, j in enumerate(cols):
                cls = classify_pair(mesh, int(i), int(j))
                n = disjoint_n if cls.case == "disjoint" else singular_n
                rule = build_rule(cls.case, n)
                cx = chart(mesh, int(i), cls.perm_x)
                cy = chart(mesh, int(j), cls.perm_y)
                block[a, b] = integrate_pair(cx, cy, spec, rule,
                                             normal_y=mesh.normals[int(j)])
        payloads[leaf.index] = block
    return GCAMatrix(block_tree, row_ops, col_ops, payloads)


def assemble_dense(mesh: SurfaceMesh, spec: KernelSpec,
                   orders: tuple[int, int] = (3, 5)) -> np.ndarray:
    """Full dense Galerkin matrix, every pair integrated with its proper rule.

    Independent oracle for compression error checks; vectorized over the
    disjoint pairs, singular pairs via integrate_pair.
    """
    disjoint_n, singular_n = orders
    nt = mesh.num_triangles
    tri = mesh.triangles
    shared = np.zeros((nt, nt), dtype=np.int8)
    for a in range(3):
        for b in range(3):
            shared += (tri[:, a][:, None] == tri[:, b][None, :]).astype(np.int8)
    G = np.zeros((nt, nt), dtype=np.complex128)

    pts, wq = duffy_panel_rule(disjoint_n)
    v0, e1, e2, gram = chart_arrays(mesh, np.arange(nt))
    X = v0[:, None, :] + pts[None, :, 0, None] * e1[:, None, :] \
        + pts[None, :, 1, None] * e2[:, None, :]
    from .kernels import kernel_values
    chunk = max(1, 8_000_000 // (nt * len(wq) * len(wq)))
    for base in range(0, nt, chunk):
        hi = min(base + chunk, nt)
        d0 = X[base:hi, :, None, None, 0] - X[None, None, :, :, 0]
        d1 = X[base:hi, :, None, None, 1] - X[None, None, :, :, 1]
        d2 = X[base:hi, :, None, None, 2] - X[None, None, :, :, 2]
        if spec.needs_normal:
            n = mesh.normals
            vals = kernel_values(spec, d0, d1, d2,
                                 n[None, None, :, None, 0],
                                 n[None, None, :, None, 1],
                                 n[None, None, :, None, 2])
        else:
            vals = kernel_values(spec, d0, d1, d2)
        with np.errstate(invalid="ignore"):
            block = np.einsum("q,r,iqjr->ij", wq, wq, vals)
        block *= gram[base:hi, None] * gram[None, :]
        G[base:hi, :] = block
    # overwrite singular pairs with their proper rules
    for i, j in np.argwhere(shared > 0):
        cls = classify_pair(mesh, int(i), int(j))
        rule = build_rule(cls.case, singular_n)
        cx = chart(mesh, int(i), cls.perm_x)
        cy = chart(mesh, int(j), cls.perm_y)
        G[i, j] = integrate_pair(cx, cy, spec, rule, normal_y=mesh.normals[int(j)])
    return G


# ---------------------------------------------------------------------------
# binary dump/load (little-endian, versioned)

def _write_array(fh, arr: np.ndarray) -> None:
    kind = {"f": 0, "c": 1, "i": 2, "u": 3}[arr.dtype.kind]
    fh.write(struct.pack("<BB", kind, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    out = arr.astype({0: "<f8", 1: "<c16", 2: "<i8", 3: "<u1"}[kind], copy=False)
    fh.write(np.ascontiguousarray(out).tobytes())


def _read_array(fh) -> np.ndarray:
    kind, ndim = struct.unpack("<BB", fh.read(2))
    shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
    dtype = {0: "<f8", 1: "<c16", 2: "<i8", 3: "<u1"}[kind]
    count = int(np.prod(shape)) if shape else 1
    itemsize = np.dtype(dtype).itemsize
    data = fh.read(count * itemsize)
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def _write_cluster_tree(fh, tree: ClusterTree) -> None:
    fh.write(struct.pack("<qq", len(tree.nodes), tree.leaf_size))
    _write_array(fh, tree.permutation)
    for node in tree.nodes:
        fh.write(struct.pack("<qqq", node.start, node.size, len(node.children)))
        if node.children:
            fh.write(struct.pack(f"<{len(node.children)}q", *node.children))
        _write_array(fh, node.lo)
        _write_array(fh, node.hi)


def _read_cluster_tree(fh) -> ClusterTree:
    n_nodes, leaf_size = struct.unpack("<qq", fh.read(16))
    perm = _read_array(fh)
    nodes = []
    for idx in range(n_nodes):
        start, size, n_child = struct.unpack("<qqq", fh.read(24))
        children = struct.unpack(f"<{n_child}q", fh.read(8 * n_child)) if n_child else ()
        lo = _read_array(fh)
        hi = _read_array(fh)
        nodes.append(ClusterNode(idx, start, size, lo, hi, tuple(children)))
    return ClusterTree(nodes, perm, int(leaf_size))


_KIND_CODES = {"admissible": 0, "dense": 1, "split": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def dump(M: GCAMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        shared_tree = M.block_tree.row_tree is M.block_tree.col_tree
        shared_ops = M.row_ops is M.col_ops
        fh.write(struct.pack("<BB", shared_tree, shared_ops))
        _write_cluster_tree(fh, M.block_tree.row_tree)
        if not shared_tree:
            _write_cluster_tree(fh, M.block_tree.col_tree)
        bt = M.block_tree
        fh.write(struct.pack("<qd", len(bt.nodes), bt.eta))
        for node in bt.nodes:
            fh.write(struct.pack("<qqBq", node.row, node.col,
                                 _KIND_CODES[node.kind], len(node.children)))
            if node.children:
                fh.write(struct.pack(f"<{len(node.children)}q", *node.children))

        def write_ops(ops):
            fh.write(struct.pack("<q", len(ops)))
            for cid in sorted(ops):
                op = ops[cid]
                fh.write(struct.pack("<q", cid))
                _write_array(fh, op.pivots_local)
                _write_array(fh, op.pivots_global)
                _write_array(fh, op.V)

        write_ops(M.row_ops)
        if not shared_ops:
            write_ops(M.col_ops)
        fh.write(struct.pack("<q", len(M.payloads)))
        for leaf_id in sorted(M.payloads):
            fh.write(struct.pack("<q", leaf_id))
            _write_array(fh, M.payloads[leaf_id])


def load(path) -> GCAMatrix:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a GCA matrix file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        shared_tree, shared_ops = struct.unpack("<BB", fh.read(2))
        row_tree = _read_cluster_tree(fh)
        col_tree = row_tree if shared_tree else _read_cluster_tree(fh)
        n_nodes, eta = struct.unpack("<qd", fh.read(16))
        nodes = []
        for idx in range(n_nodes):
            row, col, kind, n_child = struct.unpack("<qqBq", fh.read(25))
            children = struct.unpack(f"<{n_child}q", fh.read(8 * n_child)) if n_child else ()
            nodes.append(BlockNode(idx, row, col, _KIND_NAMES[kind], tuple(children)))
        leaves = [n for n in nodes if n.kind != "split"]
        block_tree = BlockTree(nodes, row_tree, col_tree, eta, leaves)

        def read_ops():
            (count,) = struct.unpack("<q", fh.read(8))
            ops = {}
            for _ in range(count):
                (cid,) = struct.unpack("<q", fh.read(8))
                pl = _read_array(fh)
                pg = _read_array(fh)
                V = _read_array(fh)
                ops[cid] = InterpolationOperator(cid, pl, pg, V)
            return ops

        row_ops = read_ops()
        col_ops = row_ops if shared_ops else read_ops()
        (n_payloads,) = struct.unpack("<q", fh.read(8))
        payloads = {}
        for _ in range(n_payloads):
            (leaf_id,) = struct.unpack("<q", fh.read(8))
            payloads[leaf_id] = _read_array(fh)
        return GCAMatrix(block_tree, row_ops, col_ops, payloads)
