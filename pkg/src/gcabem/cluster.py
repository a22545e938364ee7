"""Cluster tree over panel DoFs and block tree over matrix index pairs.

Clusters are built by geometric bisection: split along the longest axis of
the node's triangle bounding box at the coordinate median of the triangle
midpoints (ties broken by lower panel index). Node boxes contain their
triangles entirely. Blocks are classified by the standard admissibility
condition max(diam_t, diam_s) <= eta * dist(box_t, box_s).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import SurfaceMesh

DEFAULT_LEAF_SIZE = 16
DEFAULT_ETA = 1.0


@dataclass(frozen=True)
class ClusterNode:
    index: int
    start: int          # offset into the tree permutation
    size: int
    lo: np.ndarray      # box containing all of the node's triangles
    hi: np.ndarray
    children: tuple[int, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ClusterTree:
    nodes: list[ClusterNode]          # preorder; nodes[0] is the root
    permutation: np.ndarray           # permutation[pos] = original panel index
    leaf_size: int

    @property
    def root(self) -> ClusterNode:
        return self.nodes[0]

    def panels(self, node: ClusterNode) -> np.ndarray:
        return self.permutation[node.start:node.start + node.size]

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]


@dataclass(frozen=True)
class BlockNode:
    index: int
    row: int            # cluster node index in the row tree
    col: int            # cluster node index in the column tree
    kind: str           # "admissible" | "dense" | "split"
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class BlockTree:
    nodes: list[BlockNode]
    row_tree: ClusterTree
    col_tree: ClusterTree
    eta: float
    leaves: list[BlockNode] = field(default_factory=list)


def box_diameter(lo: np.ndarray, hi: np.ndarray) -> float:
    return float(np.linalg.norm(hi - lo))


def box_distance(lo_a, hi_a, lo_b, hi_b) -> float:
    gap = np.maximum(0.0, np.maximum(lo_a - hi_b, lo_b - hi_a))
    return float(np.linalg.norm(gap))


def admissible(node_t: ClusterNode, node_s: ClusterNode, eta_adm: float) -> bool:
    """max(diam) <= eta * Euclidean box distance; false for touching boxes."""
    dist = box_distance(node_t.lo, node_t.hi, node_s.lo, node_s.hi)
    diam = max(box_diameter(node_t.lo, node_t.hi),
               box_diameter(node_s.lo, node_s.hi))
    return diam <= eta_adm * dist


def build_cluster_tree(mesh: SurfaceMesh, leaf_size: int = DEFAULT_LEAF_SIZE) -> ClusterTree:
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    nt = mesh.num_triangles
    if nt == 0:
        raise ValueError("empty mesh")
    tri_lo, tri_hi = mesh.triangle_bounds()
    mid = mesh.midpoints()

    nodes: list[ClusterNode] = []
    perm = np.empty(nt, dtype=np.int64)
    cursor = 0

    def build(idx: np.ndarray) -> int:
        nonlocal cursor
        me = len(nodes)
        nodes.append(None)  # reserve preorder slot
        lo = tri_lo[idx].min(axis=0)
        hi = tri_hi[idx].max(axis=0)
        start = cursor
        if len(idx) <= leaf_size:
            perm[cursor:cursor + len(idx)] = idx
            cursor += len(idx)
            nodes[me] = ClusterNode(me, start, len(idx), lo, hi)
            return me
        axis = int(np.argmax(hi - lo))
        # median split of midpoints, stable with lower-index tie-breaking
        order = idx[np.lexsort((idx, mid[idx, axis]))]
        half = len(order) // 2
        left = build(order[:half])
        right = build(order[half:])
        nodes[me] = ClusterNode(me, start, len(idx), lo, hi, (left, right))
        return me

    build(np.arange(nt, dtype=np.int64))
    return ClusterTree(nodes, perm, leaf_size)


def build_block_tree(row_tree: ClusterTree, col_tree: ClusterTree,
                     eta_adm: float = DEFAULT_ETA) -> BlockTree:
    """Recursive descent: admissible pair -> admissible leaf; two cluster
    leaves -> dense leaf; otherwise subdivide every cluster that has children."""
    nodes: list[BlockNode] = []
    leaves: list[BlockNode] = []

    def build(t_idx: int, s_idx: int) -> int:
        me = len(nodes)
        nodes.append(None)
        t = row_tree.nodes[t_idx]
        s = col_tree.nodes[s_idx]
        if admissible(t, s, eta_adm):
            node = BlockNode(me, t_idx, s_idx, "admissible")
            leaves.append(node)
        elif t.is_leaf and s.is_leaf:
            node = BlockNode(me, t_idx, s_idx, "dense")
            leaves.append(node)
        else:
            t_children = t.children if t.children else (t_idx,)
            s_children = s.children if s.children else (s_idx,)
            kids = tuple(build(tc, sc) for tc in t_children for sc in s_children)
            node = BlockNode(me, t_idx, s_idx, "split", kids)
        nodes[me] = node
        return me

    build(0, 0)
    return BlockTree(nodes, row_tree, col_tree, eta_adm, leaves)
