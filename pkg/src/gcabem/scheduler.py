"""Case-homogeneous work lists with a byte budget, master/worker execution.

Every near-field and coupling block first enters the disjoint list; a block
that would overflow the current list flushes it, and a block too large for an
empty list is split along its longer index dimension. Workers execute ready
lists on a backend (scalar reference loop or merged-batch evaluation),
distribute results into the leaf payloads, and scan blocks whose cluster
boxes touch for panel pairs sharing vertices; those pairs are appended to the
matching singular list and their corrective results later overwrite the
disjoint-rule values. Per entry the final value is produced wholly by one
item with a fixed-order quadrature sum, so the assembled matrix is bitwise
independent of worker count, list size, and backend choice.

List byte accounting: 24 bytes per pair record plus 8 bytes per output value
(32 bytes per pair); maxsize must admit at least one pair record.
"""
from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import BlockTree, box_distance
from .gca import InterpolationOperator
from .h2 import GCAMatrix
from .kernels import KernelSpec, eval_batch
from .mesh import SurfaceMesh, chart, chart_arrays
from .pairquad import pair_values
from .quadrature import QuadRule4D, build_rule, classify_pair, integrate_pair

PAIR_RECORD_BYTES = 24
VALUE_BYTES = 8
BYTES_PER_PAIR = PAIR_RECORD_BYTES + VALUE_BYTES
DEFAULT_MAXSIZE = 8 * 2 ** 20  # the paper-backed 8 MB default

SINGULAR_CASES = ("vertex", "edge", "identical")
_CASE_OF_SHARED = {1: "vertex", 2: "edge", 3: "identical"}


class SchedulerConfigError(ValueError):
    pass


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class Backend:
    """Compute backend stub; `kind` selects the execution path."""
    name: str
    kind: str  # "scalar-reference" | "batch"
    affinity: str = ""

    def __post_init__(self):
        if self.kind not in ("scalar-reference", "batch"):
            raise SchedulerConfigError(f"unknown backend kind {self.kind!r}")
        if not self.affinity:
            object.__setattr__(self, "affinity", self.name)


SCALAR_BACKEND = Backend("scalar", "scalar-reference")
BATCH_BACKEND = Backend("batch", "batch")


@dataclass(frozen=True)
class SchedulerParams:
    maxsize_bytes: int = DEFAULT_MAXSIZE
    workers_per_backend: int = 2
    backends: tuple[Backend, ...] = (SCALAR_BACKEND, BATCH_BACKEND)
    # case -> backend name; singular cases stay on the scalar reference
    affinity: dict = field(default_factory=lambda: {
        "disjoint": "batch", "vertex": "scalar",
        "edge": "scalar", "identical": "scalar"})

    def backend_for(self, case: str) -> Backend:
        wanted = self.affinity.get(case)
        for b in self.backends:
            if b.name == wanted:
                return b
        return self.backends[0]


@dataclass
class WorkBlock:
    """Disjoint-list item: a rectangular grid of panel pairs with its slots."""
    leaf_id: int
    row_panels: np.ndarray
    col_panels: np.ndarray
    row_slots: np.ndarray
    col_slots: np.ndarray
    flagged: bool  # may contain non-disjoint pairs (cluster boxes touch)

    @property
    def num_pairs(self) -> int:
        return len(self.row_panels) * len(self.col_panels)

    @property
    def nbytes(self) -> int:
        return self.num_pairs * BYTES_PER_PAIR


@dataclass(frozen=True)
class WorkItem:
    """Singular corrective item: one panel pair and its output slot."""
    case: str
    tri_x: int
    tri_y: int
    leaf_id: int
    offset: int  # flat offset into the leaf payload

    @property
    def nbytes(self) -> int:
        return BYTES_PER_PAIR


@dataclass
class WorkList:
    case: str
    items: list
    nbytes: int = 0
    state: str = "filling"  # filling -> ready -> done
    seq: int = -1
    attempts: int = 0
    # event-log fields (monotonic timestamps)
    backend: str = ""
    t_enqueue: float = 0.0
    t_dequeue: float = 0.0
    t_done: float = 0.0

    @property
    def num_pairs(self) -> int:
        if self.case == "disjoint":
            return sum(b.num_pairs for b in self.items)
        return len(self.items)


@dataclass
class AssemblyStats:
    lists_executed: int = 0
    pairs_executed: int = 0
    block_pairs: int = 0
    corrective_items: int = 0
    events: list = field(default_factory=list)

    def event_rows(self):
        return list(self.events)


def split_block(block: WorkBlock, maxsize: int) -> list[WorkBlock]:
    """Halve the longer index dimension until each sub-block fits."""
    if block.nbytes <= maxsize:
        return [block]
    if block.num_pairs <= 1:
        raise SchedulerConfigError(
            f"maxsize {maxsize} smaller than one pair record ({BYTES_PER_PAIR} B)")
    if len(block.row_panels) >= len(block.col_panels):
        h = len(block.row_panels) // 2
        parts = [replace(block, row_panels=block.row_panels[:h],
                         row_slots=block.row_slots[:h]),
                 replace(block, row_panels=block.row_panels[h:],
                         row_slots=block.row_slots[h:])]
    else:
        h = len(block.col_panels) // 2
        parts = [replace(block, col_panels=block.col_panels[:h],
                         col_slots=block.col_slots[:h]),
                 replace(block, col_panels=block.col_panels[h:],
                         col_slots=block.col_slots[h:])]
    out = []
    for p in parts:
        out.extend(split_block(p, maxsize))
    return out


class ListBuilder:
    """Accumulates items into a WorkList under the byte budget (Alg. 1 shape)."""

    def __init__(self, case: str, maxsize: int, sink):
        if maxsize < BYTES_PER_PAIR:
            raise SchedulerConfigError(
                f"maxsize {maxsize} smaller than one pair record ({BYTES_PER_PAIR} B)")
        self.case = case
        self.maxsize = maxsize
        self.sink = sink
        self.current = WorkList(case, [])

    def add_block(self, block: WorkBlock) -> None:
        for part in split_block(block, self.maxsize):
            self._add(part, part.nbytes)

    def add_item(self, item: WorkItem) -> None:
        self._add(item, item.nbytes)

    def _add(self, item, nbytes: int) -> None:
        if self.current.nbytes + nbytes > self.maxsize and self.current.items:
            self.flush()
        self.current.items.append(item)
        self.current.nbytes += nbytes

    def flush(self) -> None:
        if self.current.items:
            lst = self.current
            self.current = WorkList(self.case, [])
            lst.state = "ready"
            self.sink(lst)


# ---------------------------------------------------------------------------
# list execution

def _merge_disjoint(mesh: SurfaceMesh, lst: WorkList):
    """Merge block parameters into contiguous pair arrays (Alg. 4 Merge_data)."""
    tri_x = np.concatenate([np.repeat(b.row_panels, len(b.col_panels))
                            for b in lst.items])
    tri_y = np.concatenate([np.tile(b.col_panels, len(b.row_panels))
                            for b in lst.items])
    return tri_x, tri_y, None, None


def _merge_singular(mesh: SurfaceMesh, lst: WorkList):
    tri_x = np.array([it.tri_x for it in lst.items], dtype=np.int64)
    tri_y = np.array([it.tri_y for it in lst.items], dtype=np.int64)
    perms_x = np.empty((len(lst.items), 3), dtype=np.int64)
    perms_y = np.empty((len(lst.items), 3), dtype=np.int64)
    for k, it in enumerate(lst.items):
        cls = classify_pair(mesh, it.tri_x, it.tri_y)
        perms_x[k] = cls.perm_x
        perms_y[k] = cls.perm_y
    return tri_x, tri_y, perms_x, perms_y


def batch_quadrature(backend: Backend, case: str, mesh: SurfaceMesh,
                     spec: KernelSpec, rule: QuadRule4D,
                     tri_x, tri_y, perms_x=None, perms_y=None) -> np.ndarray:
    """Evaluate one merged, case-homogeneous batch of pair integrals.

    The scalar-reference backend loops integrate_pair in batch order; the
    batch backend runs the fused kernel once over the merged structure-of-
    arrays parameters. Both end in the same per-pair operation sequence, so
    the outputs are bitwise equal.
    """
    n = len(tri_x)
    if backend.kind == "scalar-reference":
        out = np.empty(n, dtype=np.complex128)
        for k in range(n):
            px = tuple(perms_x[k]) if perms_x is not None else (0, 1, 2)
            py = tuple(perms_y[k]) if perms_y is not None else (0, 1, 2)
            cx = chart(mesh, int(tri_x[k]), px)
            cy = chart(mesh, int(tri_y[k]), py)
            out[k] = integrate_pair(cx, cy, spec, rule,
                                    normal_y=mesh.normals[int(tri_y[k])])
        return out

    ox, e1x, e2x, gx = chart_arrays(mesh, tri_x, perms_x)
    oy, e1y, e2y, gy = chart_arrays(mesh, tri_y, perms_y)
    normals = mesh.normals[tri_y] if spec.needs_normal else None
    return pair_values(spec, ox, e1x, e2x, gx, oy, e1y, e2y, gy, normals,
                       rule.x_points, rule.y_points, rule.weights)


class _AssemblyContext:
    """Shared state of one run_assembly invocation."""

    def __init__(self, mesh, block_tree, spec, params, orders, payloads, stats):
        self.mesh = mesh
        self.block_tree = block_tree
        self.spec = spec
        self.params = params
        self.orders = orders  # (disjoint_n, singular_n)
        self.payloads = payloads
        self.stats = stats
        self.lock = threading.Lock()
        self.queues = {b.name: queue.Queue() for b in params.backends}
        self.outstanding_disjoint = 0
        self.outstanding_total = 0
        self.quiesce = threading.Condition()
        self.error: BaseException | None = None
        self.seq = 0
        self.inline = params.workers_per_backend == 0
        self.singular_builders = {
            c: ListBuilder(c, params.maxsize_bytes, self.enqueue_list)
            for c in SINGULAR_CASES}
        self.singular_lock = threading.Lock()

    def enqueue_list(self, lst: WorkList) -> None:
        backend = self.params.backend_for(lst.case)
        lst.backend = backend.name
        lst.t_enqueue = time.monotonic()
        with self.quiesce:
            lst.seq = self.seq
            self.seq += 1
            self.outstanding_total += 1
            if lst.case == "disjoint":
                self.outstanding_disjoint += 1
        if self.inline:
            execute_list(lst, backend, self)
        else:
            self.queues[backend.name].put(lst)

    def list_done(self, lst: WorkList) -> None:
        with self.quiesce:
            self.outstanding_total -= 1
            if lst.case == "disjoint":
                self.outstanding_disjoint -= 1
            self.stats.lists_executed += 1
            self.stats.pairs_executed += lst.num_pairs
            self.stats.events.append({
                "case": lst.case, "items": len(lst.items),
                "pairs": lst.num_pairs, "bytes": lst.nbytes,
                "backend": lst.backend, "enqueue": lst.t_enqueue,
                "dequeue": lst.t_dequeue, "done": lst.t_done})
            self.quiesce.notify_all()

    def add_corrective(self, item: WorkItem) -> None:
        with self.singular_lock:
            self.stats.corrective_items += 1
            self.singular_builders[item.case].add_item(item)

    def flush_singular(self) -> None:
        with self.singular_lock:
            for c in SINGULAR_CASES:
                self.singular_builders[c].flush()

    def fail(self, exc: BaseException) -> None:
        with self.quiesce:
            if self.error is None:
                self.error = exc
            self.quiesce.notify_all()


def distribute_disjoint(lst: WorkList, results: np.ndarray, ctx: _AssemblyContext) -> None:
    """Copy disjoint-rule results into payloads, then queue corrective items
    for every pair of a flagged block that shares 1-3 vertices."""
    tri = ctx.mesh.triangles
    pos = 0
    for block in lst.items:
        nr, nc = len(block.row_panels), len(block.col_panels)
        chunk = results[pos:pos + nr * nc].reshape(nr, nc)
        pos += nr * nc
        payload = ctx.payloads[block.leaf_id]
        payload[np.ix_(block.row_slots, block.col_slots)] = chunk
        if not block.flagged:
            continue
        ta = tri[block.row_panels]
        tb = tri[block.col_panels]
        shared = np.zeros((nr, nc), dtype=np.int8)
        for a in range(3):
            for b in range(3):
                shared += (ta[:, a][:, None] == tb[:, b][None, :]).astype(np.int8)
        ncols_payload = payload.shape[1]
        for a, b in np.argwhere(shared > 0):
            case = _CASE_OF_SHARED[int(shared[a, b])]
            ctx.add_corrective(WorkItem(
                case, int(block.row_panels[a]), int(block.col_panels[b]),
                block.leaf_id,
                int(block.row_slots[a]) * ncols_payload + int(block.col_slots[b])))


def distribute_singular(lst: WorkList, results: np.ndarray, ctx: _AssemblyContext) -> None:
    """Overwrite the disjoint-rule coefficients with the singular values."""
    for item, value in zip(lst.items, results):
        ctx.payloads[item.leaf_id].flat[item.offset] = value


def execute_list(lst: WorkList, backend: Backend, ctx: _AssemblyContext) -> None:
    """Merge, run the backend's batch quadrature once, distribute (Alg. 4)."""
    lst.t_dequeue = time.monotonic()
    lst.attempts += 1
    try:
        if lst.items:
            if lst.case == "disjoint":
                tri_x, tri_y, px, py = _merge_disjoint(ctx.mesh, lst)
                rule = build_rule("disjoint", ctx.orders[0])
            else:
                tri_x, tri_y, px, py = _merge_singular(ctx.mesh, lst)
                rule = build_rule(lst.case, ctx.orders[1])
            results = batch_quadrature(backend, lst.case, ctx.mesh, ctx.spec,
                                       rule, tri_x, tri_y, px, py)
            if lst.case == "disjoint":
                distribute_disjoint(lst, results, ctx)
            else:
                distribute_singular(lst, results, ctx)
    except Exception as exc:
        others = [b for b in ctx.params.backends if b.name != backend.name]
        if lst.attempts == 1 and others and not ctx.inline:
            ctx.queues[others[0].name].put(lst)
            return
        ctx.fail(BackendError(f"list {lst.seq} ({lst.case}) failed twice: {exc}"))
        return
    lst.state = "done"
    lst.t_done = time.monotonic()
    ctx.list_done(lst)


def _worker(ctx: _AssemblyContext, backend: Backend, stop: threading.Event) -> None:
    q = ctx.queues[backend.name]
    while True:
        try:
            lst = q.get(timeout=0.01)
        except queue.Empty:
            if stop.is_set():
                return
            time.sleep(0.001)  # back off briefly, then re-poll (Alg. 2)
            continue
        execute_list(lst, backend, ctx)


def make_payloads(block_tree: BlockTree, row_ops, col_ops) -> dict[int, np.ndarray]:
    payloads = {}
    for leaf in block_tree.leaves:
        if leaf.kind == "dense":
            t = block_tree.row_tree.nodes[leaf.row]
            s = block_tree.col_tree.nodes[leaf.col]
            payloads[leaf.index] = np.zeros((t.size, s.size), dtype=np.complex128)
        else:
            payloads[leaf.index] = np.zeros(
                (row_ops[leaf.row].rank, col_ops[leaf.col].rank),
                dtype=np.complex128)
    return payloads


def _leaf_blocks(block_tree: BlockTree, row_ops, col_ops):
    """Work blocks for every block-tree leaf, in preorder."""
    rt, ct = block_tree.row_tree, block_tree.col_tree
    for leaf in block_tree.leaves:
        t = rt.nodes[leaf.row]
        s = ct.nodes[leaf.col]
        if leaf.kind == "dense":
            rows = rt.panels(t)
            cols = ct.panels(s)
        else:
            rows = row_ops[leaf.row].pivots_global
            cols = col_ops[leaf.col].pivots_global
        flagged = box_distance(t.lo, t.hi, s.lo, s.hi) == 0.0
        yield WorkBlock(leaf.index, rows, cols,
                        np.arange(len(rows)), np.arange(len(cols)), flagged)


def run_assembly(mesh: SurfaceMesh, block_tree: BlockTree, spec: KernelSpec,
                 row_ops: dict[int, InterpolationOperator],
                 col_ops: dict[int, InterpolationOperator],
                 params: SchedulerParams | None = None,
                 orders: tuple[int, int] = (3, 5),
                 stats: AssemblyStats | None = None) -> GCAMatrix:
    """Assemble the compressed operator through the work-list scheduler.

    The master traverses block-tree leaves feeding the disjoint list; workers
    per backend drain ready lists. Corrective singular lists are flushed only
    after all disjoint lists finished, results are independent of the worker
    count and backend mix. workers_per_backend = 0 executes everything inline
    on the master thread.
    """
    params = params or SchedulerParams()
    stats = stats if stats is not None else AssemblyStats()
    if not params.backends:
        raise SchedulerConfigError("at least one backend required")
    payloads = make_payloads(block_tree, row_ops, col_ops)
    ctx = _AssemblyContext(mesh, block_tree, spec, params, orders, payloads, stats)

    workers = []
    stop = threading.Event()
    if not ctx.inline:
        for backend in params.backends:
            for _ in range(params.workers_per_backend):
                th = threading.Thread(target=_worker, args=(ctx, backend, stop),
                                      daemon=True)
                th.start()
                workers.append(th)
    total_workers = max(1, len(workers))

    try:
        builder = ListBuilder("disjoint", params.maxsize_bytes, ctx.enqueue_list)
        for block in _leaf_blocks(block_tree, row_ops, col_ops):
            stats.block_pairs += block.num_pairs
            # keep the queue bounded: stall while workers are saturated
            if not ctx.inline:
                with ctx.quiesce:
                    while (ctx.outstanding_total >= 4 * total_workers
                           and ctx.error is None):
                        ctx.quiesce.wait(0.01)
            if ctx.error is not None:
                raise ctx.error
            builder.add_block(block)
        builder.flush()
        # disjoint quiescence, then the corrective lists are complete
        with ctx.quiesce:
            while ctx.outstanding_disjoint > 0 and ctx.error is None:
                ctx.quiesce.wait(0.01)
        if ctx.error is not None:
            raise ctx.error
        ctx.flush_singular()
        with ctx.quiesce:
            while ctx.outstanding_total > 0 and ctx.error is None:
                ctx.quiesce.wait(0.01)
        if ctx.error is not None:
            raise ctx.error
    finally:
        stop.set()
        for th in workers:
            th.join()

    return GCAMatrix(block_tree, row_ops, col_ops, payloads)


def potential_batch(mesh: SurfaceMesh, spec: KernelSpec, points: np.ndarray,
                    order: int = 3) -> np.ndarray:
    """Per-panel potentials at off-surface points via the disjoint pipeline.

    Each point acts as a degenerate target panel (zero-extent chart whose
    Gramian of 2 cancels the reference-triangle area factor of the disjoint
    rule), so the returned (npoints, npanels) matrix holds the plain panel
    integrals of the kernel field.
    """
    points = np.asarray(points, dtype=np.float64)
    nt = mesh.num_triangles
    npts = len(points)
    rule = build_rule("disjoint", order)
    oy, e1y, e2y, gy = chart_arrays(mesh, np.arange(nt))
    normals = mesh.normals if spec.needs_normal else None
    zero_edges = np.zeros((nt, 3))
    gx = np.full(nt, 2.0)  # cancels the reference-triangle area of the x half
    out = np.empty((npts, nt), dtype=np.complex128)
    for k in range(npts):
        ox = np.broadcast_to(points[k], (nt, 3))
        vals = pair_values(spec, ox, zero_edges, zero_edges, gx,
                           oy, e1y, e2y, gy, normals,
                           rule.x_points, rule.y_points, rule.weights)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"evaluation point {k} lies on the surface")
        out[k] = vals
    return out
