"""Batch driver: assemble, solve, verify, sweep.

Configuration comes from optional flat key=value files (--config) overridden
by command-line flags. Exit codes: 0 success, 1 verification failure,
2 configuration/usage error. Reports go to stdout; --csv writes the same
rows as RFC-4180 CSV, --log-events dumps one line per executed work list.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import h2, quadrature, scheduler, solver
from .cluster import build_block_tree, build_cluster_tree
from .gca import GcaParams, aca, build_interpolation_operators
from .kernels import KernelSpec
from .mesh import MeshError, build_sphere_mesh, read_mesh
from .scheduler import BATCH_BACKEND, SCALAR_BACKEND, SchedulerParams
from .solver import PipelineConfig

_TIMING_COLUMNS = ("setup_ops_seconds", "assemble_seconds", "solve_seconds",
                   "seconds_min", "seconds_avg", "seconds_max")


class CliConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "laplace-dirichlet"
    level: int = 2
    levels: list[int] = field(default_factory=list)
    mesh: str = ""
    function: str = "f1"
    disjoint_n: int = 3
    singular_n: int = 5
    maxsize_mb: float = 8.0
    workers: int = 2
    backends: str = "scalar,batch"
    delta: float = 1.0
    m: int = 6
    epsilon: float = 1e-4
    eta_adm: float = 2.0
    leaf_size: int = 16
    kappa: float = 3.0
    eta: float = 0.0  # 0 means "use kappa"
    repetitions: int = 1
    seed: int = 0
    csv: str = ""
    log_events: str = ""

    def validate(self) -> None:
        if self.problem not in ("laplace-dirichlet", "helmholtz-bw"):
            raise CliConfigError(f"unknown problem {self.problem!r}")
        if self.kappa < 0:
            raise CliConfigError("kappa must be >= 0")
        if self.problem == "helmholtz-bw" and self.effective_eta <= 0:
            raise CliConfigError("eta must be > 0")
        if self.repetitions < 1:
            raise CliConfigError("repetitions must be >= 1")
        if self.maxsize_mb * 2 ** 20 < scheduler.BYTES_PER_PAIR:
            raise CliConfigError("maxsize smaller than one pair record")
        if self.workers < 0:
            raise CliConfigError("workers must be >= 0")

    @property
    def effective_eta(self) -> float:
        return self.eta if self.eta > 0 else self.kappa

    def build_mesh(self, level: int | None = None):
        if self.mesh:
            return read_mesh(self.mesh)
        return build_sphere_mesh(self.level if level is None else level)

    def pipeline(self, epsilon: float | None = None) -> PipelineConfig:
        names = [s.strip() for s in self.backends.split(",") if s.strip()]
        table = {"scalar": SCALAR_BACKEND, "batch": BATCH_BACKEND}
        try:
            backends = tuple(table[n] for n in names)
        except KeyError as exc:
            raise CliConfigError(f"unknown backend {exc.args[0]!r}") from None
        if not backends:
            raise CliConfigError("no backends configured")
        sched = SchedulerParams(
            maxsize_bytes=int(self.maxsize_mb * 2 ** 20),
            workers_per_backend=self.workers,
            backends=backends)
        gca = GcaParams(delta=self.delta, m=self.m,
                        epsilon=self.epsilon if epsilon is None else epsilon,
                        rule_order=self.disjoint_n)
        return PipelineConfig(leaf_size=self.leaf_size, eta_adm=self.eta_adm,
                              orders=(self.disjoint_n, self.singular_n),
                              gca=gca, scheduler=sched)

    def epsilon_for_level(self, level: int, anchor: int = 2) -> float:
        # tighten the compression tolerance with each refinement step
        return self.epsilon * 0.25 ** max(0, level - anchor)


def load_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliConfigError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _coerce(cfg: RunConfig, key: str, raw: str):
    current = getattr(cfg, key)
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        return [int(v) for v in raw.replace(":", ",").split(",") if v]
    return raw


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, raw in load_config_file(args.config).items():
            if not hasattr(cfg, key):
                raise CliConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(cfg, key, raw))
    for key in vars(cfg):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    cfg.validate()
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--level", type=int, help="sphere refinement level")
    p.add_argument("--mesh", help="mesh file path (overrides --level)")
    p.add_argument("--orders", help="quadrature orders 'disjoint,singular'")
    p.add_argument("--maxsize-mb", dest="maxsize_mb", type=float,
                   help="work-list byte budget in MB")
    p.add_argument("--workers", type=int, help="worker threads per backend")
    p.add_argument("--backends", help="comma list from {scalar, batch}")
    p.add_argument("--delta", type=float, help="Green box enlargement factor")
    p.add_argument("--m", type=int, help="Gauss points per box-face axis")
    p.add_argument("--epsilon", type=float, help="cross approximation tolerance")
    p.add_argument("--eta-adm", dest="eta_adm", type=float,
                   help="admissibility parameter")
    p.add_argument("--leaf-size", dest="leaf_size", type=int)
    p.add_argument("--seed", type=int, help="seed for randomized checks")
    p.add_argument("--csv", help="write report rows to this CSV file")
    p.add_argument("--log-events", dest="log_events",
                   help="write one CSV line per executed work list")


def _apply_orders(args) -> None:
    if getattr(args, "orders", None):
        parts = args.orders.split(",")
        if len(parts) != 2:
            raise CliConfigError("--orders expects 'disjoint_n,singular_n'")
        args.disjoint_n = int(parts[0])
        args.singular_n = int(parts[1])


def write_csv(path: str, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def write_events(path: str, stats_list) -> None:
    rows = []
    for stats in stats_list:
        rows.extend(stats.event_rows())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "case", "items", "pairs", "bytes", "backend",
            "enqueue", "dequeue", "done"])
        writer.writeheader()
        writer.writerows(rows)


def print_table(rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0].keys())
    widths = {k: max(len(k), *(len(_fmt(r.get(k))) for r in rows)) for k in keys}
    print("  ".join(k.ljust(widths[k]) for k in keys))
    for r in rows:
        print("  ".join(_fmt(r.get(k)).ljust(widths[k]) for k in keys))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# commands

def cmd_assemble(cfg: RunConfig, operator: str = "both") -> tuple[list[dict], list]:
    mesh = cfg.build_mesh()
    config = cfg.pipeline()
    specs = {"slp": KernelSpec("laplace", "single"),
             "dlp": KernelSpec("laplace", "double")}
    if operator != "both":
        specs = {operator: specs[operator]}
    rows = []
    all_stats = []
    tree = build_cluster_tree(mesh, config.leaf_size)
    block_tree = build_block_tree(tree, tree, config.eta_adm)
    ops = None
    ops_seconds = []
    for name, spec in specs.items():
        assemble_seconds = []
        checksum = ""
        for _ in range(cfg.repetitions):
            t0 = time.monotonic()
            if ops is None:
                ops = build_interpolation_operators(
                    mesh, block_tree, KernelSpec("laplace", "single"), config.gca)
            t1 = time.monotonic()
            ops_seconds.append(t1 - t0)
            stats = scheduler.AssemblyStats()
            matrix = scheduler.run_assembly(mesh, block_tree, spec, ops[0], ops[1],
                                            config.scheduler, config.orders, stats)
            assemble_seconds.append(time.monotonic() - t1)
            all_stats.append(stats)
            checksum = matrix.checksum()
        rows.append({
            "operator": name, "dofs": mesh.num_triangles,
            "level": cfg.level if not cfg.mesh else -1,
            "ops_seconds": ops_seconds[0],
            "seconds_min": min(assemble_seconds),
            "seconds_avg": sum(assemble_seconds) / len(assemble_seconds),
            "seconds_max": max(assemble_seconds),
            "checksum": checksum[:16]})
    return rows, all_stats


def cmd_solve(cfg: RunConfig) -> tuple[list[dict], list]:
    levels = cfg.levels or [cfg.level]
    rows = []
    for level in levels:
        mesh = cfg.build_mesh(level)
        config = cfg.pipeline(epsilon=cfg.epsilon_for_level(level))
        if cfg.problem == "laplace-dirichlet":
            f, grad_f = solver.harmonic_test_functions()[cfg.function]
            _, _, info = solver.laplace_dirichlet_neumann(mesh, f, grad_f, config)
            err = info["l2_error"]
        else:
            kappa = cfg.kappa
            eta = cfg.effective_eta
            src = np.array([0.0, 0.0, 0.2])

            def f(x):
                r = np.linalg.norm(x - src, axis=1)
                return np.exp(1j * kappa * r) / r

            _, info = solver.helmholtz_bw_solve(mesh, kappa, eta, f, config)
            err = info["exterior_max_rel_error"]
        rows.append({
            "level": level, "dofs": info["dofs"],
            "setup_ops_seconds": info["setup_ops_seconds"],
            "assemble_seconds": info["assemble_seconds"],
            "solve_seconds": info["solve_seconds"],
            "iterations": info["iterations"],
            "l2_error": err})
    return rows, []


def cmd_verify(cfg: RunConfig) -> tuple[list[dict], list, bool]:
    """Invariant battery at desk scale; row per check with pass/fail."""
    rng = np.random.default_rng(cfg.seed)
    rows = []
    level = min(cfg.level, 3)
    mesh = cfg.build_mesh(level)
    config = cfg.pipeline()

    def record(name, ok, detail=""):
        rows.append({"check": name, "status": "pass" if ok else "FAIL",
                     "detail": detail})

    # quadrature exactness
    worst = 0.0
    for case in quadrature.CASES:
        for n in (2, 3, 5):
            rule = quadrature.build_rule(case, n)
            worst = max(worst, abs(float(np.sum(rule.weights)) - 0.25))
    record("quadrature-constant-exactness", worst <= 1e-13, f"max|err|={worst:.2e}")

    # ACA identities
    u = rng.standard_normal(40)
    v = rng.standard_normal(25)
    res = aca(np.outer(u, v), epsilon=1e-10)
    ok_rank1 = res.rank == 1
    tree = build_cluster_tree(mesh, config.leaf_size)
    block_tree = build_block_tree(tree, tree, config.eta_adm)
    ops, _ = build_interpolation_operators(
        mesh, block_tree, KernelSpec("laplace", "single"), config.gca)
    ident = 0.0
    for op in ops.values():
        k = op.rank
        ident = max(ident, float(np.max(np.abs(
            op.V[op.pivots_local, :] - np.eye(k)))))
    record("aca-rank1-and-pivot-identity", ok_rank1 and ident <= 1e-12,
           f"rank1={ok_rank1} max|V[tt]-I|={ident:.2e}")

    # dense vs compressed
    spec = KernelSpec("laplace", "single")
    stats = scheduler.AssemblyStats()
    matrix = scheduler.run_assembly(mesh, block_tree, spec, ops, ops,
                                    config.scheduler, config.orders, stats)
    G = h2.assemble_dense(mesh, spec, config.orders)
    rel = float(np.linalg.norm(G - h2.to_dense(matrix)) / np.linalg.norm(G))
    record("dense-vs-compressed", rel <= 1e-4, f"rel_frob={rel:.2e}")

    # scheduler determinism across workers and list sizes
    sums = []
    stats_list = [stats]
    for workers, maxbytes in ((0, 64 * 1024), (cfg.workers or 2, 8 * 2 ** 20)):
        params = SchedulerParams(maxsize_bytes=maxbytes,
                                 workers_per_backend=workers,
                                 backends=config.scheduler.backends)
        st = scheduler.AssemblyStats()
        m2 = scheduler.run_assembly(mesh, block_tree, spec, ops, ops,
                                    params, config.orders, st)
        stats_list.append(st)
        sums.append(m2.checksum())
    ok_det = all(s == sums[0] for s in sums) and matrix.checksum() == sums[0]
    record("scheduler-determinism", ok_det, f"checksum={sums[0][:16]}")
    print(f"checksum equality across (workers, maxsize) runs: {ok_det}")

    ok_all = all(r["status"] == "pass" for r in rows)
    return rows, stats_list, ok_all


def cmd_sweep(cfg: RunConfig, param: str, values: list[float]) -> tuple[list[dict], list, bool]:
    mesh = cfg.build_mesh()
    rows = []
    stats_list = []
    checksums = []
    tree = build_cluster_tree(mesh, cfg.leaf_size)
    block_tree = build_block_tree(tree, tree, cfg.eta_adm)
    config = cfg.pipeline()
    ops = build_interpolation_operators(
        mesh, block_tree, KernelSpec("laplace", "single"), config.gca)
    spec = KernelSpec("laplace", "single")
    for value in values:
        if param == "maxsize":
            params = SchedulerParams(maxsize_bytes=int(value * 2 ** 20),
                                     workers_per_backend=cfg.workers,
                                     backends=config.scheduler.backends)
        elif param == "workers":
            params = SchedulerParams(maxsize_bytes=int(cfg.maxsize_mb * 2 ** 20),
                                     workers_per_backend=int(value),
                                     backends=config.scheduler.backends)
        else:
            raise CliConfigError(f"unknown sweep parameter {param!r}")
        stats = scheduler.AssemblyStats()
        t0 = time.monotonic()
        matrix = scheduler.run_assembly(mesh, block_tree, spec, ops[0], ops[1],
                                        params, config.orders, stats)
        dt = time.monotonic() - t0
        checksum = matrix.checksum()
        checksums.append(checksum)
        stats_list.append(stats)
        rows.append({param: value, "dofs": mesh.num_triangles,
                     "assemble_seconds": dt,
                     "lists": stats.lists_executed,
                     "pairs": stats.pairs_executed,
                     "checksum": checksum[:16]})
    ok = all(c == checksums[0] for c in checksums)
    print(f"identical matrix checksums across sweep: {ok}")
    return rows, stats_list, ok


# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcabem",
        description="Galerkin BEM assembly and solves with GCA compression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="assemble boundary operators, report timings")
    _add_common(p)
    p.add_argument("--operator", choices=("slp", "dlp", "both"), default="both")
    p.add_argument("--repetitions", type=int, help="timing repetitions")

    p = sub.add_parser("solve", help="run a verification problem over levels")
    _add_common(p)
    p.add_argument("--problem", choices=("laplace-dirichlet", "helmholtz-bw"))
    p.add_argument("--levels", help="levels like 2:5 or 2,3,4")
    p.add_argument("--function", choices=("f1", "f2", "f3"))
    p.add_argument("--kappa", type=float, help="Helmholtz wave number")
    p.add_argument("--eta", type=float, help="combined-field coupling (default kappa)")

    p = sub.add_parser("verify", help="run the invariant battery, exit 1 on failure")
    _add_common(p)

    p = sub.add_parser("sweep", help="sweep maxsize or workers, check determinism")
    _add_common(p)
    p.add_argument("--param", choices=("maxsize", "workers"), default="maxsize")
    p.add_argument("--values", default="1,2,4,8,16",
                   help="comma-separated values (MB for maxsize)")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        _apply_orders(args)
        if getattr(args, "levels", None):
            if ":" in args.levels:
                lo, hi = args.levels.split(":")
                args.levels = list(range(int(lo), int(hi) + 1))
            else:
                args.levels = [int(v) for v in args.levels.split(",")]
        cfg = build_run_config(args)

        verified = True
        if args.command == "assemble":
            rows, stats = cmd_assemble(cfg, args.operator)
        elif args.command == "solve":
            rows, stats = cmd_solve(cfg)
        elif args.command == "verify":
            rows, stats, verified = cmd_verify(cfg)
        elif args.command == "sweep":
            values = [float(v) for v in args.values.split(",")]
            rows, stats, verified = cmd_sweep(cfg, args.param, values)
        else:  # pragma: no cover - argparse enforces the choices
            return 2

        print_table(rows)
        if cfg.csv:
            write_csv(cfg.csv, rows)
        if cfg.log_events:
            write_events(cfg.log_events, stats)
        return 0 if verified else 1
    except (CliConfigError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
