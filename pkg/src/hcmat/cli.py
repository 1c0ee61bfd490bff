"""Command-line front end: H-matrix benchmarks, width studies and norm checks.

Every subcommand writes CSV only.  The main CSV starts with ``#`` lines
holding the code version and the full configuration (including the command
line that reproduces it) and is byte-identical across reruns and worker
counts; wall-clock timings go to a separate ``*_timing.csv`` file.
"""
from __future__ import annotations

import argparse
import csv
import io
import shlex
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import hmatrix as hm
from .cluster import mesh_partition
from .errors import ConfigError
from .fluxnorm import (FluxContext, SubdomainPair, caccioppoli_sup, example_geometry,
                       flux_norm, h1_norm, interior_recovery_ratio,
                       norm_equivalence_constants, weighted_poincare_constant)
from .geometry_fem import (DEFAULT_RADIUS_RANGE, Mesh, assemble_stiffness, constant_field,
                           read_config, sample_inclusions)
from .kwidth import (GEOMETRIES, contrast_field, greens_block_widths, harmonic_basis,
                     pick_block, rank_at_tolerance, standard_geometry, width_study)
from .rng import PhiloxStream

SUBCOMMANDS = ("bench-inverse", "bench-lu", "study-kwidth", "study-greens-rank",
               "verify-norms", "dump-partition")

# m and eps defaults depend on the subcommand
DEFAULT_M = {"bench-inverse": 129, "bench-lu": 129, "study-kwidth": 32,
             "study-greens-rank": 33, "verify-norms": 32, "dump-partition": 33}
DEFAULT_EPS = {"bench-inverse": 1e-3, "bench-lu": 1e-3, "study-kwidth": 1e-4,
               "study-greens-rank": 1e-3, "verify-norms": 1e-3, "dump-partition": 1e-3}
DEFAULT_CONTRASTS = {"study-kwidth": (1.0, 1e2, 1e4, 1e6), "study-greens-rank": (1.0, 1e4),
                     "verify-norms": (1.0, 1e2, 1e4, 1e6)}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


@dataclass
class RunConfig:
    subcommand: str
    dim: int = 2
    m: int | None = None
    eta: float = 2.0
    eps: float | None = None
    n_min: int = 32
    inclusions: int = 10
    amplitude: float = 1.0
    seed: int = 0
    radius_min: float = DEFAULT_RADIUS_RANGE[0]
    radius_max: float = DEFAULT_RADIUS_RANGE[1]
    out: str = "out.csv"
    grid_r: tuple = ()
    grid_M: tuple = ()
    contrasts: tuple = ()
    control: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.m is None:
            self.m = DEFAULT_M.get(self.subcommand, 32)
        if self.eps is None:
            self.eps = DEFAULT_EPS.get(self.subcommand, 1e-3)
        if not self.contrasts:
            self.contrasts = DEFAULT_CONTRASTS.get(self.subcommand, ())
        if not self.grid_r:
            self.grid_r = (self.inclusions,)
        if not self.grid_M:
            self.grid_M = (self.amplitude,)
        self.grid_r = tuple(int(r) for r in self.grid_r)
        self.grid_M = tuple(float(M) for M in self.grid_M)
        self.contrasts = tuple(float(k) for k in self.contrasts)

    def validate(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not 0 < self.eps < 1:
            raise ConfigError(f"eps must lie in (0, 1), got {self.eps}")
        if self.n_min < 1:
            raise ConfigError(f"n_min must be >= 1, got {self.n_min}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not 0 < self.radius_min <= self.radius_max < 0.5:
            raise ConfigError("radius bounds must satisfy 0 < min <= max < 0.5")
        if any(r < 0 for r in self.grid_r):
            raise ConfigError("inclusion counts must be >= 0")
        if any(not M >= 1 for M in self.grid_M):
            raise ConfigError("amplitudes M must be >= 1")
        if any(not k >= 1 for k in self.contrasts):
            raise ConfigError("contrasts must be >= 1")
        if self.subcommand in ("study-kwidth", "verify-norms", "study-greens-rank") and self.dim != 2:
            raise ConfigError(f"{self.subcommand} supports dim=2 only")
        if self.subcommand == "study-greens-rank" and (self.m - 1) ** self.dim > 8192:
            raise ConfigError("study-greens-rank densifies the inverse; need n <= 8192")
        return self

    def command_line(self) -> str:
        """Arguments reproducing the rows (worker count and output path omitted)."""
        args = ["hcmat", self.subcommand, "--dim", str(self.dim), "--m", str(self.m),
                "--eta", repr(self.eta), "--eps", repr(self.eps), "--nmin", str(self.n_min),
                "--seed", str(self.seed), "--radius-min", repr(self.radius_min),
                "--radius-max", repr(self.radius_max),
                "--grid", ",".join(map(str, self.grid_r)) + ":" + ",".join(map(repr, self.grid_M))]
        if self.contrasts:
            args += ["--contrasts", ",".join(map(repr, self.contrasts))]
        if self.control:
            args.append("--control")
        return " ".join(shlex.quote(a) for a in args)

    def header(self) -> list:
        lines = [f"hcmat {__version__}", f"command: {self.command_line()}"]
        for f in fields(self):
            if f.name not in ("threads", "out"):
                lines.append(f"{f.name} = {getattr(self, f.name)}")
        return lines


@dataclass
class BenchRecord:
    n: int
    r: int
    M: float
    eps: float
    eta: float
    n_min: int
    seed: int
    storage_kb_per_dof: float
    build_seconds: float
    max_block_rank: int
    residual_check: float
    kind: str = "inverse"
    status: str = "ok"
    flags: str = ""

    def ok(self) -> bool:
        return self.status == "ok"


RECORD_COLUMNS = ["kind", "n", "r", "M", "eps", "eta", "n_min", "seed", "storage_kb_per_dof",
                  "max_block_rank", "residual_check", "status", "flags"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


# -- benchmark cells ----------------------------------------------------------

def _coefficient(cfg: RunConfig, r: int, M: float):
    if r == 0:
        return constant_field(cfg.dim, 1.0)
    return sample_inclusions(r, M, cfg.seed, (cfg.radius_min, cfg.radius_max), dim=cfg.dim)


def bench_cell(cfg: RunConfig, r: int, M: float, kind: str) -> BenchRecord:
    """Assemble, cluster and factor one (r, M) cell; failures are recorded, not raised."""
    mesh = Mesh(cfg.dim, cfg.m)
    S = assemble_stiffness(mesh, _coefficient(cfg, r, M))
    n = S.shape[0]
    rec = BenchRecord(n, r, M, cfg.eps, cfg.eta, cfg.n_min, cfg.seed, float("nan"),
                      float("nan"), -1, float("nan"), kind)
    x = PhiloxStream(cfg.seed).uniform(n) - 0.5
    b = S @ x
    t0 = time.perf_counter()
    try:
        H = hm.from_sparse(S, mesh_partition(mesh, cfg.eta, cfg.n_min))
        if kind == "inverse":
            F = hm.hinvert(H, cfg.eps, symmetric=True)
            y = F @ b
        else:
            F = hm.hlu(H, cfg.eps, symmetric=True)
            y = F.solve(b)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        rec.build_seconds = time.perf_counter() - t0
        rec.status = f"failed: {exc}".replace(",", ";").replace("\n", " ")
        return rec
    rec.build_seconds = time.perf_counter() - t0
    rec.storage_kb_per_dof = F.storage_kb_per_dof()
    rec.max_block_rank = F.max_rank()
    if kind == "inverse":
        rec.residual_check = float(np.linalg.norm(y - x) / np.linalg.norm(x))
    else:
        rec.residual_check = float(np.linalg.norm(S @ y - b) / np.linalg.norm(b))
        flags = []
        if rec.residual_check > 100 * cfg.eps:
            flags.append("residual>100eps")
        # the factors are expected to need no more storage than the inverse
        try:
            inv_kb = hm.hinvert(H, cfg.eps, symmetric=True).storage_kb_per_dof()
        except (ArithmeticError, np.linalg.LinAlgError):
            inv_kb = None
        if inv_kb is not None and rec.storage_kb_per_dof > inv_kb:
            flags.append("storage>inverse")
        rec.flags = ";".join(flags)
    if not np.isfinite(rec.residual_check):
        rec.status = "failed: non-finite residual"
    return rec


def _call(job):
    fn, args = job
    return fn(*args)


def run_cells(fn, cells, threads=1) -> list:
    """Evaluate ``fn(*cell)`` for every cell; results come back in cell order."""
    jobs = [(fn, c) for c in cells]
    if threads <= 1 or len(jobs) <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_call, jobs))


def _bench_grid(cfg: RunConfig):
    cells = [(r, M) for r in cfg.grid_r for M in cfg.grid_M]
    if cfg.control and (0, 1.0) not in cells:
        cells.insert(0, (0, 1.0))
    return cells


def bench_inverse(cfg: RunConfig) -> list:
    cfg.validate()
    return run_cells(bench_cell, [(cfg, r, M, "inverse") for r, M in _bench_grid(cfg)],
                     cfg.threads)


def bench_lu(cfg: RunConfig) -> list:
    cfg.validate()
    return run_cells(bench_cell, [(cfg, r, M, "lu") for r, M in _bench_grid(cfg)], cfg.threads)


def _write_csv(path: Path, header_lines, columns, rows):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")


def pivot_table(records) -> tuple:
    """Storage per dof arranged as rows r, columns M (first-seen order)."""
    rs, Ms = [], []
    for rec in records:
        if rec.r not in rs:
            rs.append(rec.r)
        if rec.M not in Ms:
            Ms.append(rec.M)
    table = np.full((len(rs), len(Ms)), np.nan)
    for rec in records:
        table[rs.index(rec.r), Ms.index(rec.M)] = rec.storage_kb_per_dof
    return rs, Ms, table


def emit_report(records, path, cfg: RunConfig | None = None) -> dict:
    """Write the record CSV, the r x M pivot CSV and the timing sidecar.

    Returns a dict with the three paths under ``records``, ``pivot`` and ``timing``.
    """
    if not records:
        raise ConfigError("no records to report")
    path = Path(path)
    header = cfg.header() if cfg is not None else [f"hcmat {__version__}"]
    rows = [[getattr(rec, c) for c in RECORD_COLUMNS] for rec in records]
    out = {"records": _write_csv(path, header, RECORD_COLUMNS, rows)}
    rs, Ms, table = pivot_table(records)
    prow = [[r] + list(table[i]) for i, r in enumerate(rs)]
    out["pivot"] = _write_csv(_sibling(path, "pivot"), header + ["storage per dof in kB"],
                              ["r\\M"] + [_fmt(M) for M in Ms], prow)
    trow = [[rec.kind, rec.r, rec.M, f"{rec.build_seconds:.3f}"] for rec in records]
    out["timing"] = _write_csv(_sibling(path, "timing"), [], ["kind", "r", "M", "build_seconds"],
                               trow)
    return out


# -- studies --------------------------------------------------------------------

def kwidth_cell(m: int, geometry: str, kappa: float):
    mesh = Mesh(2, m)
    return width_study(mesh, contrast_field(mesh, kappa), geometry, kappa)


def study_kwidth(cfg: RunConfig):
    """Width curves on G1/G2 per contrast; returns (width rows, rank rows)."""
    cfg.validate()
    cells = [(cfg.m, g, k) for g in GEOMETRIES for k in cfg.contrasts]
    results = run_cells(kwidth_cell, cells, cfg.threads)
    widths, ranks = [], []
    for (_, g, k), res in zip(cells, results):
        for norm in ("flux", "l2"):
            curve = res[norm]
            for j, s in enumerate(curve.normalized(), 1):
                widths.append([g, k, norm, j, float(s)])
            ranks.append([g, k, norm, cfg.eps, rank_at_tolerance(curve, cfg.eps)])
    return widths, ranks


def greens_cell(m: int, eta: float, n_min: int, kappa: float, weighting: str):
    mesh = Mesh(2, m)
    part = mesh_partition(mesh, eta, n_min)
    block = pick_block(part)
    curve = greens_block_widths(mesh, contrast_field(mesh, kappa), block, weighting, part,
                                eta, n_min, kappa)
    return part.leaves.index(block), curve


def study_greens_rank(cfg: RunConfig):
    cfg.validate()
    cells = [(cfg.m, cfg.eta, cfg.n_min, k, w) for k in cfg.contrasts
             for w in ("none", "l2", "flux")]
    rows = []
    for (_, _, _, k, w), (bid, curve) in zip(cells, run_cells(greens_cell, cells, cfg.threads)):
        info = curve.info
        rows.append([bid, info["block_rows"], info["block_cols"], info["admissible"], k, w,
                     cfg.eps, rank_at_tolerance(curve, cfg.eps)])
    return rows


def _check_row(name, geometry, contrast, value, bound, passed):
    return [name, geometry, contrast, float(value), "" if bound is None else float(bound),
            int(bool(passed))]


def verify_cell(m: int, check: str, geometry: str, kappa: float, seed: int):
    if check == "poincare":
        mesh, K, alpha = example_geometry(96, kappa)
        value = weighted_poincare_constant(mesh, K, alpha)
        bound = 0.9 / np.sqrt(3 * kappa)
        return _check_row(check, "example", kappa, value, bound, value >= bound)
    mesh = Mesh(2, m)
    D, K = standard_geometry(mesh, geometry)
    ctx = FluxContext(SubdomainPair(mesh, D, K), contrast_field(mesh, kappa))
    if check == "caccioppoli":
        value = caccioppoli_sup(ctx, harmonic_basis(ctx))
        bound = 1 + 10 * mesh.h
        return _check_row(check, geometry, kappa, value, bound, value <= bound)
    if check == "identity_collapse":
        ctx1 = FluxContext(ctx.pair, None)
        V = PhiloxStream(seed).normal(ctx1.size * 20).reshape(20, ctx1.size)
        dev = max(abs(flux_norm(ctx1, v, "K") - h1_norm(ctx1, v, "K")) / h1_norm(ctx1, v, "K")
                  for v in V)
        return _check_row(check, geometry, 1.0, dev, 1e-12, dev <= 1e-12)
    if check == "norm_equivalence_c1":
        c1, _ = norm_equivalence_constants(ctx, 100, seed)
        return _check_row(check, geometry, kappa, c1, None, np.isfinite(c1))
    if check == "interior_recovery":
        value = interior_recovery_ratio(ctx)
        return _check_row(check, geometry, kappa, value, None, np.isfinite(value))
    raise ConfigError(f"unknown check {check!r}")


def verify_norms(cfg: RunConfig):
    cfg.validate()
    cells = [(cfg.m, "caccioppoli", g, k, cfg.seed) for g in GEOMETRIES for k in cfg.contrasts]
    cells += [(cfg.m, "identity_collapse", g, 1.0, cfg.seed) for g in GEOMETRIES]
    cells += [(cfg.m, "norm_equivalence_c1", "G1", k, cfg.seed) for k in cfg.contrasts]
    cells += [(cfg.m, "interior_recovery", g, 1.0, cfg.seed) for g in GEOMETRIES]
    cells += [(cfg.m, "poincare", "example", d, cfg.seed) for d in (1e-2, 1e-3, 1e-4)]
    return run_cells(verify_cell, cells, cfg.threads)


# -- command line ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _grid(text):
    """``R_LIST:M_LIST`` such as ``1,10,100:1,100,10000``."""
    if ":" not in text:
        raise argparse.ArgumentTypeError("grid must look like '1,10,100:1,100,10000'")
    rs, Ms = text.split(":", 1)
    try:
        return tuple(int(r) for r in rs.split(",") if r.strip()), _floats(Ms)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad inclusion counts in {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hcmat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hcmat {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        q = sub.add_parser(name)
        q.add_argument("--config", help="flat key = value file with mesh/field settings")
        q.add_argument("--dim", type=int)
        q.add_argument("--m", type=int, help="elements per axis")
        q.add_argument("--eta", type=float)
        q.add_argument("--eps", type=float)
        q.add_argument("--nmin", type=int, dest="n_min")
        q.add_argument("--inclusions", type=int)
        q.add_argument("--amplitude", type=float)
        q.add_argument("--seed", type=int)
        q.add_argument("--radius-min", type=float, dest="radius_min")
        q.add_argument("--radius-max", type=float, dest="radius_max")
        q.add_argument("--grid", type=_grid, help="inclusion counts and amplitudes, R:M")
        q.add_argument("--contrasts", type=_floats)
        q.add_argument("--control", action="store_true", help="add an r=0 control row")
        q.add_argument("--out", default=f"{name}.csv")
        q.add_argument("--threads", type=int, default=1)
    return p


def config_from_args(ns) -> RunConfig:
    kw = {}
    if ns.config:
        try:
            kw.update(read_config(ns.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        kw.pop("alpha_floor", None)
    for f in fields(RunConfig):
        v = getattr(ns, f.name, None)
        if v is not None and f.name not in ("grid_r", "grid_M"):
            kw[f.name] = v
    if ns.grid is not None:
        kw["grid_r"], kw["grid_M"] = ns.grid
    kw["control"] = bool(ns.control)
    return RunConfig(**kw).validate()


def run(cfg: RunConfig) -> int:
    """Execute one configured subcommand; returns the process exit code."""
    out = Path(cfg.out)
    header = cfg.header()
    if cfg.subcommand in ("bench-inverse", "bench-lu"):
        records = bench_inverse(cfg) if cfg.subcommand == "bench-inverse" else bench_lu(cfg)
        emit_report(records, out, cfg)
        return EXIT_OK if all(r.ok() for r in records) else EXIT_NUMERIC
    if cfg.subcommand == "study-kwidth":
        widths, ranks = study_kwidth(cfg)
        _write_csv(out, header, ["geometry", "contrast", "norm", "k", "sigma_k"], widths)
        _write_csv(_sibling(out, "ranks"), header, ["geometry", "contrast", "norm", "eps", "rank"],
                   ranks)
    elif cfg.subcommand == "study-greens-rank":
        rows = study_greens_rank(cfg)
        _write_csv(out, header, ["block_id", "rows", "cols", "admissible", "contrast", "norm",
                                 "eps", "rank"], rows)
    elif cfg.subcommand == "verify-norms":
        rows = verify_norms(cfg)
        _write_csv(out, header, ["check", "geometry", "contrast", "value", "bound", "pass"], rows)
    elif cfg.subcommand == "dump-partition":
        cfg.validate()
        part = mesh_partition(Mesh(cfg.dim, cfg.m), cfg.eta, cfg.n_min)
        buf = out.with_suffix(".tmp")
        part.dump_csv(buf)
        body = buf.read_text()
        buf.unlink()
        out.write_text("".join(f"# {line}\n" for line in header) + body)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return run(cfg)
    except ConfigError as exc:
        print(f"hcmat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"hcmat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
