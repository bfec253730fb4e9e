"""Experiment driver: weak-scaling sweeps of the Schwarz-preconditioned CG solver."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .coarse import build_coarse_space
from .dgspace import build_dof_layout
from .krylov import pcg_solve, write_history
from .mesh import Mesh, build_face_topology, load_mesh
from .partition import build_partition
from .schwarz import MODES, build_preconditioner
from .sipg import assemble_system, build_benchmark_problem, oscillatory_initial_guess

log = logging.getLogger("dgschwarz")

PROBLEMS = ("laplace", "stripes")
CSV_HEADER = ["Th", "N", "Thi", "ThH", "p", "precond", "iter", "MFl", "Mcomm", "kappa", "seconds"]


class ConfigError(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _respect(text: str) -> tuple[bool, ...]:
    if text.strip().lower() == "both":
        return (True, False)
    return tuple(_bool(t) for t in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _strs(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _float_or_none(text: str):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "laplace"
    zeta: float = 1.0
    p: tuple[int, ...] = (1,)
    cw: float = 10.0
    mesh_n: tuple[int, ...] = (24, 32)
    mesh_file: str | None = None
    target: int = 100
    m: int = 1
    precond: tuple[str, ...] = ("additive", "hybrid")
    respect_materials: tuple[bool, ...] = (False,)
    tol: float | None = None
    seed: int = 0
    out: str = "results"
    histories: bool = False

    _parsers = {
        "problem": str.strip,
        "zeta": float,
        "p": _ints,
        "cw": float,
        "mesh_n": _ints,
        "mesh_file": lambda s: s.strip() or None,
        "target": int,
        "m": int,
        "precond": _strs,
        "respect_materials": _respect,
        "tol": _float_or_none,
        "seed": int,
        "out": str.strip,
        "histories": _bool,
    }

    def validate(self) -> ExperimentConfig:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if not self.zeta >= 1:
            raise ConfigError("zeta must be >= 1")
        if not self.p or any(not 1 <= q <= 6 for q in self.p):
            raise ConfigError("polynomial degrees must lie in 1..6")
        if not self.cw > 0:
            raise ConfigError("cw must be positive")
        if self.mesh_file is None and (not self.mesh_n or any(n < 1 for n in self.mesh_n)):
            raise ConfigError("mesh sizes must be positive")
        if self.target < 1 or self.m < 1:
            raise ConfigError("target and m must be >= 1")
        if not self.precond:
            raise ConfigError("preconditioner set is empty")
        bad = [q for q in self.precond if q not in MODES]
        if bad:
            raise ConfigError(f"unknown preconditioner(s) {bad}; choose from {MODES}")
        if not self.respect_materials:
            raise ConfigError("respect_materials needs at least one setting")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tol must be positive")
        return self

    def to_text(self) -> str:
        lines = ["# dgschwarz experiment configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x).lower() if isinstance(x, bool) else str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            elif v is None:
                v = "none" if f.name == "tol" else ""
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in cls._parsers:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = cls._parsers[key](val)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def tolerance(self) -> float:
        if self.tol is not None:
            return self.tol
        return build_benchmark_problem(self.problem, max(self.zeta, 1.0)).tol


@dataclass
class ResultRow:
    Th: int
    N: int
    Thi: int
    ThH: int
    p: int
    precond: str
    iter: int
    MFl: float
    Mcomm: float
    kappa: float
    seconds: float
    respect_materials: bool = field(default=False, compare=False)
    converged: bool = field(default=True, compare=False)
    N_S: int = field(default=0, compare=False)

    def csv_fields(self) -> list[str]:
        return [
            str(self.Th), str(self.N), str(self.Thi), str(self.ThH), str(self.p), self.precond,
            str(self.iter), repr(float(self.MFl)), repr(float(self.Mcomm)), repr(float(self.kappa)),
            f"{self.seconds:.3f}",
        ]


def subdomain_count(n_elements: int, target: int) -> int:
    return max(1, n_elements // target)


def _meshes(config: ExperimentConfig, problem):
    if config.mesh_file is not None:
        mesh = load_mesh(config.mesh_file)
        yield "file", problem.assign_materials(mesh) if problem.name == "stripes" and not mesh.material.any() else mesh
        return
    for n in config.mesh_n:
        yield n, problem.make_mesh(n)


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """One row per (respect setting, degree, mesh, preconditioner)."""
    config.validate()
    problem = build_benchmark_problem(config.problem, config.zeta, cw=config.cw)
    tol = config.tolerance()
    rows = []
    for respect in config.respect_materials:
        for p in config.p:
            for label, mesh in _meshes(config, problem):
                try:
                    rows.extend(_run_mesh(config, problem, mesh, p, respect, tol, label))
                except (ValueError, ArithmeticError) as exc:
                    raise type(exc)(f"[problem={config.problem} n={label} p={p} respect={respect}] {exc}") from exc
    return rows


def _run_mesh(config, problem, mesh: Mesh, p, respect, tol, label):
    t0 = time.perf_counter()
    faces = build_face_topology(mesh, problem.config.dirichlet_predicate)
    N = subdomain_count(mesh.n_triangles, config.target)
    part = build_partition(mesh, N, config.m, respect, config.seed, faces)
    space = build_dof_layout(mesh, p, part.subdomain_of, faces)
    system = assemble_system(mesh, space, problem.diffusion(mesh), problem.config, faces)
    coarse = build_coarse_space(mesh, space, part)
    x0 = oscillatory_initial_guess(space, mesh)
    setup = time.perf_counter() - t0
    log.info("n=%s p=%d: %d elements, N=%d, #T_H=%d, N_S=%d, %d dofs", label, p, mesh.n_triangles,
             part.N, part.n_coarse, part.N_S, space.n_dofs)
    rows = []
    for mode in config.precond:
        t1 = time.perf_counter()
        pc = build_preconditioner(space, part, system.A, mode, coarse)
        _, rep = pcg_solve(system.A, system.g, pc, x0, tol=tol)
        cost = pc.cost_report(rep.iterations)
        rep.Fl, rep.comm = cost.Fl, cost.comm
        seconds = setup + time.perf_counter() - t1
        if not rep.converged:
            log.warning("n=%s p=%d %s did not converge in %d iterations", label, p, mode, rep.iterations)
        crossing = rep.crossing(1e-6)
        log.info("  %-9s iter=%4d kappa~%.1f (r_rel<=1e-6 at %s)", mode, rep.iterations, rep.kappa_estimate, crossing)
        if config.histories:
            out = Path(config.out)
            out.mkdir(parents=True, exist_ok=True)
            tag = "resp" if respect else "nonresp"
            write_history(rep, out / f"history_{config.problem}_{tag}_n{label}_p{p}_{mode}.csv")
        rows.append(
            ResultRow(
                Th=mesh.n_triangles, N=part.N, Thi=mesh.n_triangles // part.N, ThH=part.n_coarse, p=p,
                precond=mode, iter=rep.iterations, MFl=cost.MFl, Mcomm=cost.Mcomm,
                kappa=rep.kappa_estimate, seconds=seconds, respect_materials=respect,
                converged=rep.converged, N_S=part.N_S,
            )
        )
    return rows


def emit_report(rows: list[ResultRow], fmt: str, path) -> None:
    """Write rows as CSV or as markdown tables (one block per preconditioner)."""
    if not rows:
        raise ConfigError("no rows to report")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow(r.csv_fields())
    elif fmt == "markdown":
        path.write_text(markdown_tables(rows))
    else:
        raise ConfigError(f"unknown report format {fmt!r}")


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header {header}")
        out = []
        for rec in reader:
            Th, N, Thi, ThH, p, pre, it, mfl, mcomm, kappa, sec = rec
            out.append(ResultRow(int(Th), int(N), int(Thi), int(ThH), int(p), pre, int(it), float(mfl),
                                 float(mcomm), float(kappa), float(sec)))
        return out


def markdown_tables(rows: list[ResultRow]) -> str:
    degrees = sorted({r.p for r in rows})
    blocks = []
    for respect in dict.fromkeys(r.respect_materials for r in rows):
        for mode in dict.fromkeys(r.precond for r in rows):
            sel = [r for r in rows if r.precond == mode and r.respect_materials == respect]
            title = f"### {mode}"
            if any(r.respect_materials for r in rows):
                title += " (respecting interfaces)" if respect else " (non-respecting interfaces)"
            head = "| #Th | N | #Thi | #ThH |" + "".join(f" iter (p={p}) | MFl | Mcomm |" for p in degrees)
            sep = "|" + "---:|" * (4 + 3 * len(degrees))
            lines = [title, "", head, sep]
            keys = dict.fromkeys((r.Th, r.N, r.Thi, r.ThH) for r in sel)
            for key in keys:
                cells = [str(k) for k in key]
                for p in degrees:
                    match = [r for r in sel if (r.Th, r.N, r.Thi, r.ThH) == key and r.p == p]
                    if match:
                        r = match[0]
                        cells += [f"**{r.iter}**", f"{r.MFl:.1f}", f"{r.Mcomm:.1f}"]
                    else:
                        cells += ["", "", ""]
                lines.append("| " + " | ".join(cells) + " |")
            blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dgschwarz",
        description="Weak-scaling experiments for additive and hybrid Schwarz preconditioned SIPG systems.",
    )
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--problem", choices=PROBLEMS)
    ap.add_argument("--p", help="polynomial degree(s), comma separated")
    ap.add_argument("--cw", type=float, help="penalty constant C_W")
    ap.add_argument("--zeta", type=float, help="diffusion contrast for the stripes problem")
    ap.add_argument("--mesh-n", help="uniform mesh sizes n (2 n^2 triangles), comma separated")
    ap.add_argument("--mesh-file", help="mesh in ndgdm text format (overrides --mesh-n)")
    ap.add_argument("--target", type=int, help="target elements per subdomain")
    ap.add_argument("--m", type=int, help="coarse elements per subdomain")
    ap.add_argument("--precond", help="comma separated subset of one_level,additive,hybrid")
    ap.add_argument("--respect-materials", help="true, false or both")
    ap.add_argument("--tol", type=float, help="relative preconditioned residual tolerance")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--format", choices=("csv", "markdown", "both"), default="both")
    ap.add_argument("--histories", action="store_true", help="write residual histories as CSV")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    parsers = ExperimentConfig._parsers
    over = {}
    for key in ("problem", "p", "mesh_n", "mesh_file", "precond", "respect_materials", "out"):
        val = getattr(args, key)
        if val is not None:
            over[key] = parsers[key](str(val))
    for key in ("cw", "zeta", "target", "m", "tol", "seed"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    if args.histories:
        over["histories"] = True
    return replace(cfg, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args).validate()
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        rows = run_experiment(cfg)
    except ArithmeticError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    stem = f"{cfg.problem}"
    if args.format in ("csv", "both"):
        groups = dict.fromkeys(r.respect_materials for r in rows)
        for respect in groups:
            suffix = "" if len(groups) == 1 else ("_respecting" if respect else "_nonrespecting")
            emit_report([r for r in rows if r.respect_materials == respect], "csv", out / f"{stem}{suffix}.csv")
    if args.format in ("markdown", "both"):
        emit_report(rows, "markdown", out / f"{stem}.md")
    print(markdown_tables(rows))
    failed = [r for r in rows if not r.converged]
    if failed:
        print(f"{len(failed)} run(s) did not converge", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
