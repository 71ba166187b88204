"""Command-line entry point: generate, verify, memstudy, bench-model, converge."""

from __future__ import annotations

import argparse
import csv
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .forms import FORMS, get_form, get_indexer, reference_apply
from .ir.count import count_flops, count_statements, table_bytes
from .ir.emit import emit_source
from .ir.kernel import OptimizationSet, OptionError
from .ir.passes import generate
from .mesh import SAWTOOTH_ORDER, load_mesh
from .perf.machine import load_machine

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

DEFAULT_PATHS = {
    "P1": ("", "S", "SV", "SVI", "SVIC", "SVICfQ", "SVICT"),
    "P2V": ("", "S", "SV", "SVU", "SVUI", "SVUIC", "SVUICT"),
    "N1": ("", "S", "SV", "SVI", "SVIC", "SVICT"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    form: str = "P1"
    opts: str = ""
    level: int = 2
    mesh: str = "cube6"
    machine: str | None = None
    out: Path = Path(".")

    def __post_init__(self):
        try:
            f = get_form(self.form)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        try:
            OptimizationSet.parse(self.opts).validate(f)
        except OptionError as e:
            raise ConfigError(str(e)) from None
        if self.level < 0:
            raise ConfigError("level must be non-negative")

    @property
    def weak_form(self):
        return get_form(self.form)

    @property
    def strategy(self) -> str:
        return OptimizationSet.parse(self.opts).strategy


def fmt(v) -> str:
    """Byte-stable CSV cell: integers verbatim, floats with 17 significant digits."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if v == int(v) and abs(v) < 2**53:
            return str(int(v))
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def parse_levels(text: str) -> list[int]:
    m = re.fullmatch(r"\s*(\d+)\s*(?:-|\.\.)\s*(\d+)\s*", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise ConfigError(f"empty level range {text!r}")
        return list(range(a, b + 1))
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse levels {text!r}; use e.g. 4-7 or 2,3,4") from None


_UNITS = {"": 1, "B": 1, "KIB": 1024, "MIB": 1024**2, "GIB": 1024**3, "KB": 1000, "MB": 1000**2, "GB": 1000**3}


def parse_capacity(text: str) -> float:
    t = text.strip()
    if t.lower() in ("inf", "infinity"):
        return math.inf
    m = re.fullmatch(r"(\d+(?:\.\d+)?)\s*([A-Za-z]*)", t)
    if not m or m.group(2).upper() not in _UNITS:
        raise ConfigError(f"cannot parse capacity {text!r}; use e.g. 256KiB, 2MiB or inf")
    return float(m.group(1)) * _UNITS[m.group(2).upper()]


def _base_opts(form_short: str) -> str:
    return "SVUI" if form_short == "P2V" else "SVI"


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: RunConfig) -> tuple[Path, Path]:
    f = cfg.weak_form
    k = generate(f, cfg.opts)
    fc = count_flops(k, cfg.level)
    src = cfg.out / f"{k.name}.c"
    src.parent.mkdir(parents=True, exist_ok=True)
    src.write_text(emit_source(k))
    header = ["form", "opts", "level"] + [f"flops_{o.name}" for o in SAWTOOTH_ORDER] + [
        "flops_per_element", "statements", "table_bytes"]
    row = [f.short, str(OptimizationSet.parse(cfg.opts)), cfg.level]
    row += [fc.per_orientation.get(o.name, 0) for o in SAWTOOTH_ORDER]
    row += [fc.per_element, count_statements(k), table_bytes(k)]
    summary = cfg.out / f"{k.name}.csv"
    write_csv(summary, header, [row])
    return src, summary


def verify_tolerance(form) -> float:
    return 1e-10 if len(form.coefficients) >= 2 else 1e-12


def cmd_verify(cfg: RunConfig, seed: int = 0, tables_hook: Callable | None = None,
               trace_path: Path | None = None) -> tuple[bool, float]:
    """Generated kernel against the oracle on random inputs; (passed, max relative difference)."""
    from .runtime.interpreter import run_kernel

    f = cfg.weak_form
    mesh = load_mesh(cfg.mesh)
    k = generate(f, cfg.opts)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(get_indexer(f.space, mesh, cfg.level).n_dofs)
    coeffs = {c: 1.0 + rng.random(get_indexer(s, mesh, cfg.level).n_dofs) for c, s in f.coefficients}
    if k.precompute == "apply":
        a = run_kernel(k.setup, mesh, cfg.level, dict(coeffs), tables_hook=tables_hook)
        inputs = {"v": v, "A": a}
    else:
        inputs = {"v": v, **coeffs}
    res = run_kernel(k, mesh, cfg.level, inputs, trace=trace_path is not None, tables_hook=tables_hook)
    if trace_path is not None:
        w, tr = res
        write_csv(trace_path, ["field", "address", "write"],
                  [[tr.field_names[i], a_, w_] for i, a_, w_ in zip(tr.field, tr.address, tr.write)])
    else:
        w = res
    ref = reference_apply(f, mesh, cfg.level, v, coeffs, rule=k.rule)
    scale = max(float(np.max(np.abs(ref))), 1e-300)
    diff = float(np.max(np.abs(w - ref))) / scale if len(ref) else 0.0
    return bool(diff <= verify_tolerance(f)) and bool(np.all(np.isfinite(w))), diff


MEMSTUDY_HEADER = ["level", "capacity", "M_lower", "M_upper", "M_lc_sawtooth", "M_lc_cubes",
                   "M_sim_sawtooth", "M_sim_cubes"]


def cmd_memstudy(cfg: RunConfig, levels: list[int], capacities: list[float]) -> list[list]:
    from .perf.memory import layer_condition_estimate, simulate_kernel

    f = cfg.weak_form
    mesh = load_mesh(cfg.mesh)
    base = OptimizationSet.parse(cfg.opts or _base_opts(f.short)).text().replace("C", "")
    rows = []
    for lv in levels:
        res = {}
        for strat, opts in (("sawtooth", base), ("cubes", "C" + base)):
            lc = layer_condition_estimate(strat, f, lv, capacities, mesh)
            sim = simulate_kernel(generate(f, opts), mesh, lv, capacities)
            res[strat] = (lc, sim)
        lc_s, sim_s = res["sawtooth"]
        lc_c, sim_c = res["cubes"]
        for cap in capacities:
            rows.append([lv, cap, lc_s.m_lower, lc_s.m_upper, lc_s.at(cap), lc_c.at(cap), sim_s[cap], sim_c[cap]])
    write_csv(cfg.out / f"memstudy_{f.short}.csv", MEMSTUDY_HEADER, rows)
    return rows


BENCH_HEADER = ["opts", "flops", "bytes_model", "AI", "predicted_flops", "predicted_dofs", "bound"]


def cmd_bench_model(cfg: RunConfig, path: list[str] | None = None, bytes_model: str = "lower",
                    capacity: float | None = None) -> list[list]:
    """Roofline rows for a sequence of optimization sets.

    ``bytes_model`` "lower" uses M_lower for every row; "sim" uses the
    simulated traffic at ``capacity`` (default: the L3 share of one core).
    """
    from .perf.memory import memory_bounds, simulate_kernel
    from .perf.roofline import default_variant, dof_throughput, roofline

    f = cfg.weak_form
    mesh = load_mesh(cfg.mesh)
    machine = load_machine(cfg.machine)
    path = list(path) if path is not None else list(DEFAULT_PATHS.get(f.short, ("",)))
    lower, _ = memory_bounds(f, mesh, cfg.level)
    n_dofs = get_indexer(f.space, mesh, cfg.level).n_dofs
    cap = capacity if capacity is not None else float(machine.l3_per_core)
    rows = []
    for opts in path:
        o = OptimizationSet.parse(opts)
        try:
            o.validate(f)
        except OptionError as e:
            raise ConfigError(str(e)) from None
        k = generate(f, o)
        flops = count_flops(k, cfg.level, mesh.n_macros).total
        if bytes_model == "lower":
            nbytes = lower
        elif bytes_model == "sim":
            nbytes = simulate_kernel(k, mesh, cfg.level, [cap])[cap]
        else:
            raise ConfigError(f"unknown bytes model {bytes_model!r}; expected lower or sim")
        est = roofline(machine, flops, nbytes, default_variant(o))
        rows.append([str(o), flops, nbytes, est.intensity, est.predicted_flops,
                     dof_throughput(est, flops / n_dofs), est.bound])
    write_csv(cfg.out / f"bench_{f.short}.csv", BENCH_HEADER, rows)
    return rows


CONVERGE_HEADER = ["level", "n_dofs", "iterations", "error", "ratio"]


def cmd_converge(cfg: RunConfig, levels: list[int]) -> list[list]:
    from .runtime.solver import convergence_study

    rows = [[r.level, r.n_dofs, r.iterations, r.error, r.ratio]
            for r in convergence_study(cfg.weak_form, levels, mesh=load_mesh(cfg.mesh), opts=cfg.opts or None)]
    write_csv(cfg.out / f"converge_{cfg.weak_form.short}.csv", CONVERGE_HEADER, rows)
    return rows


# ---------------------------------------------------------------- argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfgen", description="Matrix-free kernel generator and performance laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, level=2):
        sp.add_argument("--form", default="P1", help=f"weak form: {', '.join(FORMS)}")
        sp.add_argument("--opts", default="", help="optimization letters from S V I C U fQ T P, e.g. SVICT")
        sp.add_argument("--level", type=int, default=level, help="refinement level")
        sp.add_argument("--mesh", default="cube6", help="single-tet, cube6 or a mesh file")
        sp.add_argument("--machine", default=None, help="machine-model file (default: bundled)")
        sp.add_argument("--out", default=".", help="output directory")

    common(sub.add_parser("generate", help="emit kernel source and a summary CSV row"))
    v = sub.add_parser("verify", help="compare a generated kernel with the oracle")
    common(v)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trace", action="store_true", help="also write the access trace CSV")
    m = sub.add_parser("memstudy", help="memory corridor study")
    common(m)
    m.add_argument("--levels", default="4-7")
    m.add_argument("--capacity", action="append", default=None, help="cache capacity, repeatable (e.g. 2MiB)")
    b = sub.add_parser("bench-model", help="roofline rows along an optimization path")
    common(b, level=5)
    b.add_argument("--path", default=None, help="comma-separated optimization sets (default: the form's path)")
    b.add_argument("--bytes", dest="bytes_model", default="lower", choices=("lower", "sim"))
    b.add_argument("--capacity", action="append", default=None, help="capacity for --bytes sim")
    c = sub.add_parser("converge", help="manufactured-solution convergence")
    common(c)
    c.add_argument("--levels", default="2-4")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = RunConfig(args.form, args.opts, args.level, args.mesh, args.machine, Path(args.out))
        load_mesh(cfg.mesh)
        if args.machine is not None:
            load_machine(args.machine)
        if args.command == "generate":
            src, summary = cmd_generate(cfg)
            print(f"wrote {src} and {summary}")
            return EXIT_OK
        if args.command == "verify":
            trace = cfg.out / "trace.csv" if args.trace else None
            ok, diff = cmd_verify(cfg, args.seed, trace_path=trace)
            print(f"{cfg.weak_form.short} {OptimizationSet.parse(cfg.opts)} level {cfg.level}: "
                  f"max relative difference {diff:.3e} -> {'pass' if ok else 'FAIL'}")
            return EXIT_OK if ok else EXIT_FAIL
        if args.command == "memstudy":
            caps = [parse_capacity(c) for c in (args.capacity or ["256KiB", "2MiB", "16MiB"])]
            rows = cmd_memstudy(cfg, parse_levels(args.levels), caps)
            print(f"wrote {len(rows)} rows to {cfg.out / f'memstudy_{cfg.weak_form.short}.csv'}")
            return EXIT_OK
        if args.command == "bench-model":
            path = None if args.path is None else [s.strip() for s in args.path.split(",")]
            cap = parse_capacity(args.capacity[-1]) if args.capacity else None
            rows = cmd_bench_model(cfg, path, args.bytes_model, cap)
            print(f"wrote {len(rows)} rows to {cfg.out / f'bench_{cfg.weak_form.short}.csv'}")
            return EXIT_OK
        if args.command == "converge":
            rows = cmd_converge(cfg, parse_levels(args.levels))
            print(f"wrote {len(rows)} rows to {cfg.out / f'converge_{cfg.weak_form.short}.csv'}")
            return EXIT_OK
    except (ValueError, FileNotFoundError) as e:  # config errors, incl. option and machine errors
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
