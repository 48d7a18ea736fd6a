"""Command-line entry point: ``stochhom <subcommand> [options]``.

Exit codes: 0 success, 1 a verification reported failure, 2 configuration or
usage error, 3 inconsistent data or resume state, 4 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .cookbook import PLANS
from .ensemble import realize_field
from .estimator import energy_estimate
from .green import (
    annulus_gradient_norms,
    annulus_table_csv,
    pointwise_decay_probe,
)
from .grid import CoefficientField, centered_box, make_mask, save_binary, to_csv
from .sgcheck import battery_json, run_battery
from .solver import OperatorSpec, SolverError, solve_green_column, solve_modified_corrector
from .study import RUNNERS, ResumeError, default_workers

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3, 4


class RunManifest:
    """Index of everything a command wrote; saved atomically after all outputs."""

    def __init__(self, command: str, cfg, seed: int):
        self.command = command
        self.config = cfgmod.as_dict(cfg)
        self.seed = seed
        self.start = datetime.now(timezone.utc).isoformat()
        self.outputs: dict[str, str] = {}

    def add(self, name: str, description: str) -> None:
        if name in self.outputs:
            raise ValueError(f"output {name} listed twice")
        self.outputs[name] = description

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "master_seed": self.seed,
                "version": __version__, "start": self.start, "end": datetime.now(timezone.utc).isoformat(),
                "outputs": self.outputs}

    def write(self, out: Path) -> None:
        missing = [n for n in self.outputs if not (out / n).exists()]
        if missing:
            raise RuntimeError(f"manifest lists missing files: {missing}")
        tmp = out / "run_manifest.json.tmp"
        tmp.write_text(json.dumps(self.to_dict(), indent=2))
        os.replace(tmp, out / "run_manifest.json")


def _seed(cfg, args) -> int:
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise cfgmod.ConfigError("--seed must be an unsigned 64-bit integer")
        cfgmod.apply_overrides(cfg, [f"run.seed={args.seed}"])
    return cfgmod.get(cfg, "run", "seed", cfgmod.seed_value, 0)


def _box(cfg):
    d_h = float(cfgmod.require(cfg, "grid", "h"))
    radius = float(cfgmod.require(cfg, "grid", "radius"))
    return d_h, radius


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, default=float))


def cmd_sample(cfg, out: Path, args) -> int:
    seed = _seed(cfg, args)
    spec = cfgmod.ensemble_from_config(cfg)
    h, radius = _box(cfg)
    k = cfgmod.get(cfg, "run", "sample_index", int, 0)
    field_ = realize_field(spec, centered_box(radius, h, spec.dimension), h, k)
    man = RunManifest("sample", cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    save_binary(field_, out / "field.bin")
    man.add("field.bin", "coefficient field, binary grid dump")
    if cfgmod.get(cfg, "run", "csv", cfgmod.boolean, False):
        (out / "field.csv").write_text(to_csv(field_))
        man.add("field.csv", "coefficient field, CSV")
    _write_json(out / "field.json", {"digest": field_.digest(), "shape": list(field_.shape), "sample_index": k,
                                     "ensemble": spec.to_dict()})
    man.add("field.json", "field digest and metadata")
    man.write(out)
    return EXIT_OK


def _field_for(cfg, spec_dim_default: int = 2) -> CoefficientField:
    h, radius = _box(cfg)
    source = cfgmod.get(cfg, "solver", "field", str, "sample")
    if source == "constant":
        d = cfgmod.get(cfg, "ensemble", "dimension", int, spec_dim_default)
        tensor = cfgmod.get(cfg, "solver", "tensor", json.loads, None)
        tensor = np.eye(d) if tensor is None else np.asarray(tensor, dtype=float)
        return CoefficientField.constant(centered_box(radius, h, d), h, tensor)
    spec = cfgmod.ensemble_from_config(cfg)
    k = cfgmod.get(cfg, "run", "sample_index", int, 0)
    return realize_field(spec, centered_box(radius, h, spec.dimension), h, k)


def cmd_solve(cfg, out: Path, args) -> int:
    seed = _seed(cfg, args)
    T = float(cfgmod.require(cfg, "solver", "T"))
    if not T > 0:
        raise cfgmod.ConfigError("solver.T must be positive")
    tol = cfgmod.get(cfg, "solver", "tol", float, 1e-9)
    method = cfgmod.get(cfg, "solver", "method", str, "auto")
    field_ = _field_for(cfg)
    d = field_.dimension
    xi = cfgmod.get(cfg, "solver", "xi", cfgmod.floats, tuple(1.0 if i == 0 else 0.0 for i in range(d)))
    op = OperatorSpec(field_, T, averaging=cfgmod.get(cfg, "solver", "averaging", str, "harmonic"))
    sol = solve_modified_corrector(op, xi, tol, method)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("solve", cfg, seed)
    save_binary(sol.phi, out / "phi.bin")
    man.add("phi.bin", "modified corrector, binary grid dump")
    diag = {"T": T, "tol": tol, "residual": sol.residual_norm, "iterations": sol.iterations, "method": sol.method,
            "energy_defect": sol.energy_defect, "max_abs_phi": float(np.max(np.abs(sol.phi.values))),
            "field_digest": field_.digest()}
    L = cfgmod.get(cfg, "solver", "L", float)
    if L is not None:
        est = energy_estimate(sol, sol if field_.is_symmetric() else solve_modified_corrector(op.adjoint(), xi, tol, method),
                              make_mask(field_.box, field_.spacing, L), strict=False)
        diag["estimate"] = {"L": L, "value_with_zero_order": est.value_with_zero_order,
                            "value_without_zero_order": est.value_without_zero_order,
                            "zero_order_part": est.zero_order_part}
    _write_json(out / "diagnostics.json", diag)
    man.add("diagnostics.json", "solver diagnostics")
    man.write(out)
    return EXIT_OK


def cmd_study(cfg, out: Path, args) -> int:
    seed = _seed(cfg, args)
    if args.preset:
        if args.preset not in PLANS:
            raise cfgmod.ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PLANS)}")
        plan = PLANS[args.preset]()
        if args.seed is not None:
            plan = dataclasses.replace(plan, seed=seed)
        if plan.kind != args.kind:
            raise cfgmod.ConfigError(f"preset {args.preset!r} is a {plan.kind} study")
    else:
        plan = cfgmod.plan_from_config(cfg, args.kind)
    workers = args.workers if args.workers is not None else default_workers()
    record = RUNNERS[args.kind](plan, out=out, workers=workers,
                                progress=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    man = RunManifest(f"study {args.kind}", cfgmod.plan_to_config(plan), plan.seed)
    for name, desc in (("manifest.json", "study plan, environment and completed cells"),
                       ("samples.csv", "per-sample estimates"), ("summary.json", "per-cell statistics and verdicts"),
                       ("slopes.csv", "fitted slopes")):
        man.add(name, desc)
    man.write(out)
    return EXIT_SOLVER if record.failures else EXIT_OK


def cmd_green(cfg, out: Path, args) -> int:
    seed = _seed(cfg, args)
    T = cfgmod.get(cfg, "green", "T", float, 1e4)
    h = cfgmod.get(cfg, "green", "h", float, 0.5)
    radius = cfgmod.get(cfg, "green", "radius", float, 64.0)
    d = cfgmod.get(cfg, "green", "dimension", int, 2)
    radii = cfgmod.get(cfg, "green", "radii", cfgmod.floats, (2.0, 4.0, 8.0, 16.0, 32.0))
    p_sweep = cfgmod.get(cfg, "green", "p_sweep", cfgmod.floats, (1.0, 1.5, 2.0))
    decay_radii = cfgmod.get(cfg, "green", "decay_radii", cfgmod.floats, None)
    if not T > 0:
        raise cfgmod.ConfigError("green.T must be positive")
    if cfgmod.get(cfg, "green", "field", str, "constant") == "constant":
        field_ = CoefficientField.constant(centered_box(radius, h, d), h, np.eye(d))
    else:
        spec = cfgmod.ensemble_from_config(cfg)
        field_ = realize_field(spec, centered_box(radius, h, spec.dimension), h,
                               cfgmod.get(cfg, "run", "sample_index", int, 0))
    G = solve_green_column(OperatorSpec(field_, T), tol=cfgmod.get(cfg, "solver", "tol", float, 1e-10))
    report = annulus_gradient_norms(G, radii, p_sweep)
    report.T = T
    if decay_radii is None:
        s = np.sqrt(T)
        decay_radii = tuple(r for r in (s, 1.5 * s, 2 * s, 2.5 * s) if 2 * r <= radius)
    if len(decay_radii) >= 4:
        decay = pointwise_decay_probe(G, T, decay_radii)
        report.extra["pointwise"] = {"radii": decay.radii, "maxima": decay.pointwise_max_per_annulus,
                                     "rate": decay.fitted_exponential_rate, "c_hat": decay.c_hat,
                                     "pass_flags": decay.pass_flags}
        report.fitted_exponential_rate = decay.fitted_exponential_rate
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("green", cfg, seed)
    (out / "green_report.json").write_text(report.to_json())
    man.add("green_report.json", "Green probe report")
    (out / "annulus.csv").write_text(annulus_table_csv(report))
    man.add("annulus.csv", "annulus gradient norms")
    save_binary(G, out / "green.bin")
    man.add("green.bin", "Green column, binary grid dump")
    man.write(out)
    return EXIT_OK if report.pass_flags.get("pass") else EXIT_FAILED


def cmd_sgcheck(cfg, out: Path, args) -> int:
    seed = _seed(cfg, args)
    radius = cfgmod.get(cfg, "sgcheck", "radius", float, 0.5)
    qs = tuple(int(q) for q in cfgmod.get(cfg, "sgcheck", "q_values", cfgmod.floats, (1.0, 2.0)))
    rho = cfgmod.get(cfg, "sgcheck", "rho", float, 1.0)
    report = run_battery(radius, qs, rho)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("sgcheck", cfg, seed)
    (out / "sgcheck.json").write_text(battery_json(report))
    man.add("sgcheck.json", "battery definitions and verdicts")
    man.write(out)
    return EXIT_OK if report["all_passed"] else EXIT_FAILED


COMMANDS = {"sample": cmd_sample, "solve": cmd_solve, "study": cmd_study, "green": cmd_green,
            "sgcheck": cmd_sgcheck}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key = value configuration file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="worker processes (default: $HOMOG_WORKERS or 1)")
    common.add_argument("--override", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override a config entry, e.g. grid.h=0.5 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="stochhom", parents=[common],
                                     description="Massive-corrector homogenization experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="{sample,solve,study,green,sgcheck}")
    sub.add_parser("sample", parents=[common], help="realise a coefficient field")
    sub.add_parser("solve", parents=[common], help="solve the modified corrector on one field")
    st = sub.add_parser("study", parents=[common], help="run or resume a scaling study")
    st.add_argument("kind", choices=sorted(RUNNERS))
    st.add_argument("--preset", default=None, help=f"use a built-in plan: {', '.join(sorted(PLANS))}")
    sub.add_parser("green", parents=[common], help="Green function decay probes")
    sub.add_parser("sgcheck", parents=[common], help="exact spectral gap battery")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    for name, default in (("out", "out"), ("seed", None), ("workers", None), ("override", []),
                          ("verbose", False), ("preset", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        cfg = cfgmod.load_config(args.config, args.override)
        return COMMANDS[args.command](cfg, Path(args.out), args)
    except cfgmod.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResumeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
