"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 invalid config or arguments,
3 the problem exceeds the unknown budget.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import CHECKS, ConfigError, load_raw, validate
from .operators_3d import BudgetExceeded

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3

# subcommand -> checks it enables (all others are skipped)
CHECK_COMMANDS = {"sandwich": ("sandwich",), "lifshits": ("lifshits",), "bottom": ("bottom",)}


def _load(args, checks=None):
    """Read the config file, apply command-line overrides, then validate."""
    raw = load_raw(args.config)
    if not isinstance(raw, dict):
        raise ConfigError(args.config, "expected a mapping at the top level")
    for name in ("seed", "reps", "workers", "output_dir", "dof_cap", "c_slack", "delta"):
        val = getattr(args, name, None)
        if val is not None:
            raw[name] = val
    for name in ("ell", "h_s"):
        val = getattr(args, name, None)
        if val is not None:
            raw.setdefault("grids", {})[name] = val
    if getattr(args, "eps", None):
        raw["epsilons"] = list(args.eps)
    if checks is not None:
        raw["checks"] = {name: name in checks for name in CHECKS}
    return validate(raw)


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"wrote {path}")


def cmd_run(args, only=None):
    from .pipeline import run_experiment

    cfg = _load(args, checks=only)
    manifest, _ = run_experiment(cfg)
    for name, status in sorted(manifest.checks.items()):
        print(f"{name:10s} {status}")
    for note in manifest.notes:
        print(f"note: {note}")
    print(f"artifacts in {cfg.output_dir}")
    return manifest.exit_code


def cmd_cross_section(args):
    from .cross_section import solve_transverse
    from .pipeline import dumps

    cfg = _load(args)
    spec = solve_transverse(cfg.make_cross_section(), args.modes)
    text = dumps(spec.to_dict(include_phi=args.include_phi))
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ids1d(args):
    from .cross_section import solve_transverse
    from .operators_1d import ids_1d

    cfg = _load(args)
    T = solve_transverse(cfg.make_cross_section()).coupling_T
    profile, law = cfg.make_profile(), cfg.make_law()
    out = Path(args.out or cfg.output_dir)
    for eps in cfg.epsilons:
        curve = ids_1d(profile, law, T, eps, cfg.ell, cfg.h_s, cfg.energy_grid, cfg.reps, cfg.seed,
                       bc=args.bc, workers=cfg.workers, tail_tol=cfg.tail_tol)
        _write(out / f"ids1d_eps_{float(eps):.6g}.csv", curve.csv_text())
    return EXIT_OK


def cmd_ids3d(args):
    from .cross_section import solve_transverse
    from .disorder import sample_twist
    from .operators_3d import assemble_3d, ids_3d
    from .pipeline import _check_dof

    cfg = _load(args)
    cs = cfg.make_cross_section()
    spec = solve_transverse(cs)
    _check_dof(spec.grid.size, cfg.ell, cfg.h_s, cfg.dof_cap, "3D operator")
    profile, law = cfg.make_profile(), cfg.make_law()
    out = Path(args.out or cfg.output_dir)
    curve = ids_3d(cs, profile, law, cfg.ell, cfg.h_s, cfg.energy_grid, cfg.reps, cfg.seed, spectrum=spec,
                   workers=cfg.workers, tail_tol=cfg.tail_tol)
    _write(out / "ids3d.csv", curve.csv_text())
    if args.export_operator:
        # debug: matrix of realization 0 as (row, col, value) triplets
        field = sample_twist(profile, law, cfg.ell, cfg.h_s, cfg.seed, rep=0, tail_tol=cfg.tail_tol)
        op = assemble_3d(cs, field, spec)
        out.mkdir(parents=True, exist_ok=True)
        op.to_triplets(out / "operator_rep0.csv")
        print(f"wrote {out / 'operator_rep0.csv'}")
    return EXIT_OK


def cmd_export_tube(args):
    from .pipeline import tube_csv_text, tube_from_config

    cfg = _load(args)
    points = tube_from_config(cfg, rep=args.rep, theta0=args.theta0, samples=args.samples)
    _write(args.out or Path(cfg.output_dir) / "tube.csv", tube_csv_text(points))
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suite

    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases passed")
    if args.json:
        _write(args.json, json.dumps([r.__dict__ for r in results], indent=2, sort_keys=True) + "\n")
    return EXIT_CHECK if failed else EXIT_OK


def _config_flags(p, grids=True):
    p.add_argument("config", help="experiment config (YAML or JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--dof-cap", dest="dof_cap", type=int)
    if grids:
        p.add_argument("--ell", type=float)
        p.add_argument("--h-s", dest="h_s", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="twistwave", description="Randomly twisted waveguide experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every stage and enabled check of a config")
    _config_flags(p)
    p.add_argument("--c-slack", dest="c_slack", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--eps", type=float, nargs="+")

    p = sub.add_parser("cross-section", help="transverse eigenvalues and constants")
    _config_flags(p, grids=False)
    p.add_argument("--modes", type=int, default=2)
    p.add_argument("--include-phi", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("ids1d", help="1D comparison counting functions")
    _config_flags(p)
    p.add_argument("--eps", type=float, nargs="+")
    p.add_argument("--bc", choices=("dirichlet", "neumann"), default="dirichlet")
    p.add_argument("--out")

    p = sub.add_parser("ids3d", help="3D counting function")
    _config_flags(p)
    p.add_argument("--export-operator", action="store_true", help="debug: write the matrix of realization 0")
    p.add_argument("--out")

    for name, help_text in (("sandwich", "sandwich bounds"), ("lifshits", "Lifshits exponent fit"),
                            ("bottom", "spectrum bottom check")):
        p = sub.add_parser(name, help=help_text)
        _config_flags(p)
        if name == "sandwich":
            p.add_argument("--c-slack", dest="c_slack", type=float)
            p.add_argument("--delta", type=float)
        if name == "lifshits":
            p.add_argument("--eps", type=float, nargs="+")

    p = sub.add_parser("export-tube", help="point cloud of the twisted tube boundary")
    _config_flags(p)
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("verify", help="built-in oracle and inequality suites")
    p.add_argument("suite", nargs="?", default="all", choices=("oracles", "inequalities", "all"))
    p.add_argument("--json", help="also write the results as JSON")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "cross-section": cmd_cross_section,
        "ids1d": cmd_ids1d,
        "ids3d": cmd_ids3d,
        "export-tube": cmd_export_tube,
        "verify": cmd_verify,
    }
    try:
        if args.command in CHECK_COMMANDS:
            return cmd_run(args, only=CHECK_COMMANDS[args.command])
        return handlers[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
