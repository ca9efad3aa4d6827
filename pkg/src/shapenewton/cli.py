"""Command-line interface: solve, study, baseline, and verify subcommands.

The CLI is a thin shell over the driver module.  Configuration comes from a
flat key=value file whose keys match ExperimentConfig exactly; command-line
flags override file values.  Exit codes: 0 success, 1 configuration error,
2 solver or verification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, driver, export, verify
from .errors import ConfigError, ShapeNewtonError

# Explicit name: running this file via "python -m" would otherwise register
# the logger as __main__, outside the package hierarchy and the run log.
log = logging.getLogger("shapenewton.cli")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONFIG_PARSERS = {
    "f1": float,
    "f2": float,
    "mu": float,
    "n": int,
    "levels": int,
    "max_sqp_iters": int,
    "cg_tol": float,
    "step_length": float,
    "line_search": _parse_bool,
    "baseline_scaling": float,
    "seed": int,
}


def load_config_file(path) -> dict:
    """Parse a flat key=value configuration file.

    Unknown keys and unparsable values are hard errors so that typos cannot
    silently change an experiment.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](text.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def resolve_config(args) -> driver.ExperimentConfig:
    """Defaults, then config file, then command-line flag overrides."""
    values = {}
    if args.config is not None:
        values.update(load_config_file(args.config))
    if getattr(args, "alpha", None) is not None:
        values["step_length"] = args.alpha
    if getattr(args, "scaling", None) is not None:
        values["baseline_scaling"] = args.scaling
    if getattr(args, "cg_tol", None) is not None:
        values["cg_tol"] = args.cg_tol
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return driver.ExperimentConfig(**values)


def prepare_output_dir(out, force: bool, config: driver.ExperimentConfig) -> Path:
    """Create the output directory and write the run manifest before any
    solver work starts."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(
            f"output directory {out} already has contents; pass --force to reuse")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": dataclasses.asdict(config),
        "output_dir": str(out.resolve()),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


class _RunLog:
    """Attach a plain one-line-per-event log file for the duration of a run."""

    def __init__(self, out: Path):
        self.handler = logging.FileHandler(out / "run.log")
        self.handler.setFormatter(logging.Formatter("%(message)s"))
        self.handler.setLevel(logging.INFO)
        self.logger = logging.getLogger("shapenewton")

    def __enter__(self):
        self.previous_level = self.logger.level
        if self.logger.level == logging.NOTSET or self.logger.level > logging.INFO:
            self.logger.setLevel(logging.INFO)
        self.logger.addHandler(self.handler)
        return self

    def __exit__(self, *exc):
        self.logger.removeHandler(self.handler)
        self.logger.setLevel(self.previous_level)
        self.handler.close()
        return False


def _snapshot_writer(out: Path):
    def observer(row, snapshot):
        tag = f"{row.iteration:03d}"
        export.write_vtk(out / f"iter_{tag}.vtk", snapshot.mesh,
                         {"y": snapshot.y, "p": snapshot.p},
                         title=f"iteration {row.iteration}")
        export.write_interface_csv(out / f"interface_{tag}.csv",
                                   snapshot.geometry, snapshot.gradient.values)
        log.info("wrote iter_%s.vtk and interface_%s.csv", tag, tag)
    return observer


_TRACE_HEADER = f"{'iter':>4}  {'dist':>12}  {'J':>12}  {'grad_norm':>12}  " \
                f"{'cg_iters':>8}  {'alpha':>9}"


def _trace_table(rows) -> str:
    lines = [_TRACE_HEADER]
    for r in rows:
        lines.append(f"{r.iteration:>4}  {r.dist:>12.7g}  {r.objective:>12.7g}  "
                     f"{r.grad_norm:>12.7g}  {r.cg_iterations:>8}  "
                     f"{r.step_length:>9.7g}")
    return "\n".join(lines)


def cmd_solve(args) -> int:
    config = resolve_config(args)
    out = prepare_output_dir(args.out, args.force, config)
    with _RunLog(out):
        log.info("solve: level %d, config %s", args.level, config)
        data = driver.generate_data(config)
        log.info("data mesh: %d triangles, straight interface",
                 data.mesh.n_triangles)
        trace = driver.sqp_solve(config, data, level=args.level,
                                 observer=_snapshot_writer(out))
        export.write_trace_csv(out / "trace.csv", trace.rows)
        log.info("wrote trace.csv")
    print(f"level {trace.level}")
    print(_trace_table(trace.rows))
    return 0


def cmd_baseline(args) -> int:
    config = resolve_config(args)
    out = prepare_output_dir(args.out, args.force, config)
    with _RunLog(out):
        log.info("baseline: level %d, scaling %g, config %s",
                 args.level, config.baseline_scaling, config)
        data = driver.generate_data(config)
        trace = driver.steepest_descent_solve(config, data, level=args.level,
                                              observer=_snapshot_writer(out))
        export.write_trace_csv(out / "trace.csv", trace.rows)
        log.info("wrote trace.csv")
    print(f"level {trace.level} (steepest descent, scaling {config.baseline_scaling:.7g})")
    print(_trace_table(trace.rows))
    dists = trace.dists
    if len(dists) > 1:
        best_drop = max((dists[i] - dists[i + 1]) / dists[i]
                        for i in range(len(dists) - 1))
        if best_drop <= 0.01:
            print("warning: insufficient progress "
                  f"(best per-iteration decrease {100 * best_drop:.7g}%)")
    return 0


def cmd_study(args) -> int:
    config = resolve_config(args)
    out = prepare_output_dir(args.out, args.force, config)
    with _RunLog(out):
        log.info("study: %d levels, config %s", config.levels, config)
        traces = driver.convergence_study(config)
        all_rows = [row for trace in traces for row in trace.rows]
        export.write_trace_csv(out / "trace.csv", all_rows)
        log.info("wrote trace.csv")
    iters = max(len(t.rows) for t in traces)
    header = f"{'iter':>4}" + "".join(f"  {'level ' + str(t.level):>12}"
                                      for t in traces)
    lines = [header]
    for i in range(iters):
        cells = [f"{i:>4}"]
        for trace in traces:
            if i < len(trace.rows):
                cells.append(f"{trace.rows[i].dist:>12.7g}")
            else:
                cells.append(f"{'-':>12}")
        lines.append("  ".join(cells))
    print("\n".join(lines))
    return 0


def cmd_verify(args) -> int:
    results = verify.run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed")
        return 2
    print(f"all {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapenewton",
        description="Interface identification for a two-source Poisson "
                    "problem by a shape Newton method.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true",
                       help="reuse a non-empty output directory")
        p.add_argument("--cg-tol", dest="cg_tol", type=float,
                       help="relative CG tolerance")
        p.add_argument("--seed", type=int, help="seed recorded in the config")

    p_solve = sub.add_parser("solve", help="run the SQP iteration on one level")
    add_common(p_solve)
    p_solve.add_argument("--level", type=int, default=1,
                         help="refinement level (1 = coarsest)")
    p_solve.add_argument("--alpha", type=float, help="step length")
    p_solve.set_defaults(func=cmd_solve)

    p_study = sub.add_parser("study", help="run every refinement level")
    add_common(p_study)
    p_study.add_argument("--alpha", type=float, help="step length")
    p_study.set_defaults(func=cmd_study)

    p_base = sub.add_parser("baseline",
                            help="run scaled steepest descent on one level")
    add_common(p_base)
    p_base.add_argument("--level", type=int, default=1,
                        help="refinement level (1 = coarsest)")
    p_base.add_argument("--alpha", type=float, help="step length")
    p_base.add_argument("--scaling", type=float, help="gradient scaling")
    p_base.set_defaults(func=cmd_baseline)

    p_verify = sub.add_parser("verify", help="run the verification checks")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except ShapeNewtonError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
