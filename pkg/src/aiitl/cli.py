"""Command-line entry point: ``aiitl run | sweep | report``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, dump_config, load_config
from .exceptions import AIITLError, FormatError
from .metrics import beta_sweep, export_results, round2, sweep_table, to_csv
from .simulation import RunTrace, run_all

log = logging.getLogger("aiitl")

SYSTEM_ORDER = ("traditional_hitl", "hitl_perfect_allocation", "full_automation")


class UsageError(Exception):
    pass


def _apply_seed_override(cfg, seed):
    if seed is not None:
        for name in ("dataset", "training", "schedule", "split"):
            setattr(cfg.seeds, name, seed)
    return cfg


def _out_dir(cfg, override=None):
    return Path(override) if override else Path(cfg.output.directory)


def _trace_sort_key(trace):
    if trace.system.startswith("aiitl_"):
        return (0, trace.system)
    return (1 + SYSTEM_ORDER.index(trace.system), trace.system)


def write_run(results, cfg, out):
    """Persist traces, expert registries, tables and the resolved config."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    traces = []
    for name, (trace, state) in results.items():
        (out / "traces" / f"{name}.json").write_text(trace.dumps())
        if len(state.pool):
            state.pool.dump(out / "registry" / name)
        traces.append(trace)
    traces.sort(key=_trace_sort_key)
    export_results(traces, out, betas=cfg.utility.betas)
    (out / "config.yaml").write_text(dump_config(cfg))
    return traces


def load_traces(directory):
    directory = Path(directory)
    files = sorted(directory.rglob("traces/*.json"))
    if not files:
        raise UsageError(f"no traces found under {directory}")
    traces = []
    for f in files:
        try:
            traces.append(RunTrace.loads(f.read_text()))
        except FormatError as exc:
            raise UsageError(f"{f}: {exc}") from None
    return traces


def cmd_run(args):
    cfg = _apply_seed_override(load_config(args.config), args.seed_override)
    out = _out_dir(cfg, args.output)
    log.info("running %s (mechanism=%s) into %s", args.config, cfg.mechanism, out)
    traces = write_run(run_all(cfg), cfg, out)
    for t in traces:
        log.info("%-26s phi=%.2f rho=%.2f U=%.2f", t.system, t.final.phi, t.final.rho,
                 t.final.utility)
    return 0


def parse_betas(text, defaults):
    if text is None or not text.strip():
        return list(defaults)
    try:
        betas = [float(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"cannot parse --betas {text!r}") from None
    if any(b < 0 for b in betas):
        raise UsageError("betas must be non-negative")
    return betas or list(defaults)


def cmd_sweep(args):
    cfg = _apply_seed_override(load_config(args.config), args.seed_override)
    betas = parse_betas(args.betas, cfg.utility.betas)
    out = _out_dir(cfg, args.output)
    if args.rerun or not (out / "traces").is_dir():
        if not args.rerun:
            log.info("no prior run in %s; running first", out)
        write_run(run_all(cfg), cfg, out)
    traces = sorted(load_traces(out), key=_trace_sort_key)
    rows = beta_sweep([(t.system, t.final.phi, t.final.rho) for t in traces], betas,
                      alpha=cfg.utility.alpha)
    path = out / "sweep.csv"
    path.write_text(to_csv(sweep_table(rows, betas)))
    log.info("wrote %s", path)
    return 0


def format_report(traces):
    traces = sorted(traces, key=_trace_sort_key)
    hitl = [t for t in traces if t.system == "traditional_hitl"]
    aiitl = [t for t in traces if t.kind == "aiitl"]
    columns = []
    for t in hitl:
        columns.append(("HITL" if len(hitl) == 1 else f"HITL({t.mechanism})", t))
    for t in aiitl:
        columns.append((f"AIITL({t.mechanism})", t))
    width = max(14, *(len(c) + 2 for c, _ in columns)) if columns else 14
    lines = ["".ljust(16) + "".join(c.rjust(width) for c, _ in columns)]
    for label, attr in (("human effort", "rho"), ("accuracy", "phi"), ("utility", "utility")):
        lines.append(label.ljust(16) + "".join(
            round2(getattr(t.final, attr)).rjust(width) for _, t in columns))
    lines.append("")
    lines.append("per-step utility (streamed, beta=0.5)")
    lines.append("step".ljust(6) + "".join(t.system.rjust(26) for t in traces))
    n_steps = max(len(t.records) for t in traces)
    for i in range(n_steps):
        cells = []
        for t in traces:
            cells.append(round2(t.records[i].stream.utility_at(0.5)).rjust(26)
                         if i < len(t.records) else "".rjust(26))
        lines.append(str(i + 1).ljust(6) + "".join(cells))
    return "\n".join(lines) + "\n"


def cmd_report(args):
    sys.stdout.write(format_report(load_traces(args.directory)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="aiitl", description=__doc__.splitlines()[0])
    parser.add_argument("--seed-override", type=int, default=None,
                        help="replace every seed in the config")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed-override", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run AIITL and the three baselines")
    p.add_argument("config")
    p.add_argument("--output", help="override the config's output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common],
                       help="utility across a list of human-effort weights")
    p.add_argument("config")
    p.add_argument("--betas", default=None, help="comma-separated list, e.g. 0.5,1,2")
    p.add_argument("--rerun", action="store_true", help="rerun the experiment first")
    p.add_argument("--output", help="override the config's output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="print a summary of a run directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AIITLError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("unhandled", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
