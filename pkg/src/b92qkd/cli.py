"""Command-line front end.

Exit codes: 0 success, 1 invalid configuration, 2 I/O failure, 3 a statistic
was undefined because no counts were collected.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .adversary import run_attack_experiment
from .analytics import (
    WINDOW_GRID,
    RateReport,
    accumulate_histogram,
    optimize_window,
    rate_report,
    reports_to_csv,
)
from .config import ExperimentSpec, Mode, format_spec, parse_config, parse_values
from .exceptions import ConfigurationError, UndefinedStatisticError
from .protocol import run_session
from .tables import TABLE_100MHZ, TABLE_1GHZ, calibrated_session

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_UNDEFINED = 0, 1, 2, 3
TABLES_DEFAULT_SCALE = 0.01


def _sweep_cell(args):
    spec, distance = args
    record = run_session(spec.session_at(distance))
    return [rate_report(record, w, spec.theta, distance) for w in spec.windows]


def run_sweep(spec: ExperimentSpec, workers: int | None = None) -> list[RateReport]:
    """One report per (distance, window); distances run in parallel when ``workers > 1``.

    Raises:
        ConfigurationError: no distances or no windows, checked before any simulation.
    """
    if not spec.distances:
        raise ConfigurationError("a sweep needs at least one distance")
    if not spec.windows:
        raise ConfigurationError("a sweep needs at least one window")
    cells = [(spec, d) for d in spec.distances]
    workers = workers or spec.workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    return [r for row in rows for r in row]


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def render_json(spec: ExperimentSpec, mode: str, results) -> str:
    doc = {
        "version": __version__,
        "mode": mode,
        "seed": spec.session.seed,
        "config": parse_values(format_spec(spec)),
        "results": results,
    }
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def emit_report(text: str, path: str | None) -> None:
    """Write ``text`` to ``path`` (stdout when empty or ``-``)."""
    if not path or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e.strerror or e}") from e


def _reports_output(spec, mode, reports, fmt, extra=None):
    if fmt == "csv":
        return reports_to_csv(reports)
    ordered = sorted(reports, key=lambda r: (r.clock, r.distance, r.window_fraction))
    results = {"reports": [r.as_dict() for r in ordered]}
    results.update(extra or {})
    return render_json(spec, mode, results)


def cmd_simulate(spec, args):
    record = run_session(spec.session, workers=spec.workers)
    d = spec.session.channel.fiber_length
    return _reports_output(spec, "simulate", [rate_report(record, w, spec.theta, d) for w in spec.windows], args.format)


def cmd_sweep(spec, args):
    return _reports_output(spec, "sweep", run_sweep(spec), args.format)


def cmd_histogram(spec, args):
    record = run_session(spec.session, workers=spec.workers)
    hist = accumulate_histogram(record.events, spec.session.sync_period, spec.bin_width, record.duration)
    if args.format == "csv":
        return hist.to_csv()
    rows = [list(r) for r in zip(hist.bin_starts.tolist(), hist.counts_ch0.tolist(), hist.counts_ch1.tolist())]
    return render_json(spec, "histogram", {"bin_width": hist.bin_width, "period": hist.period, "bins": rows})


def cmd_attack(spec, args):
    attack = replace(spec.attack, enabled=True)
    window = spec.windows[0]
    outcome = run_attack_experiment(replace(spec.session, attack=None), attack, window, workers=spec.workers)
    summary = outcome.summary()
    if args.format == "csv":
        return "key,value\n" + "".join(f"{k},{v!r}\n" for k, v in sorted(summary.items()))
    return render_json(spec, "attack", summary)


def cmd_optimize(spec, args):
    record = run_session(spec.session, workers=spec.workers)
    grid = spec.windows if len(spec.windows) > 1 else WINDOW_GRID
    best, reports = optimize_window(record, grid, spec.theta, spec.session.channel.fiber_length)
    return _reports_output(spec, "optimize-window", reports, args.format, {"best_window_fraction": best})


def cmd_tables(spec, args):
    base = spec.session
    if args.duration_scale is None:
        base = replace(base, duration_scale=TABLES_DEFAULT_SCALE)
    reports, measured = [], []
    for table in (TABLE_100MHZ, TABLE_1GHZ):
        for row in table.rows:
            cfg = calibrated_session(base, table.clock, row.r_raw)
            cfg = replace(cfg, collection_time=60.0)
            record = run_session(cfg, workers=spec.workers)
            reports.extend(rate_report(record, w, spec.theta, row.distance) for w in table.windows)
            measured.append(
                {
                    "clock_hz": table.clock,
                    "distance_km": row.distance,
                    "extra_attenuation_db": cfg.channel.extra_attenuation,
                    "r_raw": row.r_raw,
                    "windows": list(table.windows),
                    "r_sift": list(row.r_sift),
                    "r_net": list(row.r_net),
                    "qber_percent": list(row.qber_percent),
                }
            )
    return _reports_output(spec, "tables", reports, args.format, {"measured": measured})


COMMANDS = {
    Mode.SIMULATE: cmd_simulate,
    Mode.SWEEP: cmd_sweep,
    Mode.HISTOGRAM: cmd_histogram,
    Mode.ATTACK: cmd_attack,
    Mode.OPTIMIZE_WINDOW: cmd_optimize,
    Mode.TABLES: cmd_tables,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="b92qkd", description="Simulate and analyse a gated B92 QKD link.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in Mode:
        p = sub.add_parser(mode.value)
        p.add_argument("--config", help="key = value experiment document")
        p.add_argument("--seed", type=int, help="override protocol.seed")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="output format (default: config or csv)")
        p.add_argument("--duration-scale", type=float, help="fraction of the collection time to simulate")
        p.add_argument("--workers", type=int, help="worker processes")
    return parser


def load_spec(args) -> ExperimentSpec:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise OSError(f"cannot read config {args.config}: {e.strerror or e}") from e
    spec = parse_config(text)
    session = spec.session
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigurationError("--seed must be >= 0")
        session = replace(session, seed=args.seed)
    if args.duration_scale is not None:
        session = replace(session, duration_scale=args.duration_scale)
    spec = replace(spec, session=session, mode=Mode(args.command))
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        spec = replace(spec, workers=args.workers)
    if args.format is None:
        args.format = spec.output_format
    if args.out is None:
        args.out = spec.output_path
    return spec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args)
        emit_report(COMMANDS[spec.mode](spec, args), args.out)
    except UndefinedStatisticError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNDEFINED
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
