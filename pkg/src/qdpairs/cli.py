"""Command line entry point.

Errors are reported as one JSON object on stderr with a nonzero exit code:
2 for invalid configuration, 3 for malformed time-tag files, 4 for IO failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .cbg import design_report
from .config import (ConfigError, ExperimentConfig, load_config, paper_config, parse_config,
                     to_dict)
from .correlation import (blinking_envelope, build_histogram, g2_zero, integrate_peaks,
                          side_to_center_calibration)
from .experiments import _histogram_rows, _write_csv, run_experiment, summarize_bookkeeping
from .timetags import TimeTagFormatError, read_timetags

EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_IO = 4


def _emit(obj, stream=None):
    (stream or sys.stdout).write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args, kind: str | None = None) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else paper_config()
    run = cfg.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.pulses is not None:
        run = replace(run, n_pulses=args.pulses)
    cfg = replace(cfg, run=run)
    if kind is not None:
        cfg = replace(cfg, kind=kind)
    if getattr(args, "window_ps", None) is not None and cfg.kind == "hom":
        cfg = replace(cfg, analysis=replace(cfg.analysis, filter_window=args.window_ps))
    # re-validate the overridden values through the schema
    return parse_config(to_dict(cfg))


def cmd_run(args, kind=None) -> int:
    cfg = _config(args, kind)
    summary = run_experiment(cfg, args.out)
    _emit(summary)
    return 0


def cmd_bookkeeping(args) -> int:
    _emit(summarize_bookkeeping(_config(args)))
    return 0


def cmd_design(args) -> int:
    cfg = _config(args, "design")
    if args.out:
        return cmd_run(args, "design")
    d = cfg.design
    _emit(design_report(d.geometry, d.rules, cfg.source.cavity, d.target_lambda))
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args)
    header, tags = read_timetags(args.file)
    if header.channel_count < 2:
        raise ValueError("analysis needs two channels")
    a = cfg.analysis
    rep = float(header.rep_period_ps)
    window = args.window_ps if args.window_ps is not None else a.peak_window
    h = build_histogram(tags.times(0), tags.times(1), a.bin_width, a.max_delay, rep)
    peaks = integrate_peaks(h, window)
    out = {"file": str(args.file), "records": len(tags), "rep_period_ps": header.rep_period_ps,
           "center": peaks.center}
    for name, fn in (("g2_zero", lambda: g2_zero(peaks, a.g2_min_delay)),
                     ("side_to_center", lambda: side_to_center_calibration(peaks))):
        try:
            e = fn()
            out[name] = {"value": e.value, "error": e.error}
        except (ValueError, KeyError) as exc:
            out[name] = {"error_message": str(exc)}
    try:
        fit = blinking_envelope(peaks)
        out["on_fraction"] = {"value": fit.on_fraction.value, "error": fit.on_fraction.error}
    except (ValueError, RuntimeError) as exc:
        out["on_fraction"] = {"error_message": str(exc)}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_csv(Path(args.out) / "histogram.csv", ["delay_ps", "counts"], _histogram_rows(h))
    _emit(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdpairs",
                                description="Entangled photon pair source simulator and analyzer")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", type=Path, help="JSON configuration (default: paper preset)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--pulses", type=int)
        sp.add_argument("--out", type=Path, required=out_required)
        sp.add_argument("--window-ps", type=float, dest="window_ps")
        return sp

    common(sub.add_parser("simulate", help="run the experiment kind named in the config"), True)
    common(sub.add_parser("hom", help="two-photon interference run"), True)
    common(sub.add_parser("calibrate", help="side-to-center, lifetimes and blinking"), True)
    common(sub.add_parser("design", help="CBG design report"))
    common(sub.add_parser("bookkeeping", help="efficiency chain and predicted rates"))
    an = common(sub.add_parser("analyze", help="correlate channels 0 and 1 of a time-tag file"))
    an.add_argument("file", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": cmd_run,
        "hom": lambda a: cmd_run(a, "hom"),
        "calibrate": lambda a: cmd_run(a, "calibrate"),
        "design": cmd_design,
        "bookkeeping": cmd_bookkeeping,
        "analyze": cmd_analyze,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        _emit(exc.to_dict(), sys.stderr)
        return EXIT_CONFIG
    except TimeTagFormatError as exc:
        _emit(exc.to_dict(), sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        _emit({"error": "IOError", "path": exc.filename and str(exc.filename),
               "message": str(exc)}, sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        _emit({"error": "ValueError", "message": str(exc)}, sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
