"""End-to-end recipes: simulate, write time tags and CSVs, analyze, summarize."""
from __future__ import annotations

import csv
import datetime
import json
import math
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .cascade import STREAM_DETECTION, SimConfig, make_rng, simulate_emissions
from .cbg import design_report
from .config import ExperimentConfig, config_hash, dumps
from .correlation import (TomographyRecord, blinking_envelope, build_histogram,
                          decay_delays, fit_decay, g2_zero, integrate_peaks,
                          side_to_center_calibration, tomography_visibilities)
from .detection import (CH_X, CH_XX, TOMOGRAPHY_SETTINGS, apply_chain, apply_hbt, klyshko,
                        pair_extraction_efficiency, predict_rates)
from .hom import (analytic_visibility, center_counts, coincidence_delays, correct_visibility,
                  hom_visibility, simulate_hom, visibility_curve)
from .source import predict_visibilities, rho_time_integrated
from .timetags import write_timetags


def _est(e) -> dict:
    return {"value": float(e.value), "error": float(e.error)}


def _safe(fn) -> dict:
    """Estimate as a dict, or the reason it could not be formed."""
    try:
        return _est(fn())
    except ValueError as exc:
        return {"error_message": str(exc)}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _histogram_rows(h, *extra):
    nz = np.flatnonzero(h.counts)
    delays = h.delays[nz]
    return [(_fmt(d), int(c), *extra) for d, c in zip(delays, h.counts[nz])]


def summarize_bookkeeping(cfg: ExperimentConfig) -> dict:
    """Efficiency chain from independently calibrated factors to rates."""
    src, eff = cfg.source, cfg.efficiencies
    rep = src.excitation.rep_rate
    generation = src.cascade_probability * src.blinking.on_fraction
    r_xx, r_x, r_cc = predict_rates(eff, src.pair_rate, rep)
    return {
        "p_prep_rad": src.cascade_probability,
        "on_fraction": src.blinking.on_fraction,
        "pair_generation_per_pulse": generation,
        "p_reexcite": src.excitation.p_reexcite,
        "photons_per_pulse": src.pair_rate,
        "eta_setup": eff.eta_setup,
        "eta_xx": eff.eta_xx,
        "eta_x": eff.eta_x,
        "rate_xx_per_s": r_xx,
        "rate_x_per_s": r_x,
        "rate_cc_per_s": r_cc,
        "klyshko_xx": klyshko(r_cc, r_x) if r_x > 0 else 0.0,
        "klyshko_x": klyshko(r_cc, r_xx) if r_xx > 0 else 0.0,
        "pair_extraction": pair_extraction_efficiency(eff.eta_extr_xx, eff.eta_extr_x),
    }


def _duration(cfg: ExperimentConfig) -> float:
    return cfg.run.n_pulses * cfg.source.rep_period


def detect(cfg: ExperimentConfig, events, setting=None, stream: int = 0, efficiencies=None):
    """Pass emission events through the configured detection chain."""
    rng = make_rng(cfg.run.seed, STREAM_DETECTION, stream)
    return apply_chain(events, efficiencies or cfg.efficiencies, cfg.detector, setting,
                       _duration(cfg), rng, qdot=cfg.source.qdot)


def emissions(cfg: ExperimentConfig, threads=None):
    sim = SimConfig(cfg.source, cfg.run.n_pulses, cfg.run.seed, cfg.run.block_size)
    return simulate_emissions(sim, threads)


def cross_histogram(cfg: ExperimentConfig, tags, ch_a: int = CH_XX, ch_b: int = CH_X):
    a = cfg.analysis
    return build_histogram(tags.times(ch_a), tags.times(ch_b), a.bin_width, a.max_delay,
                           cfg.source.rep_period)


def _far_sides(peaks, min_delay):
    far = [c for d, c in peaks.sides if abs(d) >= min_delay]
    return far or [c for _, c in peaks.sides]


def run_tomography(cfg: ExperimentConfig, out: Path, threads=None) -> dict:
    ev = emissions(cfg, threads)
    records, rows, per_setting = [], [], {}
    for i, setting in enumerate(TOMOGRAPHY_SETTINGS):
        tags = detect(cfg, ev, setting, stream=i)
        write_timetags(out / f"tomo_{setting}.qtt", tags, cfg.source.rep_period, 2)
        h = cross_histogram(cfg, tags)
        peaks = integrate_peaks(h, cfg.analysis.peak_window)
        far = _far_sides(peaks, cfg.analysis.g2_min_delay)
        rec = TomographyRecord(setting, peaks.center, sum(far) / len(far), sum(far))
        records.append(rec)
        per_setting[str(setting)] = {"center": peaks.center, "g2": _est(rec.g2)}
        rows += _histogram_rows(h, str(setting))
    _write_csv(out / "tomography_histograms.csv", ["delay_ps", "counts", "setting"], rows)
    res = tomography_visibilities(records)
    gx = 1.0 / cfg.source.tau_x
    k = cfg.source.correlated_fraction
    expected = [k * v for v in predict_visibilities(rho_time_integrated(cfg.source.qdot, gx))]
    return {
        "v_linear": _est(res.v_linear),
        "v_diagonal": _est(res.v_diagonal),
        "v_circular": _est(res.v_circular),
        "fidelity": _est(res.fidelity),
        "expected": {"v_linear": expected[0], "v_diagonal": expected[1], "v_circular": expected[2],
                     "fidelity": (1 + expected[0] + expected[1] - expected[2]) / 4},
        "settings": per_setting,
    }


def run_hbt(cfg: ExperimentConfig, out: Path, threads=None) -> dict:
    ev = emissions(cfg, threads)
    rng = make_rng(cfg.run.seed, STREAM_DETECTION, 0)
    tags = apply_hbt(ev, cfg.analysis.hbt_species, cfg.efficiencies, cfg.detector,
                     _duration(cfg), rng)
    write_timetags(out / "hbt.qtt", tags, cfg.source.rep_period, 2)
    h = cross_histogram(cfg, tags, 0, 1)
    _write_csv(out / "hbt_histogram.csv", ["delay_ps", "counts"], _histogram_rows(h))
    peaks = integrate_peaks(h, cfg.analysis.peak_window)
    res = {"species": cfg.analysis.hbt_species, "center": peaks.center,
           "g2_zero": _est(g2_zero(peaks, cfg.analysis.g2_min_delay)),
           "g2_zero_nearest": _est(g2_zero(peaks))}
    res.update(_blinking(peaks))
    return res


def _blinking(peaks) -> dict:
    try:
        fit = blinking_envelope(peaks)
    except (ValueError, RuntimeError) as exc:
        return {"blinking": {"error": str(exc)}}
    return {"blinking": {"on_fraction": _est(fit.on_fraction), "t_corr_ns": _est(fit.t_corr)}}


def _decays(cfg: ExperimentConfig, tags) -> dict:
    rep, jit, bw = cfg.source.rep_period, cfg.detector.jitter_fwhm, cfg.analysis.decay_bin_width
    out = {}
    try:
        xx = fit_decay(decay_delays(tags.times(CH_XX), rep), jit, bw)
        x = fit_decay(decay_delays(tags.times(CH_X), rep), jit, bw, rise=xx.lifetime.value)
    except (ValueError, RuntimeError) as exc:
        return {"error": str(exc)}
    out["tau_xx_ps"] = _est(xx.lifetime)
    out["tau_x_ps"] = _est(x.lifetime)
    return out


def calibration_sweep(cfg: ExperimentConfig, threads=None):
    """Side-to-center estimate and XX counts for each pulse area of the sweep."""
    rows = []
    for k, area in enumerate(cfg.sweep.calibration_areas):
        exc = replace(cfg.source.excitation, power=cfg.source.excitation.p_pi_power * area ** 2)
        c = replace(cfg, source=replace(cfg.source, excitation=exc))
        tags = detect(c, emissions(c, threads), stream=100 + k)
        peaks = integrate_peaks(cross_histogram(c, tags), cfg.analysis.peak_window)
        rows.append((area, int(np.count_nonzero(tags.channel == CH_XX)),
                     side_to_center_calibration(peaks)))
    return rows


def linearity(rows) -> dict:
    counts = np.array([r[1] for r in rows], dtype=float)
    p = np.array([r[2].value for r in rows])
    norm = counts / counts[int(np.argmax([r[0] for r in rows]))]
    fit = stats.linregress(norm, p)
    return {"slope": float(fit.slope), "intercept": float(fit.intercept),
            "r_squared": float(fit.rvalue ** 2)}


def run_calibrate(cfg: ExperimentConfig, out: Path, threads=None) -> dict:
    tags = detect(cfg, emissions(cfg, threads))
    write_timetags(out / "calibrate.qtt", tags, cfg.source.rep_period, 2)
    h = cross_histogram(cfg, tags)
    _write_csv(out / "cross_histogram.csv", ["delay_ps", "counts"], _histogram_rows(h))
    peaks = integrate_peaks(h, cfg.analysis.peak_window)
    rows = calibration_sweep(cfg, threads)
    _write_csv(out / "calibration_sweep.csv",
               ["pulse_area_pi", "counts_xx", "side_to_center", "error"],
               [(a, n, f"{e.value:.6f}", f"{e.error:.6f}") for a, n, e in rows])
    res = {"center": peaks.center,
           "side_to_center": _est(side_to_center_calibration(peaks)),
           "expected_p": cfg.source.cascade_probability,
           "sweep_linearity": linearity(rows) if len(rows) >= 3 else None,
           "lifetimes": _decays(cfg, tags)}
    res.update(_blinking(peaks))
    return res


def run_rabi_sweep(cfg: ExperimentConfig, out: Path, threads=None) -> dict:
    rows = []
    for p in cfg.sweep.powers:
        exc = replace(cfg.source.excitation, power=cfg.source.excitation.p_pi_power * p)
        c = replace(cfg, source=replace(cfg.source, excitation=exc))
        tags = detect(c, emissions(c, threads))
        rows.append((p, math.sqrt(p), int(np.count_nonzero(tags.channel == CH_XX)),
                     int(np.count_nonzero(tags.channel == CH_X))))
    _write_csv(out / "rabi_sweep.csv", ["power_rel", "sqrt_power_rel", "counts_xx", "counts_x"],
               [(f"{a:.6f}", f"{b:.6f}", c, d) for a, b, c, d in rows])
    best = max(rows, key=lambda r: r[2])
    return {"n_points": len(rows), "max_counts_xx": best[2], "power_rel_at_max": best[0]}


def run_hom(cfg: ExperimentConfig, out: Path, threads=None) -> dict:
    hom, a = cfg.hom, cfg.analysis
    tags = {}
    rows = []
    for pol in ("cross", "parallel"):
        h = replace(hom, polarization=pol)
        t = simulate_hom(cfg.source, h, cfg.run.n_pulses, cfg.run.seed, cfg.efficiencies,
                         cfg.detector, cfg.run.block_size)
        write_timetags(out / f"hom_{pol}.qtt", t, cfg.source.rep_period, 2)
        tags[pol] = t
        d = coincidence_delays(t, 1.5 * hom.pulse_pair_delay)
        edges = np.arange(-1.5 * hom.pulse_pair_delay, 1.5 * hom.pulse_pair_delay + a.bin_width,
                          a.bin_width)
        counts, _ = np.histogram(d, edges)
        mids = 0.5 * (edges[1:] + edges[:-1])
        rows += [(_fmt(m), int(c), pol) for m, c in zip(mids, counts) if c]
    _write_csv(out / "hom_histograms.csv", ["delay_ps", "counts", "polarization"], rows)
    cc = center_counts(tags["cross"], hom.pulse_pair_delay)
    cp = center_counts(tags["parallel"], hom.pulse_pair_delay)
    raw = _safe(lambda: hom_visibility(cc, cp))
    windows = sorted({a.filter_window, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0,
                      hom.pulse_pair_delay / 2})
    curve = [_safe(lambda w=w: visibility_curve(tags["cross"], tags["parallel"], [w],
                                                hom.pulse_pair_delay)[0]) for w in windows]
    _write_csv(out / "hom_filter_curve.csv", ["window_ps", "visibility", "error"],
               [(_fmt(w), f"{e['value']:.6f}", f"{e['error']:.6f}") if "value" in e
                else (_fmt(w), "", "") for w, e in zip(windows, curve)])
    corrected = None
    if "value" in raw:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            corr = correct_visibility(raw["value"], a.hom_g2, hom.bs_reflectivity,
                                      hom.classical_visibility)
        corrected = {"value": corr.value, "clamped": corr.clamped}
    expect = analytic_visibility(hom, cfg.source, [np.inf, a.filter_window],
                                 jitter_fwhm=cfg.detector.jitter_fwhm)
    return {"species": hom.species, "center_cross": cc, "center_parallel": cp,
            "v_raw": raw, "v_filtered": curve[windows.index(a.filter_window)],
            "filter_window_ps": a.filter_window, "v_corrected": corrected,
            "expected": {"v_raw": float(expect[0]), "v_filtered": float(expect[1])}}


def run_design(cfg: ExperimentConfig, out: Path, threads=None) -> dict:
    d = cfg.design
    return design_report(d.geometry, d.rules, cfg.source.cavity, d.target_lambda)


PIPELINES = {
    "tomography12": run_tomography,
    "hbt": run_hbt,
    "calibrate": run_calibrate,
    "rabi_sweep": run_rabi_sweep,
    "hom": run_hom,
    "design": run_design,
}


def provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg.run.seed, "version": __version__,
            "kind": cfg.kind, "n_pulses": cfg.run.n_pulses}


def run_experiment(cfg: ExperimentConfig, out_dir, threads=None) -> dict:
    """Run the pipeline named by ``cfg.kind`` and write its artifacts into ``out_dir``.

    ``summary.json`` is reproducible byte for byte except for ``metadata``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory: {exc.strerror}", str(out)) from exc
    (out / "config.json").write_text(dumps(cfg))
    results = PIPELINES[cfg.kind](cfg, out, threads)
    summary = {
        "kind": cfg.kind,
        "results": results,
        "bookkeeping": summarize_bookkeeping(cfg),
        "provenance": provenance(cfg),
        "metadata": {"created": datetime.datetime.now(datetime.timezone.utc).isoformat()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def strip_metadata(summary: dict) -> dict:
    return {k: v for k, v in summary.items() if k != "metadata"}

