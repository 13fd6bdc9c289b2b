"""Experiment configuration: JSON schema, presets, parsing and canonical serialization."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import jsonschema

from .cascade import BlinkingParams, SourceParams
from .cbg import CbgGeometry, DesignRules
from .detection import DetectorParams, SetupEfficiencies
from .hom import HomConfig
from .source import CavityParams, ExcitationParams, QDotParams

KINDS = ("rabi_sweep", "hbt", "tomography12", "hom", "calibrate", "design")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` is a list of ``{"path", "message"}`` dicts."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{e['path'] or '<root>'}: {e['message']}" for e in self.errors))

    def to_dict(self) -> dict:
        return {"error": "ConfigError", "errors": self.errors}


@dataclass(frozen=True)
class RunParams:
    n_pulses: int = 1_000_000
    seed: int = 0
    block_size: int = 1_000_000


@dataclass(frozen=True)
class AnalysisParams:
    bin_width: float = 4.0  # ps
    peak_window: float = 2000.0  # full width of a peak integration window, ps
    max_delay: float = 1_000_000.0  # histogram half range, ps
    g2_min_delay: float = 500.0  # ns; side peaks used to normalize g2
    filter_window: float = 20.0  # ps; HOM temporal filter, |t1 - t2| <= window
    hbt_species: str = "xx"
    hom_g2: float = 0.014  # g2 used to correct the HOM visibility
    decay_bin_width: float = 4.0  # ps


@dataclass(frozen=True)
class SweepParams:
    powers: tuple = tuple(i / 8 for i in range(33))  # in units of the pi-pulse power
    calibration_areas: tuple = (1 / 6, 1 / 3, 1 / 2, 1.0)  # pulse areas in units of pi


@dataclass(frozen=True)
class DesignParams:
    rules: DesignRules = field(default_factory=DesignRules)
    geometry: CbgGeometry = field(default_factory=lambda: CbgGeometry(375.0, 365.0))
    target_lambda: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "tomography12"
    source: SourceParams = field(default_factory=SourceParams)
    efficiencies: SetupEfficiencies = field(default_factory=SetupEfficiencies)
    detector: DetectorParams = field(default_factory=DetectorParams)
    run: RunParams = field(default_factory=RunParams)
    hom: HomConfig = field(default_factory=HomConfig)
    analysis: AnalysisParams = field(default_factory=AnalysisParams)
    sweep: SweepParams = field(default_factory=SweepParams)
    design: DesignParams = field(default_factory=DesignParams)
    preset: str = "paper"


# calibrated once against the device data and frozen; see README
PAPER_QDOT = QDotParams(
    fss_s=1.2, tau_xx_bulk=750.3, tau_x_bulk=1102.3,
    lambda_xx=889.97814015904613, lambda_x=888.37814015904613,
    gamma_cross=0.0, eps_depol=0.0863634,
    noise_weights=(0.113879, 0.0, 0.38468705, 0.50143395), eta_internal=0.70)
PAPER_CAVITY = CavityParams(lambda_c=890.0, q_factor=150.0, f_max=11.30031230760047,
                            eta_extr_max=0.9)
PAPER_EXCITATION = ExcitationParams(rep_rate=76.0, p_pi_power=16.0, power=16.0,
                                    p_reexcite=0.00415)
PAPER_BLINKING = BlinkingParams(on_fraction=0.84, t_corr=100.0)
PAPER_HOM = HomConfig(pulse_pair_delay=2000.0, classical_visibility=0.99112,
                      dephase_rate_xx=8.04e-4, dephase_rate_x=0.0)


def paper_config(**overrides) -> ExperimentConfig:
    source = SourceParams(PAPER_QDOT, PAPER_CAVITY, PAPER_EXCITATION, PAPER_BLINKING)
    return replace(ExperimentConfig(source=source, hom=PAPER_HOM), **overrides)


def bare_config(**overrides) -> ExperimentConfig:
    """Dataclass defaults only: no blinking, no noise, unit internal efficiency."""
    return replace(ExperimentConfig(preset="none"), **overrides)


PRESETS = {"paper": paper_config, "none": bare_config}


# --- schema ---

def _num(lo=None, hi=None, xlo=False, xhi=False, integer=False):
    s = {"type": "integer" if integer else "number"}
    if lo is not None:
        s["exclusiveMinimum" if xlo else "minimum"] = lo
    if hi is not None:
        s["exclusiveMaximum" if xhi else "maximum"] = hi
    return s


def _obj(props):
    return {"type": "object", "properties": props, "additionalProperties": False}


FRACTION = _num(0, 1)
WAVELENGTH = _num(300, 2000)

SECTION_SCHEMAS = {
    "qdot": _obj({
        "fss_s": _num(0, 1000), "tau_xx_bulk": _num(0, 1e6, xlo=True),
        "tau_x_bulk": _num(0, 1e6, xlo=True), "lambda_xx": WAVELENGTH, "lambda_x": WAVELENGTH,
        "gamma_cross": _num(0, 1e4), "eps_depol": FRACTION,
        "noise_weights": {"type": "array", "items": FRACTION, "minItems": 4, "maxItems": 4},
        "eta_internal": FRACTION}),
    "cavity": _obj({"lambda_c": WAVELENGTH, "q_factor": _num(0, 1e7, xlo=True),
                    "f_max": _num(1, 1e5), "eta_extr_max": FRACTION}),
    "excitation": _obj({"rep_rate": _num(0, 1e4, xlo=True), "p_pi_power": _num(0, 1e6, xlo=True),
                        "power": _num(0, 1e6), "p_reexcite": FRACTION}),
    "blinking": _obj({"on_fraction": _num(0, 1, xlo=True), "t_corr": _num(0, 1e9, xlo=True)}),
    "efficiencies": _obj({k: FRACTION for k in ("eta_det", "eta_path", "eta_fiber",
                                                 "eta_extr_xx", "eta_extr_x")}),
    "detector": _obj({"jitter_fwhm": _num(0, 1e5), "dark_rate": _num(0, 1e8),
                      "dead_time": _num(0, 1e9)}),
    "run": _obj({"n_pulses": _num(1, 10 ** 11, integer=True),
                 "seed": _num(0, 2 ** 63 - 1, integer=True),
                 "block_size": _num(1, 10 ** 8, integer=True)}),
    "hom": _obj({"pulse_pair_delay": _num(0, 1e6, xlo=True), "species": {"enum": ["xx", "x"]},
                 "polarization": {"enum": ["parallel", "cross"]},
                 "bs_reflectivity": _num(0, 1, xlo=True, xhi=True),
                 "classical_visibility": FRACTION,
                 "dephase_rate_xx": _num(0, 10), "dephase_rate_x": _num(0, 10)}),
    "analysis": _obj({"bin_width": _num(0, 1e5, xlo=True), "peak_window": _num(0, 1e6, xlo=True),
                      "max_delay": _num(0, 1e9, xlo=True), "g2_min_delay": _num(0, 1e7),
                      "filter_window": _num(0, 1e6, xlo=True),
                      "hbt_species": {"enum": ["xx", "x"]}, "hom_g2": FRACTION,
                      "decay_bin_width": _num(0, 1e4, xlo=True)}),
    "sweep": _obj({"powers": {"type": "array", "items": _num(0, 1e4), "minItems": 1},
                   "calibration_areas": {"type": "array", "items": _num(0, 100, xlo=True),
                                         "minItems": 2}}),
    "rules": _obj({"slope_radius": _num(0, 100, xlo=True), "slope_period": _num(0, 100, xlo=True),
                   "ref_radius": _num(0, 1e5, xlo=True), "ref_period": _num(0, 1e5, xlo=True),
                   "ref_lambda": WAVELENGTH, "fab_sigma": _num(0, 1e3),
                   "period_sigma": _num(0, 1e3)}),
    "geometry": _obj({"disk_radius": _num(0, 1e5, xlo=True),
                      "grating_period": _num(0, 1e5, xlo=True),
                      "trench_width": _num(0, 1e5, xlo=True), "n_rings": _num(1, 1000, integer=True)}),
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qdpairs experiment configuration",
    **_obj({
        "preset": {"enum": sorted(PRESETS)},
        "kind": {"enum": list(KINDS)},
        "source": _obj({k: SECTION_SCHEMAS[k] for k in ("qdot", "cavity", "excitation", "blinking")}),
        "detection": _obj({k: SECTION_SCHEMAS[k] for k in ("efficiencies", "detector")}),
        "run": SECTION_SCHEMAS["run"],
        "hom": SECTION_SCHEMAS["hom"],
        "analysis": SECTION_SCHEMAS["analysis"],
        "sweep": SECTION_SCHEMAS["sweep"],
        "design": _obj({"rules": SECTION_SCHEMAS["rules"], "geometry": SECTION_SCHEMAS["geometry"],
                        "target_lambda": {"anyOf": [WAVELENGTH, {"type": "null"}]}}),
    }),
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _path(parts) -> str:
    return "/".join(str(p) for p in parts)


def _merge(base, overrides: dict):
    if not overrides:
        return base
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return replace(base, **kw)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a JSON-like dict and build the configuration on top of its preset."""
    if not isinstance(raw, dict):
        raise ConfigError([{"path": "", "message": "configuration must be a JSON object"}])
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError([{"path": _path(e.absolute_path), "message": e.message} for e in errors])
    raw = copy.deepcopy(raw)
    base = PRESETS[raw.get("preset", "paper")]()
    section = ""
    try:
        src = raw.get("source", {})
        section = "source"
        source = SourceParams(*(_merge(getattr(base.source, k), src.get(k))
                                for k in ("qdot", "cavity", "excitation", "blinking")))
        det = raw.get("detection", {})
        section = "detection"
        eff = _merge(base.efficiencies, det.get("efficiencies"))
        detector = _merge(base.detector, det.get("detector"))
        section = "design"
        des = raw.get("design", {})
        design = DesignParams(_merge(base.design.rules, des.get("rules")),
                              _merge(base.design.geometry, des.get("geometry")),
                              des.get("target_lambda", base.design.target_lambda))
        section = ""
        cfg = replace(base, kind=raw.get("kind", base.kind), preset=raw.get("preset", base.preset),
                      source=source, efficiencies=eff, detector=detector, design=design,
                      run=_merge(base.run, raw.get("run")), hom=_merge(base.hom, raw.get("hom")),
                      analysis=_merge(base.analysis, raw.get("analysis")),
                      sweep=_merge(base.sweep, raw.get("sweep")))
    except (ValueError, TypeError) as exc:
        raise ConfigError([{"path": section, "message": str(exc)}]) from None
    check_consistency(cfg)
    return cfg


def check_consistency(cfg: ExperimentConfig) -> None:
    """Cross-field rules the schema cannot express."""
    errs = []
    rep = cfg.source.rep_period
    if cfg.analysis.peak_window > rep / 2:
        errs.append({"path": "analysis/peak_window",
                     "message": f"must not exceed half the repetition period ({rep / 2:.1f} ps)"})
    if cfg.kind == "hom" and cfg.hom.pulse_pair_delay >= rep / 2:
        errs.append({"path": "hom/pulse_pair_delay",
                     "message": f"must be shorter than half the repetition period ({rep / 2:.1f} ps)"})
    if errs:
        raise ConfigError(errs)


def to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical, fully expanded JSON form."""
    s = cfg.source
    out = {
        "preset": cfg.preset,
        "kind": cfg.kind,
        "source": {"qdot": asdict(s.qdot), "cavity": asdict(s.cavity),
                   "excitation": asdict(s.excitation), "blinking": asdict(s.blinking)},
        "detection": {"efficiencies": asdict(cfg.efficiencies), "detector": asdict(cfg.detector)},
        "run": asdict(cfg.run),
        "hom": asdict(cfg.hom),
        "analysis": asdict(cfg.analysis),
        "sweep": asdict(cfg.sweep),
        "design": {"rules": asdict(cfg.design.rules), "geometry": asdict(cfg.design.geometry),
                   "target_lambda": cfg.design.target_lambda},
    }
    return json.loads(json.dumps(out))  # tuples -> lists


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, indent=2) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([{"path": "", "message": f"cannot read {path}: {exc.strerror}"}]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([{"path": "", "message": f"{path}: invalid JSON ({exc})"}]) from None
    return parse_config(raw)
