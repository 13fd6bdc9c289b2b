"""Linear design rules for circular-Bragg-grating (bullseye) cavities."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

from .source import CavityParams, purcell_factor

#: geometry window over which the linear rules were characterized (nm)
RADIUS_RANGE = (360.0, 395.0)
PERIOD_RANGE = (360.0, 395.0)


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CbgGeometry:
    disk_radius: float
    grating_period: float
    trench_width: float = 100.0
    n_rings: int = 10

    def __post_init__(self):
        if min(self.disk_radius, self.grating_period, self.trench_width) <= 0 or self.n_rings <= 0:
            raise ValueError("CBG geometry must be positive")

    @property
    def in_range(self) -> bool:
        return (RADIUS_RANGE[0] <= self.disk_radius <= RADIUS_RANGE[1]
                and PERIOD_RANGE[0] <= self.grating_period <= PERIOD_RANGE[1])


@dataclass(frozen=True)
class DesignRules:
    slope_radius: float = 1.14
    slope_period: float = 0.25
    ref_radius: float = 375.0
    ref_period: float = 365.0
    ref_lambda: float = 890.0
    fab_sigma: float = 0.87  # spread of the mode wavelength at fixed design, nm
    period_sigma: float = 0.0  # spread of the grating period, nm

    def __post_init__(self):
        if not (self.slope_radius > 0 and self.slope_period > 0):
            raise ValueError("design slopes must be positive")
        if self.fab_sigma < 0 or self.period_sigma < 0:
            raise ValueError("fabrication spreads must be >= 0")


def mode_wavelength(geom: CbgGeometry, rules: DesignRules) -> float:
    if not geom.in_range:
        warnings.warn(f"geometry {geom} lies outside the characterized window; extrapolating",
                      ExtrapolationWarning, stacklevel=2)
    return (rules.ref_lambda + rules.slope_radius * (geom.disk_radius - rules.ref_radius)
            + rules.slope_period * (geom.grating_period - rules.ref_period))


def solve_radius(target_lambda: float, period: float, rules: DesignRules) -> float:
    """Disk radius that puts the mode at ``target_lambda`` for a given grating period."""
    shift = target_lambda - rules.ref_lambda - rules.slope_period * (period - rules.ref_period)
    return rules.ref_radius + shift / rules.slope_radius


def detuning_budget(rules: DesignRules, cav: CavityParams) -> dict:
    """Mode-placement spread against the cavity linewidth and its Purcell cost."""
    sigma = math.hypot(rules.fab_sigma, rules.slope_period * rules.period_sigma)
    penalty = cav.f_max / purcell_factor(cav.lambda_c + sigma, cav)
    return {
        "sigma_lambda_nm": sigma,
        "radius_sigma_nm": rules.fab_sigma / rules.slope_radius,
        "cavity_fwhm_nm": cav.fwhm,
        "sigma_over_fwhm": sigma / cav.fwhm,
        "purcell_penalty": penalty,
    }


def design_report(geom: CbgGeometry, rules: DesignRules, cav: CavityParams,
                  target_lambda: float | None = None) -> dict:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lam = mode_wavelength(geom, rules)
    report = {
        "geometry": asdict(geom),
        "rules": asdict(rules),
        "mode_wavelength_nm": lam,
        "extrapolated": any(issubclass(w.category, ExtrapolationWarning) for w in caught),
        "budget": detuning_budget(rules, cav),
    }
    if target_lambda is not None:
        report["target_lambda_nm"] = target_lambda
        report["radius_for_target_nm"] = solve_radius(target_lambda, geom.grating_period, rules)
    return report
