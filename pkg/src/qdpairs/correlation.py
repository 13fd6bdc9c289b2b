"""Coincidence histograms and the estimators built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize, stats

from .detection import AnalyzerSetting
from .source import ORTHOGONAL


class Estimate(NamedTuple):
    value: float
    error: float

    def __float__(self):
        return float(self.value)

    def __format__(self, spec):
        return f"{format(self.value, spec)} +/- {format(self.error, spec)}"


@dataclass
class CorrelationHistogram:
    """Coincidences binned by delay; bin ``i`` is centred on ``origin + (i + 1/2) * bin_width``."""

    bin_width: float
    origin: float
    counts: np.ndarray
    rep_period: float

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def delays(self) -> np.ndarray:
        return self.origin + (np.arange(self.counts.size) + 0.5) * self.bin_width

    def __add__(self, other: "CorrelationHistogram") -> "CorrelationHistogram":
        if (other.bin_width, other.origin, other.counts.size) != (
                self.bin_width, self.origin, self.counts.size):
            raise ValueError("histograms have different binning")
        return CorrelationHistogram(self.bin_width, self.origin, self.counts + other.counts,
                                    self.rep_period)

    def mirrored(self) -> "CorrelationHistogram":
        return CorrelationHistogram(self.bin_width, self.origin, self.counts[::-1].copy(),
                                    self.rep_period)


def iter_pair_delays(a, b, max_delay: float, chunk: int = 100_000):
    """Yield arrays of ``t_b - t_a`` for every pair with ``|t_b - t_a| <= max_delay``.

    ``b`` must be sorted. Work is chunked over ``a`` to bound memory.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    reach = int(math.floor(max_delay))
    for s in range(0, a.size, chunk):
        aa = a[s:s + chunk]
        lo = np.searchsorted(b, aa - reach, side="left")
        hi = np.searchsorted(b, aa + reach, side="right")
        cnt = hi - lo
        total = int(cnt.sum())
        if total == 0:
            continue
        owner = np.repeat(np.arange(aa.size), cnt)
        offset = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        yield b[lo[owner] + offset] - aa[owner]


def pair_delays(a, b, max_delay: float) -> np.ndarray:
    parts = list(iter_pair_delays(a, b, max_delay))
    return np.concatenate(parts) if parts else np.empty(0, np.int64)


def build_histogram(records_a, records_b, bin_width: float, max_delay: float,
                    rep_period: float) -> CorrelationHistogram:
    """Start-stop-free histogram of ``t_b - t_a`` over ``[-max_delay, max_delay]``.

    ``bin_width`` is adjusted down so that ``rep_period`` is an integer number
    of bins; bins are centred on multiples of the width, which places every
    pulse peak on a bin centre and makes the binning mirror-symmetric.
    """
    per = max(1, round(rep_period / bin_width))
    bw = rep_period / per
    k = int(round(max_delay / bw))
    counts = np.zeros(2 * k + 1, dtype=np.int64)
    for d in iter_pair_delays(records_a, records_b, max_delay):
        idx = np.rint(d / bw).astype(np.int64) + k
        idx = idx[(idx >= 0) & (idx <= 2 * k)]
        counts += np.bincount(idx, minlength=2 * k + 1)
    return CorrelationHistogram(bw, -(k + 0.5) * bw, counts, rep_period)


@dataclass
class PeakAreas:
    center: int
    sides: list[tuple[float, int]] = field(default_factory=list)  # (delay in ns, counts)
    rep_period: float = 0.0  # ns

    def side(self, order: int) -> int:
        """Area of the side peak ``order`` periods away (negative = before)."""
        for delay, c in self.sides:
            if round(delay / self.rep_period) == order:
                return c
        raise KeyError(f"no side peak of order {order}")


def integrate_peaks(h: CorrelationHistogram, window: float = 2000.0) -> PeakAreas:
    """Sum counts within +/- window/2 of zero delay and of every pulse multiple."""
    if not 0 < window <= h.rep_period / 2:
        raise ValueError(f"window {window} ps must lie in (0, rep_period/2 = {h.rep_period / 2:.1f}]")
    delays = h.delays
    half = window / 2 + 1e-9 * h.bin_width
    lo_edge, hi_edge = h.origin, h.origin + h.counts.size * h.bin_width
    kmax = int((hi_edge - half) // h.rep_period)

    def area(center):
        return int(h.counts[np.abs(delays - center) <= half].sum())

    sides = []
    for k in range(-kmax, kmax + 1):
        c = k * h.rep_period
        if k == 0 or c - half < lo_edge or c + half > hi_edge:
            continue
        sides.append((c * 1e-3, area(c)))
    return PeakAreas(area(0.0), sides, h.rep_period * 1e-3)


def g2_zero(p: PeakAreas, min_delay: float = 0.0) -> Estimate:
    """Zero-delay peak over the mean side peak with ``|delay| >= min_delay`` (ns).

    Blinking bunches the short-delay side peaks; normalizing with peaks
    beyond a few correlation times removes that bias.
    """
    sides = [c for d, c in p.sides if abs(d) >= min_delay]
    if not sides:
        raise ValueError("no side peaks beyond min_delay")
    total = sum(sides)
    if total == 0:
        raise ValueError("side peak area is zero")
    mean = total / len(sides)
    g = p.center / mean
    if p.center == 0:
        return Estimate(0.0, 1.0 / mean)
    return Estimate(g, g * math.sqrt(1.0 / p.center + 1.0 / total))


def side_to_center_calibration(p: PeakAreas) -> Estimate:
    """Preparation-and-radiation efficiency from the nearest side peaks.

    The zero-delay peak is counted once for each time ordering of the XX/X
    pair, and the side area sums the peaks one period before and after, so
    the ratio is ``(S(+T) + S(-T)) / (2 C)``.
    """
    if p.center <= 0:
        raise ValueError("zero-delay peak is empty")
    a_s = p.side(1) + p.side(-1)
    ratio = a_s / (2.0 * p.center)
    err = ratio * math.sqrt((1.0 / a_s if a_s else 0.0) + 1.0 / p.center)
    return Estimate(ratio, err)


def basis_visibility(co1, cross1, cross2, co2, errors=None) -> Estimate:
    """Correlation visibility of one basis.

    Inputs are raw counts (Poisson errors assumed) or normalized g2 values
    with explicit ``errors``.
    """
    vals = np.array([co1, cross1, cross2, co2], dtype=float)
    total = vals.sum()
    if total <= 0:
        raise ValueError("visibility needs a positive total")
    v = (vals[0] - vals[1] - vals[2] + vals[3]) / total
    err = np.sqrt(vals) if errors is None else np.asarray(errors, dtype=float)
    grad = np.array([1 - v, -1 - v, -1 - v, 1 - v]) / total
    return Estimate(float(v), float(np.sqrt(np.sum((grad * err) ** 2))))


def fidelity_from_visibilities(v_lin, v_diag, v_circ) -> float:
    for v in (v_lin, v_diag, v_circ):
        if abs(float(v)) > 1:
            raise ValueError(f"visibility {float(v)} outside [-1, 1]")
    return (1 + float(v_lin) + float(v_diag) - float(v_circ)) / 4


@dataclass
class TomographyRecord:
    setting: AnalyzerSetting
    zero_peak_counts: int
    normalization: float  # mean side-peak area
    normalization_counts: int = 0  # total side counts behind the mean

    @property
    def g2(self) -> Estimate:
        g = self.zero_peak_counts / self.normalization
        rel = (1.0 / self.zero_peak_counts if self.zero_peak_counts else 0.0)
        rel += 1.0 / self.normalization_counts if self.normalization_counts else 0.0
        err = g * math.sqrt(rel) if self.zero_peak_counts else 1.0 / self.normalization
        return Estimate(g, err)


@dataclass
class TomographyResult:
    v_linear: Estimate
    v_diagonal: Estimate
    v_circular: Estimate

    @property
    def fidelity(self) -> Estimate:
        f = fidelity_from_visibilities(self.v_linear.value, self.v_diagonal.value,
                                       self.v_circular.value)
        err = math.sqrt(self.v_linear.error ** 2 + self.v_diagonal.error ** 2
                        + self.v_circular.error ** 2) / 4
        return Estimate(f, err)


def tomography_visibilities(records) -> TomographyResult:
    """Combine the 12 analyzer settings into the three basis visibilities."""
    by_setting = {str(r.setting): r for r in records}
    if len(records) != 12 or len(by_setting) != 12:
        raise ValueError("a complete tomography set needs 12 distinct settings")
    out = []
    for p in ("H", "D", "R"):
        q = ORTHOGONAL[p]
        try:
            recs = [by_setting[p + p], by_setting[p + q], by_setting[q + p], by_setting[q + q]]
        except KeyError as exc:
            raise ValueError(f"missing setting {exc.args[0]}") from None
        g = [r.g2 for r in recs]
        out.append(basis_visibility(*(e.value for e in g), errors=[e.error for e in g]))
    return TomographyResult(*out)


@dataclass
class BlinkingFit:
    on_fraction: Estimate
    t_corr: Estimate  # ns
    amplitude: float


def _envelope(d, c, beta, tc):
    return c * (beta + (1.0 - beta) * np.exp(-d / tc))


def blinking_envelope(p: PeakAreas) -> BlinkingFit:
    """Fit side-peak areas against |delay| with a telegraph-bunching envelope.

    The asymptote over the envelope extrapolated to zero delay is the
    stationary bright-state probability.
    """
    d = np.array([abs(x) for x, _ in p.sides], dtype=float)
    a = np.array([c for _, c in p.sides], dtype=float)
    if np.unique(d).size < 4:
        raise ValueError("blinking fit needs side peaks at >= 4 distinct delays")
    sigma = np.sqrt(np.maximum(a, 1.0))
    tail = a[d >= np.quantile(d, 0.75)].mean()
    head = a[d <= np.quantile(d, 0.1)].mean()
    p0 = [head, min(max(tail / head, 0.05), 0.99), d.max() / 10]
    popt, pcov = optimize.curve_fit(_envelope, d, a, p0=p0, sigma=sigma, absolute_sigma=True,
                                    bounds=([0, 0, 1e-6], [np.inf, 1.0, np.inf]), maxfev=20000)
    err = np.sqrt(np.diag(pcov))
    return BlinkingFit(Estimate(popt[1], err[1]), Estimate(popt[2], err[2]), popt[0])


def decay_delays(times, rep_period: float, lead: float = 1000.0) -> np.ndarray:
    """Delay of each timestamp after the most recent pulse; ``lead`` ps of pre-pulse jitter allowed."""
    t = np.asarray(times, dtype=float)
    n = np.floor((t + lead) / rep_period)
    return t - n * rep_period


def _exgauss(t, tau, sigma):
    if sigma <= 0:
        return np.where(t >= 0, np.exp(-np.clip(t, 0, None) / tau) / tau, 0.0)
    return stats.exponnorm.pdf(t, tau / sigma, loc=0.0, scale=sigma)


def decay_model(t, amplitude, tau, t0, sigma, rise=None):
    """Exponential decay, optionally fed by an exponential rise, convolved with a Gaussian."""
    t = np.asarray(t, dtype=float) - t0
    if rise is None or rise <= 0:
        return amplitude * _exgauss(t, tau, sigma)
    if abs(tau - rise) < 1e-9:
        tau = rise + 1e-6
    return amplitude * (tau * _exgauss(t, tau, sigma) - rise * _exgauss(t, rise, sigma)) / (tau - rise)


@dataclass
class DecayFit:
    lifetime: Estimate
    t0: float
    chi2_per_bin: float


def fit_decay(delays, jitter_fwhm: float, bin_width: float = 4.0, rise: float | None = None,
              span: float | None = None) -> DecayFit:
    """Least-squares lifetime fit of a time-resolved decay histogram.

    Gaussian detector response of known FWHM; with ``rise`` the level is fed
    by a preceding exponential decay of that lifetime (X after XX).
    """
    d = np.asarray(delays, dtype=float)
    if d.size < 10:
        raise ValueError("not enough events for a decay fit")
    sigma = jitter_fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    guess = max(float(np.mean(d[d > 0])) - (rise or 0.0), 1.0)
    hi = span if span is not None else 12.0 * (guess + (rise or 0.0))
    edges = np.arange(-5 * sigma - 5 * bin_width, hi + bin_width, bin_width)
    counts, edges = np.histogram(d, edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    err = np.sqrt(np.maximum(counts, 1.0))
    n = counts.sum() * bin_width

    def model(t, amp, tau, t0):
        return decay_model(t, amp, tau, t0, sigma, rise)

    popt, pcov = optimize.curve_fit(model, centers, counts, p0=[n, guess, 0.0], sigma=err,
                                    absolute_sigma=True, maxfev=20000)
    resid = (counts - model(centers, *popt)) / err
    return DecayFit(Estimate(popt[1], float(np.sqrt(pcov[1, 1]))), popt[2],
                    float(np.sum(resid ** 2) / max(1, counts.size - 3)))
