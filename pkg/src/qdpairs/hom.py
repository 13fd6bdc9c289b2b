"""Two-photon interference of consecutively emitted photons in an unbalanced Mach-Zehnder."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cascade import (STREAM_EMISSION, STREAM_HOM, SourceParams, make_rng,
                      sample_cascades)
from .correlation import Estimate, pair_delays
from .detection import (FWHM_TO_SIGMA, DetectorParams, SetupEfficiencies, TimeTags,
                        finalize_channel)

OUT1 = 0
OUT2 = 1


@dataclass(frozen=True)
class Wavepacket:
    t0: float
    gamma: float
    dephase_rate: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.dephase_rate < 0:
            raise ValueError("dephase_rate must be >= 0")

    def amplitude(self, t):
        t = np.asarray(t, dtype=float)
        dt = t - self.t0
        return np.where(dt >= 0, np.sqrt(self.gamma) * np.exp(-0.5 * self.gamma * np.clip(dt, 0, None)), 0.0)


@dataclass(frozen=True)
class HomConfig:
    pulse_pair_delay: float = 2000.0  # ps
    species: str = "xx"
    polarization: str = "parallel"
    bs_reflectivity: float = 0.5
    classical_visibility: float = 1.0
    dephase_rate_xx: float = 0.0  # 1/ps
    dephase_rate_x: float = 0.0  # 1/ps

    def __post_init__(self):
        if not self.pulse_pair_delay > 0:
            raise ValueError("pulse_pair_delay must be positive")
        if self.species not in ("xx", "x"):
            raise ValueError("species must be 'xx' or 'x'")
        if self.polarization not in ("parallel", "cross"):
            raise ValueError("polarization must be 'parallel' or 'cross'")
        if not 0 < self.bs_reflectivity < 1:
            raise ValueError("bs_reflectivity must lie in (0, 1)")
        if not 0 <= self.classical_visibility <= 1:
            raise ValueError("classical_visibility must lie in [0, 1]")
        if min(self.dephase_rate_xx, self.dephase_rate_x) < 0:
            raise ValueError("dephasing rates must be >= 0")

    @property
    def parallel(self) -> bool:
        return self.polarization == "parallel"

    @property
    def dephase_rate(self) -> float:
        return self.dephase_rate_xx if self.species == "xx" else self.dephase_rate_x

    @property
    def contrast(self) -> float:
        """Two-photon contrast of the interferometer: squared mode overlap."""
        return self.classical_visibility ** 2


def coincidence_density(p1: Wavepacket, p2: Wavepacket, t1, t2, parallel: bool,
                        bs_reflectivity: float = 0.5, classical_visibility: float = 1.0):
    """Joint density (1/ps^2) of one click at output 1 at ``t1`` and one at output 2 at ``t2``.

    ``p1`` enters the splitter through the port that transmits to output 1.
    """
    r = bs_reflectivity
    t = 1.0 - r
    a1, a2 = p1.amplitude(t1), p2.amplitude(t2)
    b1, b2 = p1.amplitude(t2), p2.amplitude(t1)
    direct = t * t * (a1 * a2) ** 2 + r * r * (b1 * b2) ** 2
    if not parallel:
        return direct
    damp = np.exp(-(p1.dephase_rate + p2.dephase_rate) * np.abs(np.asarray(t1) - np.asarray(t2)))
    return direct - 2 * r * t * classical_visibility ** 2 * a1 * a2 * b1 * b2 * damp


def _pair_acceptance(t1, t2, t0a, t0b, gamma, kappa, rt, tt, rr, contrast):
    """Probability of keeping a proposed coincidence given the interference term."""
    def amp2(t, t0):
        dt = t - t0
        return np.where(dt >= 0, gamma * np.exp(-gamma * np.clip(dt, 0, None)), 0.0)
    a = amp2(t1, t0a) * amp2(t2, t0b)
    b = amp2(t2, t0a) * amp2(t1, t0b)
    denom = tt * a + rr * b
    inter = 2 * rt * contrast * np.sqrt(a * b) * np.exp(-kappa * np.abs(t1 - t2))
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(denom > 0, 1.0 - inter / denom, 1.0)
    return np.clip(acc, 0.0, 1.0)


def _hom_block(source: SourceParams, hom: HomConfig, first_pair: int, n_pairs: int, seed: int,
               block: int, eff: SetupEfficiencies | None):
    rep = source.rep_period
    delta = hom.pulse_pair_delay
    pairs = np.arange(first_pair, first_pair + n_pairs, dtype=np.int64)
    pulse_index = np.empty(2 * n_pairs, dtype=np.int64)
    pulse_index[0::2] = 2 * pairs
    pulse_index[1::2] = 2 * pairs + 1
    pulse_times = pairs.repeat(2) * rep
    pulse_times[1::2] += delta

    events = sample_cascades(pulse_times, pulse_index, source, make_rng(seed, STREAM_EMISSION, block))
    if hom.species == "xx":
        gamma = 1.0 / source.tau_xx
        start = pulse_times[events.pulse_index - 2 * first_pair]
        emit = events.t_xx
        eta = eff.eta_xx if eff else 1.0
    else:
        gamma = 1.0 / source.tau_x
        start = events.t_xx
        emit = events.t_x
        eta = eff.eta_x if eff else 1.0

    rng = make_rng(seed, STREAM_HOM, block)
    n = len(events)
    long_arm = rng.random(n) < 0.5
    u_port = rng.random(n)
    u_accept = rng.random(n)
    u_bunch = rng.random(n) < 0.5
    kept = rng.random(n) < eta

    r = hom.bs_reflectivity
    tr = 1.0 - r
    arrive = emit + delta * long_arm
    t0 = start + delta * long_arm
    # long arm feeds the splitter port that transmits to output 1
    out1 = np.where(long_arm, u_port < tr, u_port < r)

    # designated interfering pair: primary of the first pulse via the long arm,
    # primary of the second pulse via the short arm
    primary = ~events.is_reexcitation
    slot = np.full(2 * n_pairs, -1, dtype=np.int64)
    slot[events.pulse_index[primary] - 2 * first_pair] = np.flatnonzero(primary)
    i1, i2 = slot[0::2], slot[1::2]
    ok = (i1 >= 0) & (i2 >= 0)
    i1, i2 = i1[ok], i2[ok]
    ok = long_arm[i1] & ~long_arm[i2]
    i1, i2 = i1[ok], i2[ok]

    # independent routing as proposal: photon 1 -> out1 w.p. T, photon 2 -> out1 w.p. R
    p1_out1 = u_port[i1] < tr
    p2_out1 = u_port[i2] < r
    coinc = p1_out1 != p2_out1
    t_out1 = np.where(p1_out1, arrive[i1], arrive[i2])
    t_out2 = np.where(p1_out1, arrive[i2], arrive[i1])
    t0_a, t0_b = t0[i1], t0[i2]
    kappa = 2.0 * hom.dephase_rate
    contrast = hom.contrast if hom.parallel else 0.0
    acc = _pair_acceptance(t_out1, t_out2, t0_a, t0_b, gamma, kappa, r * tr, tr * tr, r * r, contrast)
    bunch = coinc & (u_accept[i1] >= acc)
    out1[i1] = np.where(bunch, u_bunch[i1], p1_out1)
    out1[i2] = np.where(bunch, u_bunch[i1], p2_out1)

    return (arrive[kept & out1], arrive[kept & ~out1])


def simulate_hom(source: SourceParams, hom: HomConfig, n_pulse_pairs: int, seed: int,
                 eff: SetupEfficiencies | None = None, det: DetectorParams | None = None,
                 block_size: int = 1_000_000) -> TimeTags:
    """Time tags at the two interferometer outputs for ``n_pulse_pairs`` double pulses.

    Cross and parallel runs with the same seed share emission times and arm
    choices. ``eff=None`` means lossless detection.
    """
    if n_pulse_pairs <= 0:
        raise ValueError("n_pulse_pairs must be positive")
    if hom.pulse_pair_delay >= source.rep_period / 2:
        raise ValueError("pulse_pair_delay must be shorter than half the repetition period")
    det = det or DetectorParams()
    duration = n_pulse_pairs * source.rep_period
    o1, o2 = [], []
    for b, first in enumerate(range(0, n_pulse_pairs, block_size)):
        n = min(block_size, n_pulse_pairs - first)
        a, c = _hom_block(source, hom, first, n, seed, b, eff)
        o1.append(a)
        o2.append(c)
    rng = make_rng(seed, STREAM_HOM, 1 << 20)
    return TimeTags.concat([finalize_channel(np.concatenate(o1), OUT1, det, duration, rng),
                            finalize_channel(np.concatenate(o2), OUT2, det, duration, rng)]).sorted()


def coincidence_delays(tags: TimeTags, half_width: float) -> np.ndarray:
    """Delays ``t_out2 - t_out1`` of all coincidences within ``half_width``."""
    return pair_delays(tags.times(OUT1), tags.times(OUT2), half_width)


def center_counts(tags: TimeTags, pulse_pair_delay: float, window: float | None = None) -> int:
    half = pulse_pair_delay / 2
    if window is not None:
        half = min(half, window)
    d = coincidence_delays(tags, half)
    return int(np.count_nonzero(np.abs(d) <= half))


def hom_visibility(center_cross, center_parallel) -> Estimate:
    if center_cross <= 0:
        raise ValueError("cross-polarized central peak is empty")
    v = (center_cross - center_parallel) / center_cross
    ratio = center_parallel / center_cross
    err = ratio * math.sqrt((1 / center_parallel if center_parallel else 0) + 1 / center_cross)
    if center_parallel == 0:
        err = 1 / center_cross
    return Estimate(v, err)


class CorrectedVisibility(NamedTuple):
    value: float
    clamped: bool


def correct_visibility(v_raw, g2_zero, bs_reflectivity=0.5, classical_visibility=1.0) -> CorrectedVisibility:
    """Intrinsic indistinguishability from a raw visibility.

    Multi-photon events add ``2 g2`` (relative) non-interfering coincidences
    to both central peaks; they are removed first. The result is then divided
    by the splitter factor ``2RT/(R^2+T^2)`` and the two-photon contrast
    ``classical_visibility^2``.
    """
    r = bs_reflectivity
    t = 1 - r
    if not 0 < r < 1 or not 0 < classical_visibility <= 1 or g2_zero < 0:
        raise ValueError("invalid correction inputs")
    v = float(v_raw) * (1 + 2 * g2_zero) * (r * r + t * t) / (2 * r * t) / classical_visibility ** 2
    if v > 1:
        warnings.warn(f"corrected visibility {v:.4f} exceeds 1; clamped", RuntimeWarning, stacklevel=2)
        return CorrectedVisibility(1.0, True)
    return CorrectedVisibility(v, False)


def temporal_filter_visibility(cross: TimeTags, parallel: TimeTags, window: float,
                               pulse_pair_delay: float) -> Estimate:
    """Visibility from central-peak coincidences with ``|t1 - t2| <= window`` only."""
    if not window > 0:
        raise ValueError("window must be positive")
    c = center_counts(cross, pulse_pair_delay, window)
    p = center_counts(parallel, pulse_pair_delay, window)
    if c == 0:
        raise ValueError("no coincidences survive the temporal filter")
    return hom_visibility(c, p)


def visibility_curve(cross: TimeTags, parallel: TimeTags, windows, pulse_pair_delay: float):
    """Filtered visibility for several windows from one pass over the coincidences."""
    half = pulse_pair_delay / 2
    dc = np.sort(np.abs(coincidence_delays(cross, half)))
    dp = np.sort(np.abs(coincidence_delays(parallel, half)))
    out = []
    for w in windows:
        w = min(float(w), half)
        c = int(np.searchsorted(dc, w, side="right"))
        p = int(np.searchsorted(dp, w, side="right"))
        out.append(hom_visibility(c, p))
    return out


# --- analytic coincidence model, used for calibration and as an oracle ---

def delay_profiles(gamma, kappa, offset, d):
    """Direct and interference coincidence densities versus ``d = t2 - t1``.

    For wavepackets of rate ``gamma`` whose starts differ by ``offset``:
    direct(d) = gamma/2 exp(-gamma |d - offset|),
    interference(d) = gamma/2 exp(-gamma |offset|) exp(-(gamma + kappa) |d|).
    """
    d = np.asarray(d, dtype=float)
    direct = 0.5 * gamma * np.exp(-gamma * np.abs(d - offset))
    inter = 0.5 * gamma * np.exp(-gamma * abs(offset)) * np.exp(-(gamma + kappa) * np.abs(d))
    return direct, inter


def _raw_profiles(hom: HomConfig, gamma: float, offset_lifetime: float | None,
                  step: float, span: float):
    kappa = 2 * hom.dephase_rate
    d = np.arange(-span, span + step / 2, step)
    if not offset_lifetime:
        f, g = delay_profiles(gamma, kappa, 0.0, d)
        return d, f, f[::-1], g
    g_o = 1.0 / offset_lifetime
    w = np.exp(-g_o * np.abs(d))
    w /= w.sum()
    fwd = np.zeros_like(d)
    inter = np.zeros_like(d)
    for si, wi in zip(d, w):
        if wi < 1e-12:
            continue
        f, g = delay_profiles(gamma, kappa, si, d)
        fwd += wi * f
        inter += wi * g
    return d, fwd, fwd[::-1], inter


def _smear(y, jitter_fwhm, step):
    if jitter_fwhm <= 0:
        return y
    sig = math.sqrt(2) * jitter_fwhm * FWHM_TO_SIGMA
    k = np.arange(-6 * sig, 6 * sig + step / 2, step)
    kern = np.exp(-0.5 * (k / sig) ** 2)
    return np.convolve(y, kern / kern.sum(), mode="same")


def analytic_profiles(hom: HomConfig, source: SourceParams, jitter_fwhm: float = 0.0,
                      multiphoton: bool = True, step: float = 0.5):
    """Cross and parallel central-peak densities versus ``d = t_out2 - t_out1``.

    Normalized to one designated photon pair per pulse pair. X photons
    inherit the jitter of the preceding XX decay. With ``multiphoton`` the
    re-excitation photons add non-interfering coincidences: extra cross-pulse
    pairs, weight ``(1+r)^2 - 1``, and same-pulse pairs through one arm,
    weight ``4 r / q`` with ``q`` the cascade probability.
    """
    if hom.species == "xx":
        gamma, offset = 1.0 / source.tau_xx, None
    else:
        gamma, offset = 1.0 / source.tau_x, source.tau_xx
    span = 25.0 / gamma + 12 * (offset or 0.0) + 10 * jitter_fwhm
    d, fwd, bwd, inter = _raw_profiles(hom, gamma, offset, step, span)
    r = hom.bs_reflectivity
    t = 1 - r
    direct = t * t * fwd + r * r * bwd
    cross = direct.copy()
    r_ex = source.excitation.p_reexcite
    q = source.cascade_probability
    if multiphoton and r_ex > 0 and q > 0:
        cross = (1 + r_ex) ** 2 * direct + (4 * r_ex / q) * 2 * r * t * 0.5 * (fwd + bwd)
    par = cross - 2 * r * t * hom.contrast * inter
    return d, _smear(cross, jitter_fwhm, step), _smear(par, jitter_fwhm, step)


def analytic_visibility(hom: HomConfig, source: SourceParams, windows=None,
                        jitter_fwhm: float = 0.0, multiphoton: bool = True):
    """Expected (optionally temporally filtered) visibility from the analytic densities."""
    d, cross, par = analytic_profiles(hom, source, jitter_fwhm, multiphoton)
    single = windows is None or np.ndim(windows) == 0
    ws = [np.inf] if windows is None else np.atleast_1d(windows)
    out = []
    for w in ws:
        m = np.abs(d) <= min(w, hom.pulse_pair_delay / 2) + 1e-9
        out.append(1 - par[m].sum() / cross[m].sum())
    return out[0] if single else np.array(out)
