"""From emission events to time tags: analyzers, loss, jitter, darks, dead time."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cascade import EmissionEvents
from .source import (ORTHOGONAL, POLARIZATIONS, QDotParams, TwoPhotonState,
                     coherence_at_delay, rho_components)

CH_XX = 0
CH_X = 1

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass(frozen=True)
class SetupEfficiencies:
    eta_det: float = 0.76
    eta_path: float = 0.25
    eta_fiber: float = 0.65
    eta_extr_xx: float = 0.795
    eta_extr_x: float = 0.782

    def __post_init__(self):
        for name in ("eta_det", "eta_path", "eta_fiber", "eta_extr_xx", "eta_extr_x"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def eta_setup(self) -> float:
        return self.eta_path * self.eta_fiber * self.eta_det

    @property
    def eta_xx(self) -> float:
        return self.eta_extr_xx * self.eta_setup

    @property
    def eta_x(self) -> float:
        return self.eta_extr_x * self.eta_setup


@dataclass(frozen=True)
class DetectorParams:
    jitter_fwhm: float = 20.0  # ps
    dark_rate: float = 100.0  # 1/s
    dead_time: float = 10_000.0  # ps

    def __post_init__(self):
        if min(self.jitter_fwhm, self.dark_rate, self.dead_time) < 0:
            raise ValueError("detector parameters must be non-negative")


IDEAL_DETECTOR = DetectorParams(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class AnalyzerSetting:
    basis_xx: str
    basis_x: str

    def __post_init__(self):
        for b in (self.basis_xx, self.basis_x):
            if b not in POLARIZATIONS:
                raise ValueError(f"unknown polarization {b!r}; expected one of HVDARL")

    def __str__(self):
        return self.basis_xx + self.basis_x


TOMOGRAPHY_SETTINGS = tuple(
    AnalyzerSetting(a, b)
    for p, q in (("H", "V"), ("D", "A"), ("R", "L"))
    for a, b in ((p, p), (p, q), (q, p), (q, q))
)


@dataclass
class TimeTags:
    """Detection records as parallel channel/timestamp arrays (integer ps)."""

    channel: np.ndarray
    timestamp: np.ndarray

    def __post_init__(self):
        self.channel = np.asarray(self.channel, dtype=np.uint8)
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        if self.channel.shape != self.timestamp.shape:
            raise ValueError("channel and timestamp arrays differ in length")

    def __len__(self):
        return len(self.timestamp)

    def __eq__(self, other):
        return (isinstance(other, TimeTags) and np.array_equal(self.channel, other.channel)
                and np.array_equal(self.timestamp, other.timestamp))

    def sorted(self) -> "TimeTags":
        order = np.lexsort((self.channel, self.timestamp))
        return TimeTags(self.channel[order], self.timestamp[order])

    def times(self, channel: int) -> np.ndarray:
        """Sorted timestamps of one channel."""
        return np.sort(self.timestamp[self.channel == channel])

    @classmethod
    def concat(cls, parts) -> "TimeTags":
        parts = list(parts)
        if not parts:
            return cls(np.empty(0, np.uint8), np.empty(0, np.int64))
        return cls(np.concatenate([p.channel for p in parts]),
                   np.concatenate([p.timestamp for p in parts]))


def _joint_probabilities(qd: QDotParams, tau, setting: AnalyzerSetting) -> np.ndarray:
    """Born probabilities (pass/pass, pass/fail, fail/pass, fail/fail), shape (4, n)."""
    a, b = rho_components(qd)
    m = coherence_at_delay(qd, tau)
    out = []
    for xx in (setting.basis_xx, ORTHOGONAL[setting.basis_xx]):
        for x in (setting.basis_x, ORTHOGONAL[setting.basis_x]):
            v = np.kron(POLARIZATIONS[xx], POLARIZATIONS[x])
            const = np.real(v.conj() @ a @ v)
            coh = v.conj() @ b @ v
            out.append(const + 2.0 * np.real(m * coh))
    return np.clip(np.array(out), 0.0, None)


def project_pair(state: TwoPhotonState, setting: AnalyzerSetting, rng) -> tuple[bool, bool]:
    """Sample whether the XX and X photons pass their polarizers."""
    probs = []
    for xx in (setting.basis_xx, ORTHOGONAL[setting.basis_xx]):
        for x in (setting.basis_x, ORTHOGONAL[setting.basis_x]):
            probs.append(state.probability(xx, x))
    k = int(np.searchsorted(np.cumsum(probs), rng.random() * sum(probs), side="right"))
    k = min(k, 3)
    return k < 2, k % 2 == 0


def _sample_outcomes(qd, tau, setting, rng):
    n = len(tau)
    u = rng.random(n)
    if setting is None:
        return np.ones(n, bool), np.ones(n, bool)
    cum = np.cumsum(_joint_probabilities(qd, tau, setting), axis=0)
    k = (u[None, :] * cum[-1] >= cum).sum(axis=0)
    return k < 2, k % 2 == 0


def apply_dead_time(t: np.ndarray, dead_time: float) -> np.ndarray:
    """Drop records closer than ``dead_time`` to the last kept record. ``t`` sorted."""
    if dead_time <= 0 or t.size < 2:
        return t
    keep = np.ones(t.size, dtype=bool)
    for j in np.flatnonzero(np.diff(t) < dead_time) + 1:
        k = j - 1
        while not keep[k]:
            k -= 1
        if t[j] - t[k] < dead_time:
            keep[j] = False
    return t[keep]


def finalize_channel(times: np.ndarray, channel: int, det: DetectorParams, duration: float,
                     rng) -> TimeTags:
    """Jitter, dark counts, digitization and dead time for one detector."""
    if det.jitter_fwhm > 0:
        times = times + rng.normal(0.0, det.jitter_fwhm * FWHM_TO_SIGMA, times.size)
    n_dark = rng.poisson(det.dark_rate * duration * 1e-12)
    times = np.concatenate([times, rng.uniform(0.0, duration, n_dark)])
    ts = np.rint(times).astype(np.int64)
    ts = np.sort(ts[(ts >= 0) & (ts < duration)])
    ts = apply_dead_time(ts, det.dead_time)
    return TimeTags(np.full(ts.size, channel, np.uint8), ts)


def apply_chain(events: EmissionEvents, eff: SetupEfficiencies, det: DetectorParams,
                setting: AnalyzerSetting | None, duration: float, rng,
                qdot: QDotParams | None = None) -> TimeTags:
    """Detect XX photons on channel 0 and X photons on channel 1.

    ``setting=None`` removes the polarizers. Loss uses a uniform draw per
    photon compared against the channel efficiency, so runs that differ only
    in efficiency see nested sets of surviving photons.
    """
    if setting is not None and qdot is None:
        raise ValueError("a polarization setting needs the emitter parameters")
    n = len(events)
    pass_xx, pass_x = _sample_outcomes(qdot, events.tau, setting, rng)
    keep_xx = pass_xx & (rng.random(n) < eff.eta_xx)
    keep_x = pass_x & (rng.random(n) < eff.eta_x)
    tags = [finalize_channel(events.t_xx[keep_xx], CH_XX, det, duration, rng),
            finalize_channel(events.t_x[keep_x], CH_X, det, duration, rng)]
    return TimeTags.concat(tags).sorted()


def apply_hbt(events: EmissionEvents, species: str, eff: SetupEfficiencies,
              det: DetectorParams, duration: float, rng) -> TimeTags:
    """Send one photon species through a 50:50 splitter onto channels 0 and 1."""
    if species == "xx":
        t, eta = events.t_xx, eff.eta_xx
    elif species == "x":
        t, eta = events.t_x, eff.eta_x
    else:
        raise ValueError(f"species must be 'xx' or 'x', got {species!r}")
    n = len(events)
    port = rng.random(n) < 0.5
    kept = rng.random(n) < eta
    tags = [finalize_channel(t[kept & port], 0, det, duration, rng),
            finalize_channel(t[kept & ~port], 1, det, duration, rng)]
    return TimeTags.concat(tags).sorted()


def predict_rates(eff: SetupEfficiencies, pair_rate: float, rep_rate: float):
    """Closed-form singles and coincidence rates (1/s); ``rep_rate`` in MHz."""
    pairs = rep_rate * 1e6 * pair_rate
    return pairs * eff.eta_xx, pairs * eff.eta_x, pairs * eff.eta_xx * eff.eta_x


def klyshko(r_cc: float, r_singles: float) -> float:
    if r_singles <= 0:
        raise ValueError("singles rate must be positive")
    return r_cc / r_singles


def pair_extraction_efficiency(eta_extr_xx: float, eta_extr_x: float) -> float:
    for v in (eta_extr_xx, eta_extr_x):
        if not 0 <= v <= 1:
            raise ValueError("extraction efficiencies must lie in [0, 1]")
    return eta_extr_xx * eta_extr_x
