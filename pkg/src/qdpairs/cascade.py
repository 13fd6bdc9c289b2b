"""Seeded Monte-Carlo generation of XX-X cascade emission events."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .source import (CavityParams, ExcitationParams, QDotParams, TwoPhotonState,
                     cavity_lifetime, purcell_factor, rabi_preparation_probability,
                     rho_at_delay)

# RNG stream identifiers, combined with the user seed and a block index
STREAM_EMISSION = 0
STREAM_DETECTION = 1
STREAM_HOM = 2


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream identified by ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def default_threads() -> int:
    env = os.environ.get("QTT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class BlinkingParams:
    on_fraction: float = 1.0
    t_corr: float = 100.0  # ns

    def __post_init__(self):
        if not 0 < self.on_fraction <= 1:
            raise ValueError("on_fraction must lie in (0, 1]")
        if not self.t_corr > 0:
            raise ValueError("t_corr must be positive")


@dataclass(frozen=True)
class SourceParams:
    qdot: QDotParams = field(default_factory=QDotParams)
    cavity: CavityParams = field(default_factory=CavityParams)
    excitation: ExcitationParams = field(default_factory=ExcitationParams)
    blinking: BlinkingParams = field(default_factory=BlinkingParams)

    @property
    def purcell_xx(self) -> float:
        return purcell_factor(self.qdot.lambda_xx, self.cavity)

    @property
    def purcell_x(self) -> float:
        return purcell_factor(self.qdot.lambda_x, self.cavity)

    @property
    def tau_xx(self) -> float:
        return cavity_lifetime(self.qdot.tau_xx_bulk, self.purcell_xx)

    @property
    def tau_x(self) -> float:
        return cavity_lifetime(self.qdot.tau_x_bulk, self.purcell_x)

    @property
    def rep_period(self) -> float:
        return self.excitation.rep_period

    @property
    def cascade_probability(self) -> float:
        """Probability that a bright-state pulse yields a radiated cascade."""
        return self.qdot.eta_internal * rabi_preparation_probability(self.excitation)

    @property
    def pair_rate(self) -> float:
        """Expected cascades per pulse, re-excitation included."""
        return (self.blinking.on_fraction * self.cascade_probability
                * (1.0 + self.excitation.p_reexcite))

    @property
    def correlated_fraction(self) -> float:
        """Share of zero-delay XX-X coincidences whose photons come from one cascade.

        A re-excited pulse holds two cascades and so two uncorrelated pairings.
        """
        r = self.excitation.p_reexcite
        return (1.0 + r) / (1.0 + 3.0 * r)


@dataclass(frozen=True)
class SimConfig:
    source: SourceParams
    n_pulses: int
    seed: int = 0
    block_size: int = 1_000_000

    def __post_init__(self):
        if self.n_pulses <= 0:
            raise ValueError("n_pulses must be positive")
        if self.block_size <= 0:
            raise ValueError("block_size must be positive")


@dataclass
class EmissionEvents:
    """Column store of cascade events, ordered by pulse index."""

    pulse_index: np.ndarray
    t_xx: np.ndarray
    t_x: np.ndarray
    is_reexcitation: np.ndarray

    def __len__(self):
        return len(self.pulse_index)

    @property
    def tau(self) -> np.ndarray:
        return self.t_x - self.t_xx

    def state(self, i: int, qd: QDotParams) -> TwoPhotonState:
        """Polarization state attached to event ``i``."""
        return rho_at_delay(qd, float(self.tau[i]))

    @classmethod
    def empty(cls) -> "EmissionEvents":
        return cls(np.empty(0, np.int64), np.empty(0), np.empty(0), np.empty(0, bool))

    @classmethod
    def concat(cls, parts) -> "EmissionEvents":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("pulse_index", "t_xx", "t_x", "is_reexcitation")))


def telegraph_sample(params: BlinkingParams, t, rng: np.random.Generator) -> np.ndarray:
    """Bright/dark state of a two-state Markov emitter at times ``t`` (ps).

    The dwell times are exponential with means ``t_corr/(1-on)`` (bright) and
    ``t_corr/on`` (dark), so the correlation time of the process is ``t_corr``
    and the stationary bright probability is ``on_fraction``.
    """
    t = np.asarray(t, dtype=float)
    beta = params.on_fraction
    if beta >= 1.0 or t.size == 0:
        return np.ones(t.shape, dtype=bool)
    tc = params.t_corr * 1e3
    mean_on, mean_off = tc / (1.0 - beta), tc / beta
    t0, t1 = float(t.min()), float(t.max())
    start_on = bool(rng.random() < beta)
    first, second = (mean_on, mean_off) if start_on else (mean_off, mean_on)

    switches = []
    last = t0
    while last <= t1:
        n = int((t1 - last) / (mean_on + mean_off) * 1.2) + 16
        dwell = np.empty(2 * n)
        dwell[0::2] = rng.exponential(first, n)
        dwell[1::2] = rng.exponential(second, n)
        chunk = last + np.cumsum(dwell)
        switches.append(chunk)
        last = chunk[-1]
    switches = np.concatenate(switches)
    flips = np.searchsorted(switches, t, side="right")
    return (flips % 2 == 0) == start_on


def sample_cascade_times(tau_xx: float, tau_x: float, rng: np.random.Generator, size=None):
    """Independent exponential XX and X decay delays (ps)."""
    if tau_xx < 0 or tau_x < 0:
        raise ValueError("lifetimes must be non-negative")
    return rng.exponential(tau_xx, size), rng.exponential(tau_x, size)


def sample_cascades(pulse_times: np.ndarray, pulse_index: np.ndarray,
                    source: SourceParams, rng: np.random.Generator) -> EmissionEvents:
    """Cascade events for an arbitrary set of excitation pulse times."""
    n = len(pulse_times)
    on = telegraph_sample(source.blinking, pulse_times, rng)
    excite = rng.random(n) < source.cascade_probability
    reexcite = rng.random(n) < source.excitation.p_reexcite
    primary = on & excite
    second = primary & reexcite

    idx = np.concatenate([np.flatnonzero(primary), np.flatnonzero(second)])
    flag = np.zeros(idx.size, dtype=bool)
    flag[primary.sum():] = True
    order = np.lexsort((flag, idx))
    idx, flag = idx[order], flag[order]

    dt_xx, dt_x = sample_cascade_times(source.tau_xx, source.tau_x, rng, idx.size)
    t_xx = pulse_times[idx] + dt_xx
    return EmissionEvents(pulse_index[idx].astype(np.int64), t_xx, t_xx + dt_x, flag)


def _block(cfg: SimConfig, b: int) -> EmissionEvents:
    start = b * cfg.block_size
    n = min(cfg.block_size, cfg.n_pulses - start)
    index = np.arange(start, start + n, dtype=np.int64)
    rng = make_rng(cfg.seed, STREAM_EMISSION, b)
    return sample_cascades(index * cfg.source.rep_period, index, cfg.source, rng)


def simulate_emissions(cfg: SimConfig, threads: int | None = None) -> EmissionEvents:
    """Run all pulse blocks and concatenate them in block order.

    Each block draws from its own substream keyed by (seed, block index), so
    the result depends only on ``(seed, block_size, config)``. Blinking
    restarts from the stationary distribution at block boundaries.
    """
    n_blocks = -(-cfg.n_pulses // cfg.block_size)
    threads = min(threads or default_threads(), n_blocks)
    if threads <= 1:
        parts = [_block(cfg, b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda b: _block(cfg, b), range(n_blocks)))
    return EmissionEvents.concat(parts)


EVENT_DTYPE = np.dtype([("pulse_index", "<u8"), ("t_xx", "<u8"), ("t_x", "<u8"), ("flags", "u1")])
FLAG_REEXCITATION = 0x01


def write_events(path, events: EmissionEvents) -> None:
    """Spill events as packed little-endian 25-byte records; times rounded to ps."""
    rec = np.empty(len(events), dtype=EVENT_DTYPE)
    rec["pulse_index"] = events.pulse_index
    rec["t_xx"] = np.rint(events.t_xx)
    rec["t_x"] = np.rint(events.t_x)
    rec["flags"] = np.where(events.is_reexcitation, FLAG_REEXCITATION, 0)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def read_events(path) -> EmissionEvents:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % EVENT_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated event record at byte "
                         f"{raw.size - raw.size % EVENT_DTYPE.itemsize}")
    rec = raw.view(EVENT_DTYPE)
    return EmissionEvents(rec["pulse_index"].astype(np.int64), rec["t_xx"].astype(float),
                          rec["t_x"].astype(float), (rec["flags"] & FLAG_REEXCITATION) > 0)
