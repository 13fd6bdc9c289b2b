"""Closed-form physics of the quantum dot in a broadband Purcell cavity.

Units throughout: wavelengths in nm, times in ps, energies in ueV.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: reduced Planck constant in ueV*ps
HBAR = 658.2

#: two-photon basis order used by every density matrix in the package
BASIS = ("HH", "HV", "VH", "VV")

_S2 = 1.0 / math.sqrt(2.0)
POLARIZATIONS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_S2, _S2], dtype=complex),
    "A": np.array([_S2, -_S2], dtype=complex),
    "R": np.array([_S2, 1j * _S2], dtype=complex),
    "L": np.array([_S2, -1j * _S2], dtype=complex),
}
ORTHOGONAL = {"H": "V", "V": "H", "D": "A", "A": "D", "R": "L", "L": "R"}

BELL_STATES = {
    "phi+": np.array([1, 0, 0, 1], dtype=complex) * _S2,
    "phi-": np.array([1, 0, 0, -1], dtype=complex) * _S2,
    "psi+": np.array([0, 1, 1, 0], dtype=complex) * _S2,
    "psi-": np.array([0, 1, -1, 0], dtype=complex) * _S2,
}


class NoRealSolutionError(ValueError):
    """The Lorentzian Purcell model cannot reproduce the requested lifetimes."""


@dataclass(frozen=True)
class CavityParams:
    lambda_c: float = 890.0
    q_factor: float = 150.0
    f_max: float = 11.3
    eta_extr_max: float = 0.9

    def __post_init__(self):
        if not self.q_factor > 0:
            raise ValueError(f"q_factor must be positive, got {self.q_factor}")
        if not self.f_max >= 1:
            raise ValueError(f"f_max must be >= 1, got {self.f_max}")
        if not 0 <= self.eta_extr_max <= 1:
            raise ValueError(f"eta_extr_max must lie in [0, 1], got {self.eta_extr_max}")
        if not self.lambda_c > 0:
            raise ValueError(f"lambda_c must be positive, got {self.lambda_c}")

    @property
    def fwhm(self) -> float:
        return self.lambda_c / self.q_factor


@dataclass(frozen=True)
class QDotParams:
    """Emitter parameters.

    ``noise_weights`` gives the composition of the admixed noise over the Bell
    states (phi+, phi-, psi+, psi-). The default of equal weights is white
    noise, i.e. ``eps_depol * I/4``.
    """

    fss_s: float = 1.2
    tau_xx_bulk: float = 750.3
    tau_x_bulk: float = 1102.3
    lambda_xx: float = 889.978
    lambda_x: float = 888.378
    gamma_cross: float = 0.0
    eps_depol: float = 0.0
    noise_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    eta_internal: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "noise_weights", tuple(float(w) for w in self.noise_weights))
        if self.fss_s < 0:
            raise ValueError("fss_s must be >= 0")
        if not (self.tau_xx_bulk > 0 and self.tau_x_bulk > 0):
            raise ValueError("bulk lifetimes must be positive")
        if not abs(self.lambda_x - self.lambda_xx) > 0:
            raise ValueError("XX and X lines must be spectrally separated")
        if self.gamma_cross < 0:
            raise ValueError("gamma_cross must be >= 0")
        if not 0 <= self.eps_depol <= 1:
            raise ValueError("eps_depol must lie in [0, 1]")
        if len(self.noise_weights) != 4 or min(self.noise_weights) < 0:
            raise ValueError("noise_weights must be four non-negative numbers")
        if not math.isclose(sum(self.noise_weights), 1.0, abs_tol=1e-9):
            raise ValueError("noise_weights must sum to 1")
        if not 0 <= self.eta_internal <= 1:
            raise ValueError("eta_internal must lie in [0, 1]")


@dataclass(frozen=True)
class ExcitationParams:
    rep_rate: float = 76.0
    p_pi_power: float = 16.0
    power: float = 16.0
    p_reexcite: float = 0.0

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ValueError("rep_rate must be positive")
        if self.p_pi_power <= 0 or self.power < 0:
            raise ValueError("p_pi_power must be positive and power non-negative")
        if not 0 <= self.p_reexcite <= 1:
            raise ValueError("p_reexcite must lie in [0, 1]")

    @property
    def rep_period(self) -> float:
        """Pulse period in ps."""
        return 1e6 / self.rep_rate

    @property
    def pulse_area(self) -> float:
        return math.pi * math.sqrt(self.power / self.p_pi_power)


@dataclass(frozen=True)
class TwoPhotonState:
    rho: np.ndarray = field(repr=False)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise ValueError(f"rho must be 4x4, got {rho.shape}")
        if not np.allclose(rho, rho.conj().T, atol=1e-12, rtol=0):
            raise ValueError("rho is not Hermitian")
        if abs(np.trace(rho) - 1) > 1e-12:
            raise ValueError(f"trace of rho is {np.trace(rho).real}, expected 1")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValueError("rho is not positive semidefinite")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def bell(cls, name: str = "phi+") -> "TwoPhotonState":
        v = BELL_STATES[name]
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls) -> "TwoPhotonState":
        return cls(np.eye(4, dtype=complex) / 4)

    def probability(self, basis_xx: str, basis_x: str) -> float:
        """Born-rule probability that both photons pass the given analyzers."""
        v = np.kron(POLARIZATIONS[basis_xx], POLARIZATIONS[basis_x])
        return float(np.real(v.conj() @ self.rho @ v))

    def fidelity(self, target: str = "phi+") -> float:
        v = BELL_STATES[target]
        return float(np.real(v.conj() @ self.rho @ v))


def purcell_factor(wavelength, cav: CavityParams):
    """Lorentzian Purcell spectrum; accepts scalars or arrays."""
    x = 2.0 * cav.q_factor * (np.asarray(wavelength, dtype=float) - cav.lambda_c) / cav.lambda_c
    f = cav.f_max / (1.0 + x * x)
    return float(f) if np.ndim(f) == 0 else f


def cavity_lifetime(tau_bulk: float, f_p: float) -> float:
    if tau_bulk <= 0:
        raise ValueError("tau_bulk must be positive")
    if f_p < 1:
        raise ValueError(f"Purcell factor {f_p} < 1: inhibition is outside the model")
    return tau_bulk / f_p


@dataclass(frozen=True)
class CavityFit:
    cavity: CavityParams
    detuning_xx: float
    detuning_x: float

    @property
    def lambda_xx(self) -> float:
        return self.cavity.lambda_c - self.detuning_xx

    @property
    def lambda_x(self) -> float:
        return self.cavity.lambda_c - self.detuning_x


def fit_cavity_to_lifetimes(tau_xx, tau_x, tau_xx_bulk, tau_x_bulk, lambda_split, q,
                            lambda_c=890.0, eta_extr_max=0.9) -> CavityFit:
    """Find the Lorentzian cavity that yields both measured lifetimes.

    Both lines sit on the same side of the resonance, X further out by
    ``lambda_split``. Detunings are returned as positive distances below
    ``lambda_c`` so that XX keeps the longer wavelength. Of the two roots the
    one with the smaller peak Purcell factor is chosen.
    """
    for name, val in dict(tau_xx=tau_xx, tau_x=tau_x, tau_xx_bulk=tau_xx_bulk,
                          tau_x_bulk=tau_x_bulk, q=q).items():
        if not val > 0:
            raise ValueError(f"{name} must be positive")
    if lambda_split < 0:
        raise ValueError("lambda_split must be >= 0")
    f1 = tau_xx_bulk / tau_xx
    f2 = tau_x_bulk / tau_x
    scale = 2.0 * q / lambda_c
    s = scale * lambda_split

    # f1 (1 + a^2) = f2 (1 + (a + s)^2), a = scaled XX detuning
    qa, qb, qc = f1 - f2, -2.0 * f2 * s, f1 - f2 - f2 * s * s
    if qa == 0 and qb == 0:
        if qc != 0:
            raise NoRealSolutionError("equal Purcell targets need zero line split")
        roots = [0.0]
    elif qa == 0:
        roots = [-qc / qb]
    else:
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            raise NoRealSolutionError(
                f"Purcell targets {f1:.4g}/{f2:.4g} are unreachable with Q={q} and split {lambda_split} nm")
        sq = math.sqrt(disc)
        roots = [(-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)]

    candidates = []
    for a in roots:
        if a * (a + s) < -1e-12 * (1.0 + s * s):
            continue  # lines straddle the resonance
        f_max = f1 * (1 + a * a)
        if f_max >= 1:
            candidates.append((f_max, a))
    if not candidates:
        raise NoRealSolutionError("no same-side solution with f_max >= 1")
    f_max, a = min(candidates)
    cav = CavityParams(lambda_c=lambda_c, q_factor=q, f_max=f_max, eta_extr_max=eta_extr_max)
    return CavityFit(cav, detuning_xx=a / scale, detuning_x=(a + s) / scale)


def rabi_preparation_probability(exc: ExcitationParams) -> float:
    return math.sin(exc.pulse_area / 2.0) ** 2


def _noise_matrix(weights) -> np.ndarray:
    rho = np.zeros((4, 4), dtype=complex)
    for w, v in zip(weights, BELL_STATES.values()):
        rho += w * np.outer(v, v.conj())
    return rho


def rho_components(qd: QDotParams) -> tuple[np.ndarray, np.ndarray]:
    """Split the model state as ``rho(tau) = A + m B + conj(m) B^dagger``.

    ``m(tau) = exp(i S tau / hbar - gamma tau)`` is the HH/VV coherence. The
    split lets vectorized code evaluate Born probabilities for many delays
    without building a matrix per event.
    """
    a = np.zeros((4, 4), dtype=complex)
    a[0, 0] = a[3, 3] = 0.5
    b = np.zeros((4, 4), dtype=complex)
    b[0, 3] = 0.5
    keep = 1.0 - qd.eps_depol
    return keep * a + qd.eps_depol * _noise_matrix(qd.noise_weights), keep * b


def coherence_at_delay(qd: QDotParams, tau):
    tau = np.asarray(tau, dtype=float)
    return np.exp((1j * qd.fss_s / HBAR - qd.gamma_cross * 1e-3) * tau)


def _assemble(qd: QDotParams, m: complex) -> TwoPhotonState:
    a, b = rho_components(qd)
    rho = a + m * b + np.conj(m) * b.conj().T
    return TwoPhotonState(rho)


def rho_at_delay(qd: QDotParams, tau: float) -> TwoPhotonState:
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return _assemble(qd, complex(coherence_at_delay(qd, tau)))


def mean_coherence(qd: QDotParams, gamma_x: float) -> complex:
    """HH/VV coherence averaged over an exponential delay distribution of rate gamma_x (1/ps)."""
    if not gamma_x > 0:
        raise ValueError("gamma_x must be positive")
    return gamma_x / (gamma_x + qd.gamma_cross * 1e-3 - 1j * qd.fss_s / HBAR)


def rho_time_integrated(qd: QDotParams, gamma_x: float) -> TwoPhotonState:
    return _assemble(qd, mean_coherence(qd, gamma_x))


def basis_pair(basis: str) -> tuple[str, str]:
    return {"linear": ("H", "V"), "diagonal": ("D", "A"), "circular": ("R", "L")}[basis]


def predict_visibilities(rho: TwoPhotonState) -> tuple[float, float, float]:
    out = []
    for basis in ("linear", "diagonal", "circular"):
        p, q = basis_pair(basis)
        co1, cross1, cross2, co2 = (rho.probability(p, p), rho.probability(p, q),
                                    rho.probability(q, p), rho.probability(q, q))
        out.append((co1 - cross1 - cross2 + co2) / (co1 + cross1 + cross2 + co2))
    return tuple(out)
