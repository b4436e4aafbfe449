"""Forward split-step Fourier simulation of the WDM link.

Scalar NLSE with the sign convention

    dA/dz = -(alpha/2) A - j (beta2/2) d^2A/dt^2 + j gamma |A|^2 A,

which under the engineering DFT convention makes a linear span multiply the
spectrum by exp(+j (beta2/2) w^2 L) and a lossless zero-dispersion span rotate
a constant envelope by exp(+j gamma |A|^2 L). Receiver-side compensation
filters are the exact pointwise inverse of the linear factor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.constants import h as H_PLANCK

from .signals import SignalError, SignalGrid, WdmEnsemble, mux

# Optical reference frequency used for ASE photon energy.
EDFA_REF_FREQ_HZ = 193.4e12

DEFAULT_STEP_KM = 0.1
STEP_PHASE_LIMIT_RAD = 0.05


class SimulationError(ValueError):
    """Invalid physical configuration or step control."""


@dataclass(frozen=True)
class FiberParams:
    """Standard single-mode fiber description."""

    dispersion_ps_nm_km: float = 17.0
    gamma_per_w_km: float = 1.3
    alpha_db_km: float = 0.2
    length_km: float = 100.0
    ref_wavelength_nm: float = 1550.0

    def __post_init__(self):
        if self.length_km <= 0:
            raise SimulationError("fiber length must be positive")
        if self.alpha_db_km < 0 or self.gamma_per_w_km < 0:
            raise SimulationError("loss and nonlinearity must be non-negative")

    @property
    def beta2_s2_m(self) -> float:
        """Group velocity dispersion, -D lambda^2 / (2 pi c)."""
        d_si = self.dispersion_ps_nm_km * 1e-6  # s/m^2
        lam = self.ref_wavelength_nm * 1e-9
        return -d_si * lam**2 / (2 * math.pi * C_LIGHT)

    @property
    def alpha_per_km(self) -> float:
        """Power attenuation coefficient in 1/km."""
        return self.alpha_db_km * math.log(10) / 10.0

    @property
    def effective_length_km(self) -> float:
        a = self.alpha_per_km
        if a == 0:
            return self.length_km
        return (1.0 - math.exp(-a * self.length_km)) / a

    @property
    def span_loss_db(self) -> float:
        return self.alpha_db_km * self.length_km


@dataclass(frozen=True)
class LinkSpec:
    """Amplified multi-span link; EDFA gain exactly undoes span loss."""

    spans: int
    fiber: FiberParams
    edfa_nf_db: float = 4.5

    def __post_init__(self):
        if self.spans < 1:
            raise SimulationError("link needs at least one span")

    @property
    def edfa_gain_db(self) -> float:
        return self.fiber.span_loss_db

    @property
    def total_length_km(self) -> float:
        return self.spans * self.fiber.length_km


def cd_propagation_factor(
    omega: np.ndarray, beta2_s2_m: float, distance_m: float, omega_offset: float = 0.0
) -> np.ndarray:
    """Spectral factor a linear fiber applies over distance_m at omega+offset."""
    return np.exp(1j * (beta2_s2_m / 2.0) * (omega + omega_offset) ** 2 * distance_m)


def cd_compensation_factor(
    omega: np.ndarray, beta2_s2_m: float, distance_m: float, omega_offset: float = 0.0
) -> np.ndarray:
    """Exact inverse of :func:`cd_propagation_factor` (all-pass)."""
    return np.exp(-1j * (beta2_s2_m / 2.0) * (omega + omega_offset) ** 2 * distance_m)


def compensate_cd(sig: SignalGrid, fiber: FiberParams, distance_km: float) -> SignalGrid:
    """Receiver-side analytic CD compensation on the signal's own grid."""
    omega = 2 * np.pi * np.fft.fftfreq(len(sig), d=1.0 / sig.sample_rate)
    h = cd_compensation_factor(omega, fiber.beta2_s2_m, distance_km * 1e3)
    return sig.with_samples(np.fft.ifft(np.fft.fft(sig.samples) * h))


def ssfm_propagate(
    field: SignalGrid,
    fiber: FiberParams,
    step_km: float = DEFAULT_STEP_KM,
    nl_on: bool = True,
    step_check: str = "warn",
) -> SignalGrid:
    """Symmetric split-step solution of the scalar NLSE over one fiber span.

    Deterministic: attenuation is included, amplifier noise is not. The step
    count is ceil(L/step) with equal steps. If the peak nonlinear phase per
    step exceeds STEP_PHASE_LIMIT_RAD the call warns or rejects per
    ``step_check`` ("warn" | "reject" | "off").
    """
    if step_km <= 0:
        raise SimulationError("step_km must be positive")
    n_steps = max(1, math.ceil(fiber.length_km / step_km))
    dz_km = fiber.length_km / n_steps
    dz_m = dz_km * 1e3

    a = field.samples.copy()
    gamma = fiber.gamma_per_w_km if nl_on else 0.0
    if gamma > 0 and step_check != "off":
        peak = float(np.max(np.abs(a) ** 2))
        phi = gamma * peak * dz_km
        if phi > STEP_PHASE_LIMIT_RAD:
            msg = (
                f"nonlinear phase per step {phi:.3f} rad exceeds "
                f"{STEP_PHASE_LIMIT_RAD} rad; reduce step_km={step_km}"
            )
            if step_check == "reject":
                raise SimulationError(msg)
            warnings.warn(msg, stacklevel=2)

    omega = 2 * np.pi * np.fft.fftfreq(a.size, d=1.0 / field.sample_rate)
    alpha_m = fiber.alpha_per_km / 1e3  # power attenuation, 1/m
    half = np.exp((1j * (fiber.beta2_s2_m / 2.0) * omega**2 - alpha_m / 2.0) * dz_m / 2.0)

    for _ in range(n_steps):
        a = np.fft.ifft(np.fft.fft(a) * half)
        if gamma:
            a = a * np.exp(1j * gamma * dz_km * np.abs(a) ** 2)
        a = np.fft.ifft(np.fft.fft(a) * half)
    return field.with_samples(a)


def edfa(
    field: SignalGrid,
    gain_db: float,
    nf_db: float,
    rng: np.random.Generator,
) -> SignalGrid:
    """Flat-gain amplifier with ASE noise white across the simulation grid.

    Noise PSD per polarization is rho = (G-1) F h nu / 2; the added complex
    noise power over the full grid bandwidth is rho * sample_rate.
    """
    if gain_db < 0:
        raise SimulationError("gain_db must be >= 0")
    g = 10.0 ** (gain_db / 10.0)
    f = 10.0 ** (nf_db / 10.0)
    rho = (g - 1.0) * f * H_PLANCK * EDFA_REF_FREQ_HZ / 2.0
    sigma2 = rho * field.sample_rate
    n = field.samples.size
    noise = math.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(n) + 1j * rng.standard_normal(n)
    )
    return field.with_samples(field.samples * math.sqrt(g) + noise)


def ase_psd(link: LinkSpec) -> float:
    """Per-amplifier ASE PSD rho for the link's EDFAs."""
    g = 10.0 ** (link.edfa_gain_db / 10.0)
    f = 10.0 ** (link.edfa_nf_db / 10.0)
    return (g - 1.0) * f * H_PLANCK * EDFA_REF_FREQ_HZ / 2.0


def transmit(
    ensemble: WdmEnsemble,
    link: LinkSpec,
    launch_power_dbm_per_ch: float,
    seed: int | np.random.SeedSequence,
    sim_rate: float | None = None,
    step_km: float = DEFAULT_STEP_KM,
    nl_on: bool = True,
    noise_on: bool = True,
    step_check: str = "warn",
) -> SignalGrid:
    """Launch, propagate and amplify the ensemble; returns the wideband field.

    Channels are scaled to the requested per-channel launch power, muxed onto
    one grid (default 16 samples/symbol), then each span runs ssfm_propagate
    followed by an EDFA that exactly recovers the span loss.
    """
    if sim_rate is None:
        sim_rate = 16.0 * ensemble.baud_rate
    p_lin = 10.0 ** ((launch_power_dbm_per_ch - 30.0) / 10.0)
    scaled = []
    for ch in ensemble.channels:
        p = ch.power
        if p <= 0:
            raise SimulationError("cannot scale an all-zero channel to launch power")
        scaled.append(ch.with_samples(ch.samples * math.sqrt(p_lin / p)))
    wb = mux(
        WdmEnsemble(tuple(scaled), ensemble.spacing, ensemble.baud_rate), sim_rate
    )
    rng = np.random.default_rng(seed)
    for _ in range(link.spans):
        wb = ssfm_propagate(wb, link.fiber, step_km, nl_on, step_check)
        if noise_on:
            wb = edfa(wb, link.edfa_gain_db, link.edfa_nf_db, rng)
        else:
            wb = wb.with_samples(wb.samples * 10 ** (link.edfa_gain_db / 20.0))
    return wb
