"""BER counting, BER <-> effective-SNR mapping and EVM-based SNR.

The analytic Gray-QAM BER is computed by exact per-axis enumeration: for each
transmitted PAM level, the probability of deciding each other level is a
difference of Q functions, weighted by the Gray-code Hamming distance. The
same expression (dominant nearest-neighbor Q term plus all higher-order
terms) is used in both directions, so the SNR->BER->SNR round trip is
consistent by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .signals import (
    Modulation,
    _axis_amplitudes,
    constellation_scale,
    demap_bits,
    hard_decide,
)

MIN_ERRORS_FOR_BER_SNR = 20


class MetricError(ValueError):
    pass


class SignalOutOfRange(MetricError):
    """BER outside the invertible (0, 0.5) range."""


@dataclass(frozen=True)
class ChannelReport:
    channel: int
    ber: float
    snr_eff_db: float
    evm_db: float
    symbol_count: int
    bit_errors: int
    snr_source: str  # "ber" | "evm"

    def __post_init__(self):
        if not 0.0 <= self.ber <= 0.5:
            raise MetricError(f"ber {self.ber} outside [0, 0.5]")


def _qfunc(x: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def count_bit_errors(
    recovered: np.ndarray, reference: np.ndarray, modulation: Modulation
) -> tuple[int, int]:
    """(bit errors, total bits) after hard decision on `recovered`."""
    recovered = np.asarray(recovered)
    reference = np.asarray(reference)
    if recovered.shape != reference.shape:
        raise MetricError(
            f"length mismatch: recovered {recovered.shape} vs reference {reference.shape}"
        )
    rx = demap_bits(hard_decide(recovered, modulation), modulation)
    tx = demap_bits(hard_decide(reference, modulation), modulation)
    return int(np.sum(rx != tx)), rx.size


def count_ber(
    recovered: np.ndarray, reference: np.ndarray, modulation: Modulation
) -> float:
    errs, total = count_bit_errors(recovered, reference, modulation)
    return errs / total


def analytic_ber(snr_db: float, modulation: Modulation) -> float:
    """Gray-coded square-QAM bit error rate on AWGN at symbol SNR snr_db."""
    lv = modulation.levels_per_axis
    bits_per_axis = modulation.bits_per_symbol // 2
    amps = _axis_amplitudes(lv) / constellation_scale(modulation)  # descending
    snr = 10.0 ** (snr_db / 10.0)
    sigma = math.sqrt(1.0 / (2.0 * snr))  # per-axis noise std at unit Es

    # decision thresholds between adjacent (descending) levels
    thr = (amps[:-1] + amps[1:]) / 2.0
    upper = np.concatenate(([np.inf], thr))
    lower = np.concatenate((thr, [-np.inf]))

    gray = np.array([i ^ (i >> 1) for i in range(lv)])
    ham = np.zeros((lv, lv))
    for i in range(lv):
        for j in range(lv):
            ham[i, j] = bin(int(gray[i]) ^ int(gray[j])).count("1")

    # P(decide j | sent i) = Q((lower_j - a_i)/sigma) - Q((upper_j - a_i)/sigma)
    a = amps[:, None]
    p = _qfunc((lower[None, :] - a) / sigma) - _qfunc((upper[None, :] - a) / sigma)
    return float(np.sum(p * ham) / (lv * bits_per_axis))


def ber_to_snr(ber: float, modulation: Modulation, tol_db: float = 1e-4) -> float:
    """Invert the analytic BER curve by bisection to tol_db."""
    lo, hi = -10.0, 60.0
    if not 0.0 < ber < 0.5:
        raise SignalOutOfRange(f"ber {ber} not in (0, 0.5)")
    if ber > analytic_ber(lo, modulation) or ber < analytic_ber(hi, modulation):
        raise SignalOutOfRange(f"ber {ber} outside the invertible range")
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if analytic_ber(mid, modulation) > ber:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scalar_fit(recovered: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Least-squares complex scalar a minimizing |a*recovered - reference|^2."""
    denom = np.vdot(recovered, recovered)
    if denom == 0:
        raise MetricError("cannot fit an all-zero recovered sequence")
    a = np.vdot(recovered, reference) / denom
    return recovered * a


def evm_snr(recovered: np.ndarray, reference: np.ndarray) -> float:
    """-10 log10(mean|e|^2 / mean|s|^2) after the scalar fit; inf when equal."""
    recovered = np.asarray(recovered, dtype=np.complex128)
    reference = np.asarray(reference, dtype=np.complex128)
    if recovered.shape != reference.shape:
        raise MetricError("shape mismatch between recovered and reference")
    p_ref = np.mean(np.abs(reference) ** 2)
    if p_ref == 0:
        raise MetricError("reference power is zero")
    if np.array_equal(recovered, reference):
        return math.inf
    err = scalar_fit(recovered, reference) - reference
    p_err = np.mean(np.abs(err) ** 2)
    if p_err == 0:
        return math.inf
    return float(-10.0 * np.log10(p_err / p_ref))


def channel_report(
    channel: int,
    recovered: np.ndarray,
    reference: np.ndarray,
    modulation: Modulation,
    min_errors: int = MIN_ERRORS_FOR_BER_SNR,
) -> ChannelReport:
    """Per-channel metrics; effective SNR falls back to EVM when the error
    count is too small for a meaningful BER -> SNR inversion."""
    fitted = scalar_fit(recovered, reference)
    errs, total = count_bit_errors(fitted, reference, modulation)
    ber = errs / total
    evm = evm_snr(recovered, reference)
    if errs >= min_errors and 0.0 < ber < 0.5:
        snr = ber_to_snr(ber, modulation)
        source = "ber"
    else:
        snr = evm
        source = "evm"
    return ChannelReport(
        channel=channel,
        ber=ber,
        snr_eff_db=snr,
        evm_db=evm,
        symbol_count=int(np.asarray(recovered).size),
        bit_errors=errs,
        snr_source=source,
    )
