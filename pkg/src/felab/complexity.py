"""Real-multiplications-per-symbol accounting for the MIMO equalizer.

Implements the closed-form cost model exactly as printed:

    C_FFT      = 4 N log2(N)                              (radix-2 pair)
    C_MIMO,FD  = [q (1+Ns) C_FFT + 4 q N (2 Ns + 1)] / (N - M + 1)
    C_MIMO,TD  = q Nch Ns [0.5 (S_SPM+1) + (Nch-1) S_XPM + 8 S_CD + 4]

FD cost is per channel as written; S_CD = 0 encodes a plain (power-waveform
only) model. No extra terms are invented to match any external totals; the
report prints formula-exact values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class ComplexityError(ValueError):
    pass


@dataclass(frozen=True)
class CostSpec:
    """Configuration entering the cost formulas."""

    n_ch: int
    n_steps: int  # Ns = steps/span * spans
    s_spm: int
    s_xpm: int
    s_cd: int  # 0 -> plain model without field filters
    n_fft: int = 2048
    overlap_m: int = 1024
    q: int = 2  # samples per symbol in the equalizer

    def __post_init__(self):
        if self.n_ch < 1 or self.n_steps < 0:
            raise ComplexityError("n_ch >= 1 and n_steps >= 0 required")
        if self.overlap_m >= self.n_fft:
            raise ComplexityError("overlap must be smaller than the FFT size")
        if min(self.s_spm, self.s_xpm) < 1 or self.s_cd < 0:
            raise ComplexityError("filter lengths must be positive (s_cd may be 0)")


@dataclass(frozen=True)
class ComplexityReport:
    fd_rm_per_sym: float
    td_rm_per_sym: float
    config: CostSpec

    @property
    def total(self) -> float:
        return self.fd_rm_per_sym + self.td_rm_per_sym


def fft_cost(n_fft: int) -> float:
    """RMs of one forward+inverse radix-2 FFT pair on an n_fft block."""
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ComplexityError(f"n_fft must be a power of two >= 2, got {n_fft}")
    return 4.0 * n_fft * math.log2(n_fft)


def fd_cost(spec: CostSpec) -> float:
    """Frequency-domain RMs per symbol (per channel, as printed)."""
    c_fft = fft_cost(spec.n_fft)
    num = spec.q * (1 + spec.n_steps) * c_fft + (4 * spec.q * spec.n_fft) * (
        2 * spec.n_steps + 1
    )
    return num / (spec.n_fft - spec.overlap_m + 1)


def td_cost(spec: CostSpec) -> float:
    """Time-domain RMs per symbol across all channels."""
    inner = (
        0.5 * (spec.s_spm + 1)
        + (spec.n_ch - 1) * spec.s_xpm
        + 8 * spec.s_cd
        + 4
    )
    return spec.q * spec.n_ch * spec.n_steps * inner


def report(spec: CostSpec) -> ComplexityReport:
    return ComplexityReport(fd_cost(spec), td_cost(spec), spec)


@dataclass(frozen=True)
class Comparison:
    fe: ComplexityReport
    plain: ComplexityReport

    @property
    def ratio(self) -> float:
        return self.fe.total / self.plain.total


def compare(fe_spec: CostSpec, plain_spec: CostSpec) -> Comparison:
    """Cost ratio total(fe)/total(plain) with both breakdowns."""
    return Comparison(report(fe_spec), report(plain_spec))
