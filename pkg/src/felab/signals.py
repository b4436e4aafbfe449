"""Complex-baseband signal primitives.

Waveforms are uniformly sampled complex fields in sqrt(W). Symbol frames hold
points of a unit-average-energy constellation. Multi-channel ensembles share a
symbol clock and a uniform frequency grid around the ensemble center.

All resampling and channel (de)multiplexing is done exactly on FFT grids
(zero-pad / truncate / circular shift), which requires channel offsets to land
on integer spectral bins; the constructors check this and reject otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_ROLLOFF = 0.1
DEFAULT_RRC_SPAN = 128  # symbols on each side of the peak (truncated-tap form)


class SignalError(ValueError):
    """Invalid signal construction or operation."""


class Modulation(Enum):
    QPSK = "qpsk"
    QAM16 = "qam16"
    QAM64 = "qam64"

    @property
    def order(self) -> int:
        return {"qpsk": 4, "qam16": 16, "qam64": 64}[self.value]

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.order)))

    @property
    def levels_per_axis(self) -> int:
        return int(round(math.sqrt(self.order)))


@dataclass(frozen=True)
class SignalGrid:
    """Uniformly sampled complex baseband waveform."""

    samples: np.ndarray
    sample_rate: float  # Hz
    center_offset: float = 0.0  # Hz, relative to the ensemble center

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.ndim != 1 or arr.size == 0:
            raise SignalError("samples must be a non-empty 1-D array")
        if not self.sample_rate > 0:
            raise SignalError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(arr.view(np.float64))):
            raise SignalError("samples contain non-finite values")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def power(self) -> float:
        """Mean |sample|^2 in W."""
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples: np.ndarray) -> "SignalGrid":
        return SignalGrid(samples, self.sample_rate, self.center_offset)


@dataclass(frozen=True)
class SymbolFrame:
    """Clean constellation symbols at the symbol clock."""

    symbols: np.ndarray
    modulation: Modulation
    baud_rate: float

    def __post_init__(self):
        arr = np.asarray(self.symbols, dtype=np.complex128)
        if arr.ndim != 1 or arr.size == 0:
            raise SignalError("symbols must be a non-empty 1-D array")
        if not self.baud_rate > 0:
            raise SignalError("baud_rate must be > 0")
        object.__setattr__(self, "symbols", arr)

    def __len__(self) -> int:
        return self.symbols.size


@dataclass(frozen=True)
class WdmEnsemble:
    """Ordered per-channel waveforms on a uniform frequency grid."""

    channels: tuple
    spacing: float  # Hz
    baud_rate: float  # Hz

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise SignalError("ensemble needs at least one channel")
        n = len(chans)
        rate = chans[0].sample_rate
        length = len(chans[0])
        for i, ch in enumerate(chans):
            if ch.sample_rate != rate or len(ch) != length:
                raise SignalError("all channels must share sample_rate and length")
            want = (i - (n - 1) / 2) * self.spacing
            if abs(ch.center_offset - want) > 1e-3:
                raise SignalError(
                    f"channel {i} offset {ch.center_offset} Hz, expected {want} Hz"
                )
        object.__setattr__(self, "channels", chans)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def sample_rate(self) -> float:
        return self.channels[0].sample_rate

    def offsets(self) -> np.ndarray:
        return np.array([ch.center_offset for ch in self.channels])


def channel_offsets(n_ch: int, spacing: float) -> np.ndarray:
    """Center frequencies of an n_ch grid, symmetric around 0."""
    return (np.arange(n_ch) - (n_ch - 1) / 2) * spacing


@dataclass(frozen=True)
class FrequencyPlan:
    """Channel grid used to demultiplex a wideband field."""

    n_ch: int
    spacing: float
    baud_rate: float

    def offsets(self) -> np.ndarray:
        return channel_offsets(self.n_ch, self.spacing)


# ---------------------------------------------------------------------------
# constellations

def _axis_gray_positions(levels: int) -> np.ndarray:
    """pos_of_code[c] = rank of Gray code c in the reflected-Gray sequence."""
    pos = np.empty(levels, dtype=np.int64)
    for i in range(levels):
        pos[i ^ (i >> 1)] = i
    return pos


def _axis_amplitudes(levels: int) -> np.ndarray:
    # rank 0 -> +(L-1), descending; keeps QPSK bit 0 -> +1
    return np.array([levels - 1 - 2 * i for i in range(levels)], dtype=np.float64)


def constellation(modulation: Modulation) -> np.ndarray:
    """All M points indexed by integer bit value (I bits high, Q bits low)."""
    lv = modulation.levels_per_axis
    pos = _axis_gray_positions(lv)
    amp = _axis_amplitudes(lv)
    scale = constellation_scale(modulation)
    pts = np.empty(modulation.order, dtype=np.complex128)
    p = modulation.bits_per_symbol // 2
    for v in range(modulation.order):
        ci, cq = v >> p, v & ((1 << p) - 1)
        pts[v] = (amp[pos[ci]] + 1j * amp[pos[cq]]) / scale
    return pts


def constellation_scale(modulation: Modulation) -> float:
    """Amplitude divisor giving unit average symbol energy."""
    m = modulation.order
    return math.sqrt(2.0 * (m - 1) / 3.0)


def map_symbols(bits: np.ndarray, modulation: Modulation, baud_rate: float) -> SymbolFrame:
    """Gray-map a bit sequence onto square-QAM symbols with unit mean energy."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = modulation.bits_per_symbol
    if bits.size == 0 or bits.size % k:
        raise SignalError(
            f"bit count {bits.size} not a positive multiple of {k} "
            f"({modulation.value} uses {k} bits/symbol)"
        )
    if np.any((bits != 0) & (bits != 1)):
        raise SignalError("bits must be 0/1")
    weights = 1 << np.arange(k - 1, -1, -1)
    vals = bits.reshape(-1, k) @ weights
    return SymbolFrame(constellation(modulation)[vals], modulation, baud_rate)


def hard_decide(symbols: np.ndarray, modulation: Modulation) -> np.ndarray:
    """Nearest-point decision, returned as integer bit values."""
    lv = modulation.levels_per_axis
    amp = _axis_amplitudes(lv)
    scale = constellation_scale(modulation)
    p = modulation.bits_per_symbol // 2
    gray_of_rank = np.array([i ^ (i >> 1) for i in range(lv)], dtype=np.int64)

    def axis(vals):
        # amplitudes descend with rank: rank = round((L-1 - v*scale)/2), clipped
        r = np.rint((lv - 1 - vals * scale) / 2.0).astype(np.int64)
        return gray_of_rank[np.clip(r, 0, lv - 1)]

    ci = axis(np.real(symbols))
    cq = axis(np.imag(symbols))
    return (ci << p) | cq


def demap_bits(values: np.ndarray, modulation: Modulation) -> np.ndarray:
    """Integer bit values -> flat bit array (MSB first)."""
    k = modulation.bits_per_symbol
    shifts = np.arange(k - 1, -1, -1)
    return ((values[:, None] >> shifts) & 1).astype(np.int64).ravel()


def random_bits(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.int64)


# ---------------------------------------------------------------------------
# pulse shaping

def rrc_taps(sps: int, rolloff: float, span: int = DEFAULT_RRC_SPAN) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, odd length 2*span*sps + 1."""
    if not 0 < rolloff <= 1:
        raise SignalError(f"rolloff must be in (0, 1], got {rolloff}")
    if sps < 1 or span < 1:
        raise SignalError("sps and span must be >= 1")
    b = rolloff
    t = np.arange(-span * sps, span * sps + 1, dtype=np.float64) / sps
    taps = np.empty_like(t)
    # singular points of the closed form
    at_zero = np.isclose(t, 0.0)
    at_brk = np.isclose(np.abs(t), 1.0 / (4.0 * b))
    reg = ~(at_zero | at_brk)
    tr = t[reg]
    num = np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))
    den = np.pi * tr * (1 - (4 * b * tr) ** 2)
    taps[reg] = num / den
    taps[at_zero] = 1.0 - b + 4 * b / np.pi
    taps[at_brk] = (b / math.sqrt(2.0)) * (
        (1 + 2 / np.pi) * math.sin(np.pi / (4 * b))
        + (1 - 2 / np.pi) * math.cos(np.pi / (4 * b))
    )
    return taps / math.sqrt(np.sum(taps**2))


def raised_cosine_spectrum(freqs: np.ndarray, baud_rate: float, rolloff: float) -> np.ndarray:
    """Unit-peak raised-cosine spectrum evaluated at freqs (Hz)."""
    b = rolloff
    f = np.abs(np.asarray(freqs, dtype=np.float64))
    lo = (1 - b) * baud_rate / 2
    hi = (1 + b) * baud_rate / 2
    out = np.zeros_like(f)
    out[f <= lo] = 1.0
    tr = (f > lo) & (f < hi)
    out[tr] = 0.5 * (1 + np.cos(np.pi / (b * baud_rate) * (f[tr] - lo)))
    return out


def _rrc_grid_response(n: int, sample_rate: float, baud_rate: float, rolloff: float) -> np.ndarray:
    """sqrt(sps * RC) on an n-point FFT grid: one side of the matched pair.

    The pair multiplies to sps * RC, which telescopes over the decimation
    images to an exact discrete Nyquist identity, so shape -> matched ->
    decimate reproduces the symbols to machine precision.
    """
    freqs = np.fft.fftfreq(n, d=1.0 / sample_rate)
    sps = sample_rate / baud_rate
    return np.sqrt(sps * raised_cosine_spectrum(freqs, baud_rate, rolloff))


def shape_pulses(
    frame: SymbolFrame,
    sps: int,
    rolloff: float = DEFAULT_ROLLOFF,
) -> SignalGrid:
    """RRC-shape a symbol frame to sps samples per symbol.

    The shaping is applied spectrally on the waveform's own FFT grid
    (exactness over causality; offline processing). Symbol i sits at sample
    i*sps with zero group delay.
    """
    if sps < 2:
        raise SignalError(f"sps must be >= 2, got {sps}")
    if not 0 < rolloff <= 1:
        raise SignalError(f"rolloff must be in (0, 1], got {rolloff}")
    rate = sps * frame.baud_rate
    up = np.zeros(len(frame) * sps, dtype=np.complex128)
    up[::sps] = frame.symbols
    resp = _rrc_grid_response(up.size, rate, frame.baud_rate, rolloff)
    shaped = np.fft.ifft(np.fft.fft(up) * resp)
    return SignalGrid(shaped, rate, 0.0)


def matched_filter(
    sig: SignalGrid,
    rolloff: float = DEFAULT_ROLLOFF,
    baud_rate: float | None = None,
) -> SignalGrid:
    """Apply the conjugate-time-reversed RRC, group delay compensated.

    The RRC response is real and even, so the matched filter is the shaping
    response itself, applied zero-phase on the signal's FFT grid; symbol
    centers stay on sample indices i*sps.
    """
    if baud_rate is None:
        raise SignalError("need baud_rate to build the matched filter")
    if not 0 < rolloff <= 1:
        raise SignalError(f"rolloff must be in (0, 1], got {rolloff}")
    resp = _rrc_grid_response(len(sig), sig.sample_rate, baud_rate, rolloff)
    out = np.fft.ifft(np.fft.fft(sig.samples) * resp)
    return sig.with_samples(out)


def decimate_to_symbols(sig: SignalGrid, baud_rate: float) -> np.ndarray:
    """Take one sample per symbol at the symbol centers i*sps."""
    ratio = sig.sample_rate / baud_rate
    sps = int(round(ratio))
    if abs(ratio - sps) > 1e-9 or sps < 1:
        raise SignalError(f"sample_rate/baud_rate = {ratio} is not an integer")
    return sig.samples[::sps].copy()


# ---------------------------------------------------------------------------
# exact FFT-grid resampling and WDM (de)multiplexing

def _spectrum_resize(spectrum: np.ndarray, n_out: int) -> np.ndarray:
    """Zero-pad or truncate an FFT spectrum symmetrically around DC.

    Edge-bin handling keeps round trips exact for signals with no energy at
    the band edge: an even-length input Nyquist bin is split half/half on
    upsampling; on downsampling the two bins folding onto the new Nyquist
    frequency are summed.
    """
    n_in = spectrum.size
    if n_out == n_in:
        return spectrum.copy()
    out = np.zeros(n_out, dtype=np.complex128)
    if n_out > n_in:  # upsample
        h = n_in // 2
        if n_in % 2:
            out[: h + 1] = spectrum[: h + 1]
            out[n_out - h :] = spectrum[h + 1 :]
        else:
            out[:h] = spectrum[:h]
            out[n_out - h + 1 :] = spectrum[h + 1 :]
            out[h] = 0.5 * spectrum[h]  # split the shared Nyquist bin
            out[n_out - h] = 0.5 * spectrum[h]
    else:  # downsample
        h = n_out // 2
        if n_out % 2:
            out[: h + 1] = spectrum[: h + 1]
            out[h + 1 :] = spectrum[n_in - h :]
        else:
            out[:h] = spectrum[:h]
            out[h + 1 :] = spectrum[n_in - h + 1 :]
            # fold the aliasing pair onto the new Nyquist bin
            out[h] = spectrum[h] + spectrum[n_in - h]
    return out


def resample(sig: SignalGrid, new_rate: float) -> SignalGrid:
    """Exact band-limited resampling by FFT zero-padding/truncation."""
    n_in = len(sig)
    n_out_f = n_in * new_rate / sig.sample_rate
    n_out = int(round(n_out_f))
    if abs(n_out_f - n_out) > 1e-6 or n_out < 1:
        raise SignalError(
            f"cannot resample length {n_in} from {sig.sample_rate} to {new_rate} Hz "
            f"on an integer grid (needs {n_out_f} samples)"
        )
    spec = np.fft.fft(sig.samples)
    out = np.fft.ifft(_spectrum_resize(spec, n_out)) * (n_out / n_in)
    return SignalGrid(out, new_rate, sig.center_offset)


def _bin_shift(offset_hz: float, df: float) -> int:
    shift = offset_hz / df
    m = int(round(shift))
    if abs(shift - m) > 1e-6:
        raise SignalError(
            f"offset {offset_hz} Hz is not an integer multiple of the grid "
            f"resolution {df} Hz; choose symbol counts that align the grid"
        )
    return m


def mux(
    ensemble: WdmEnsemble,
    target_rate: float,
    occupied_bw: float | None = None,
) -> SignalGrid:
    """Sum channels onto one wideband grid at their center offsets."""
    n_ch = ensemble.n_channels
    if occupied_bw is None:
        occupied_bw = (1 + DEFAULT_ROLLOFF) * ensemble.baud_rate
    need = n_ch * ensemble.spacing + occupied_bw
    if target_rate < need:
        raise SignalError(
            f"target_rate {target_rate/1e9:.1f} GHz aliases the ensemble; "
            f"need >= {need/1e9:.1f} GHz"
        )
    n_in = len(ensemble.channels[0])
    n_out_f = n_in * target_rate / ensemble.sample_rate
    n_out = int(round(n_out_f))
    if abs(n_out_f - n_out) > 1e-6:
        raise SignalError("target_rate does not give an integer wideband grid")
    df = target_rate / n_out
    total = np.zeros(n_out, dtype=np.complex128)
    for ch in ensemble.channels:
        spec = _spectrum_resize(np.fft.fft(ch.samples), n_out) * (n_out / n_in)
        total += np.roll(spec, _bin_shift(ch.center_offset, df))
    return SignalGrid(np.fft.ifft(total), target_rate, 0.0)


def demux(
    wideband: SignalGrid,
    plan: FrequencyPlan,
    out_sps: int,
    width: float | None = None,
) -> WdmEnsemble:
    """Brick-wall band-select each plan channel and resample to out_sps.

    The selection window is `width` wide (default: the channel spacing),
    applied on the wideband FFT grid; exactness over causality.
    """
    if width is None:
        width = plan.spacing
    if width > plan.spacing:
        raise SignalError(
            f"selection width {width/1e9:.1f} GHz exceeds the channel spacing "
            f"{plan.spacing/1e9:.1f} GHz; bands would overlap"
        )
    out_rate = out_sps * plan.baud_rate
    if out_rate < width:
        raise SignalError(
            f"out_sps {out_sps} gives {out_rate/1e9:.1f} GHz, below the "
            f"{width/1e9:.1f} GHz channel band"
        )
    n_in = len(wideband)
    df = wideband.sample_rate / n_in
    n_out_f = n_in * out_rate / wideband.sample_rate
    n_out = int(round(n_out_f))
    if abs(n_out_f - n_out) > 1e-6:
        raise SignalError("out_sps does not give an integer channel grid")
    spec = np.fft.fft(wideband.samples)
    freqs = np.fft.fftfreq(n_in, d=1.0 / wideband.sample_rate)
    chans = []
    for off in plan.offsets():
        shifted = np.roll(spec, -_bin_shift(off, df))
        sel = np.where(np.abs(freqs) <= width / 2, shifted, 0.0)
        ch = np.fft.ifft(_spectrum_resize(sel, n_out)) * (n_out / n_in)
        chans.append(SignalGrid(ch, out_rate, off))
    return WdmEnsemble(tuple(chans), plan.spacing, plan.baud_rate)
