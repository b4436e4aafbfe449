"""End-to-end gradient training of the equalizer tensors.

The forward pass (equalize block -> matched filter -> decimate -> per-channel
complex scalar fit -> MSE on symbols) is recorded with torch autograd in
float64/complex128; gradients of complex tensors follow torch's conjugate
(Wirtinger) convention, so a step along -grad decreases the loss to first
order. The Adam update is implemented here rather than taken from an
optimizer library so its exact arithmetic (including how complex moments are
formed) is pinned by unit tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import metrics, signals
from .equalizer import (
    CDTYPE,
    RDTYPE,
    EqualizerError,
    EqualizerParams,
    EqualizerSpec,
    LinearStageBank,
    StreamFraming,
    build_linear_stages,
    equalize_block,
    equalize_stream,
)
from .signals import Modulation


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_blocks: int = 40
    epochs: int = 750
    train_symbols: int = 2**19
    val_symbols: int = 2**18
    test_symbols: int = 2**18
    seed: int = 0
    launch_power_dbm: float = 0.0
    mf_span_symbols: int = 24  # truncated matched filter used in the loss path
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be > 0")
        if self.batch_blocks < 1:
            raise TrainingError("batch_blocks must be >= 1")
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")


@dataclass(frozen=True)
class SplitData:
    """One dataset split: received 2 sps channel waveforms + clean symbols."""

    rx: torch.Tensor  # [n_ch, n_sym * q] complex128
    ref: np.ndarray  # [n_ch, n_sym] complex128
    modulation: Modulation

    def __post_init__(self):
        if self.rx.shape[0] != self.ref.shape[0]:
            raise TrainingError("rx and ref channel counts differ")

    @property
    def n_symbols(self) -> int:
        return self.ref.shape[1]


@dataclass(frozen=True)
class LinkDataset:
    train: SplitData
    val: SplitData
    test: SplitData
    baud_rate: float
    rolloff: float
    launch_power_dbm: float


# ---------------------------------------------------------------------------
# losses and gradients

def mse_loss(recovered, reference) -> torch.Tensor:
    """(1 / (N_ch K)) sum_n sum_c |s_rec - s_ref|^2 over a batch."""
    rec = recovered if isinstance(recovered, torch.Tensor) else torch.stack(list(recovered))
    ref = reference if isinstance(reference, torch.Tensor) else torch.stack(list(reference))
    if rec.shape != ref.shape:
        raise TrainingError(f"shape mismatch: recovered {tuple(rec.shape)} vs reference {tuple(ref.shape)}")
    if rec.ndim != 2 or rec.numel() == 0:
        raise TrainingError("expected non-empty [n_ch, K] symbol tensors")
    err = rec - ref.to(rec.dtype)
    return (err * err.conj()).real.mean()


@dataclass
class GradientSet:
    alpha: torch.Tensor
    beta: torch.Tensor
    h_in: torch.Tensor
    h_out: torch.Tensor

    def named(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "h_in": self.h_in, "h_out": self.h_out}


def backward(loss: torch.Tensor, params: EqualizerParams) -> GradientSet:
    """Gradients of a recorded scalar loss with respect to every trainable
    tensor (conjugate/Wirtinger convention for the complex ones)."""
    if loss.grad_fn is None:
        raise TrainingError("loss has no recorded graph; run the forward pass with gradients enabled")
    leaves = list(params.named().values())
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    filled = [
        g if g is not None else torch.zeros_like(t) for g, t in zip(grads, leaves)
    ]
    out = GradientSet(*filled)
    for name, g in out.named().items():
        if not torch.all(torch.isfinite(torch.view_as_real(g.to(CDTYPE)))):
            raise TrainingError(f"non-finite gradient in {name}")
    return out


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def zeros(cls, params: EqualizerParams) -> "AdamState":
        return cls(
            step=0,
            m={k: torch.zeros_like(t) for k, t in params.named().items()},
            v={k: torch.zeros_like(t, dtype=RDTYPE) for k, t in params.named().items()},
        )


def adam_step(
    params: EqualizerParams,
    grads: GradientSet,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[EqualizerParams, AdamState]:
    """Standard Adam with bias correction; complex tensors keep a complex
    first moment and a |g|^2 second moment."""
    t = state.step + 1
    new_m, new_v, new_p = {}, {}, {}
    for name, p in params.named().items():
        g = getattr(grads, name)
        if g.shape != p.shape:
            raise TrainingError(f"gradient shape mismatch for {name}")
        m = beta1 * state.m[name] + (1 - beta1) * g
        v = beta2 * state.v[name] + (1 - beta2) * (g * g.conj()).real
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        upd = m_hat / (torch.sqrt(v_hat) + eps)
        new_p[name] = (p.detach() - lr * upd.to(p.dtype)).clone()
        new_m[name], new_v[name] = m, v
    return EqualizerParams(**new_p), AdamState(step=t, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# initialization

def design_cd_fir(
    n_taps: int,
    delta_cd_ps_nm: float,
    fiber,
    sample_rate: float,
    band_hz: float,
    ridge: float = 1e-9,
    n_grid: int = 257,
) -> np.ndarray:
    """Least-squares complex FIR approximating dispersion compensation of
    delta_cd over the signal passband (regularized normal equations)."""
    if n_taps < 1 or n_taps % 2 == 0:
        raise TrainingError(f"tap count must be odd, got {n_taps}")
    beta2 = fiber.beta2_s2_m
    d = fiber.dispersion_ps_nm_km
    if delta_cd_ps_nm != 0 and d == 0:
        raise TrainingError("cannot delegate dispersion on a dispersion-free fiber")
    z_m = 0.0 if delta_cd_ps_nm == 0 else (delta_cd_ps_nm / d) * 1e3
    ts = 1.0 / sample_rate
    omega = 2 * np.pi * np.linspace(-band_hz, band_hz, n_grid)
    k = np.arange(n_taps) - (n_taps - 1) // 2
    a = np.exp(-1j * omega[:, None] * k[None, :] * ts)
    target = np.exp(-1j * (beta2 / 2.0) * omega**2 * z_m)
    gram = a.conj().T @ a + ridge * n_grid * np.eye(n_taps)
    return np.linalg.solve(gram, a.conj().T @ target)


def init_params(spec: EqualizerSpec, rolloff: float = signals.DEFAULT_ROLLOFF) -> EqualizerParams:
    """Zero SPM/XPM taps; field filters start as the +delta / -delta CD
    designs so the branch net dispersion matches the undelegated geometry."""
    ns, c = spec.n_steps, spec.n_ch
    band = 0.5 * (1 + rolloff) * spec.baud_rate
    h_in1 = design_cd_fir(spec.s_cd, +spec.delta_cd_ps_nm, spec.fiber, spec.sample_rate, band)
    h_out1 = design_cd_fir(spec.s_cd, -spec.delta_cd_ps_nm, spec.fiber, spec.sample_rate, band)
    h_in = torch.from_numpy(np.tile(h_in1, (ns, c, 1))).to(CDTYPE)
    h_out = torch.from_numpy(np.tile(h_out1, (ns, c, 1))).to(CDTYPE)
    return EqualizerParams(
        alpha=torch.zeros(ns, c, spec.s_spm, dtype=RDTYPE),
        beta=torch.zeros(ns, c, max(c - 1, 0), spec.s_xpm, dtype=RDTYPE),
        h_in=h_in,
        h_out=h_out,
    )


# ---------------------------------------------------------------------------
# symbol recovery (differentiable path)

def matched_taps(q: int, rolloff: float, span_symbols: int) -> torch.Tensor:
    return torch.from_numpy(signals.rrc_taps(q, rolloff, span_symbols)).to(RDTYPE)


def block_symbol_span(
    stream_start: int, hop: int, q: int, mf_taps: int, n_symbols: int
) -> tuple[int, int]:
    """Symbol index range a block can supply with full filter context."""
    half = (mf_taps - 1) // 2
    lo = stream_start + half
    hi = stream_start + hop - half
    m_start = max(0, math.ceil(lo / q))
    m_stop = min(n_symbols, (hi - 1) // q + 1)
    return m_start, max(m_start, m_stop)


def recover_block_symbols(
    valid: torch.Tensor,
    stream_start: int,
    q: int,
    mf: torch.Tensor,
    n_symbols: int,
):
    """Matched-filter and decimate one block's valid samples.

    valid: [n_ch, hop] samples at stream positions [stream_start, ...).
    Returns (recovered [n_ch, n_sel], symbol indices) for the symbols whose
    filter context lies fully inside the block.
    """
    hop = valid.shape[-1]
    half = (mf.shape[0] - 1) // 2
    m_start, m_stop = block_symbol_span(stream_start, hop, q, mf.shape[0], n_symbols)
    if m_stop <= m_start:
        return valid.new_zeros((valid.shape[0], 0)), np.arange(0)
    m = np.arange(m_start, m_stop)
    starts = torch.from_numpy(m * q - stream_start - half)
    win = valid.unfold(-1, mf.shape[0], 1)  # [n_ch, hop-2*half, taps]
    sel = win[:, starts, :]
    rec = torch.einsum("cms,s->cm", sel, mf.to(valid.dtype))
    return rec, m


def fit_and_stack(recovered: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Per-channel least-squares complex scalar fit of recovered onto the
    reference (ideal carrier-recovery proxy); differentiable."""
    denom = (recovered * recovered.conj()).real.sum(dim=-1)
    scale = (recovered.conj() * reference).sum(dim=-1) / denom.to(CDTYPE)
    return recovered * scale.unsqueeze(-1)


def recover_stream_symbols(
    samples: np.ndarray,
    q: int,
    baud_rate: float,
    rolloff: float,
    drop_symbols: int,
):
    """Exact matched filter + decimation of a stitched equalized stream;
    returns ([n_ch, n_kept], kept symbol indices)."""
    outs = []
    for ch in samples:
        sig = signals.SignalGrid(ch, q * baud_rate)
        mfed = signals.matched_filter(sig, rolloff, baud_rate=baud_rate)
        outs.append(signals.decimate_to_symbols(mfed, baud_rate))
    sym = np.stack(outs)
    n = sym.shape[-1]
    keep = slice(drop_symbols, n - drop_symbols)
    return sym[:, keep], np.arange(n)[keep]


# ---------------------------------------------------------------------------
# training loop

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_snr_db: list
    val_snr_mean_db: float


@dataclass
class TrainResult:
    params: EqualizerParams
    history: list
    best_epoch: int
    best_val_snr_db: float


def evaluate_stream(
    rx: torch.Tensor,
    ref: np.ndarray,
    params: EqualizerParams,
    spec: EqualizerSpec,
    stages: LinearStageBank,
    baud_rate: float,
    rolloff: float,
    modulation: Modulation,
) -> list:
    """Equalize a whole split and compute per-channel reports."""
    with torch.no_grad():
        res = equalize_stream(rx, params, spec, stages)
    drop = math.ceil(spec.overlap_m / spec.sps_q)
    rec, idx = recover_stream_symbols(
        res.samples.numpy(), spec.sps_q, baud_rate, rolloff, drop
    )
    return [
        metrics.channel_report(c, rec[c], ref[c, idx], modulation)
        for c in range(spec.n_ch)
    ]


def _batch_loss(
    xp: torch.Tensor,
    framing: StreamFraming,
    blocks: np.ndarray,
    ref: torch.Tensor,
    params: EqualizerParams,
    spec: EqualizerSpec,
    stages: LinearStageBank,
    mf: torch.Tensor,
    n_symbols: int,
) -> torch.Tensor:
    recs, refs = [], []
    for b in blocks:
        valid = equalize_block(xp[:, framing.block_slice(int(b))], params, spec, stages)
        start, _ = framing.block_positions(int(b))
        rec, m = recover_block_symbols(valid, start, spec.sps_q, mf, n_symbols)
        if rec.shape[-1] == 0:
            continue
        recs.append(rec)
        refs.append(ref[:, torch.from_numpy(m)])
    if not recs:
        raise TrainingError("batch produced no symbols; check block framing")
    rec = torch.cat(recs, dim=-1)
    refc = torch.cat(refs, dim=-1)
    return mse_loss(fit_and_stack(rec, refc), refc)


def run_training(
    dataset: LinkDataset,
    spec: EqualizerSpec,
    cfg: TrainConfig,
    stages: LinearStageBank | None = None,
    log_fn=None,
) -> TrainResult:
    """Adam training over shuffled batches of overlap-save blocks with
    per-epoch validation; returns the best-validation parameters and the full
    history. Deterministic under cfg.seed."""
    if stages is None:
        stages = build_linear_stages(spec)
    params = init_params(spec, dataset.rolloff).requires_grad_(True)
    state = AdamState.zeros(params)
    rng = np.random.default_rng(cfg.seed)

    train = dataset.train
    rx = train.rx.to(CDTYPE)
    framing = StreamFraming(rx.shape[-1], spec.n_fft, spec.overlap_m, stages.bulk_delay)
    if rx.shape[-1] < spec.n_fft:
        raise TrainingError("training split shorter than one block")
    xp = framing.pad(rx)
    ref = torch.from_numpy(train.ref).to(CDTYPE)
    mf = matched_taps(spec.sps_q, dataset.rolloff, cfg.mf_span_symbols)

    def val_snr(p: EqualizerParams) -> list:
        reports = evaluate_stream(
            dataset.val.rx, dataset.val.ref, p, spec, stages,
            dataset.baud_rate, dataset.rolloff, dataset.val.modulation,
        )
        return [r.snr_eff_db for r in reports]

    # blocks whose valid region supplies at least one full-context symbol
    usable = [
        b
        for b in range(framing.n_blocks)
        if (lambda s: s[1] > s[0])(
            block_symbol_span(
                framing.block_positions(b)[0], framing.hop, spec.sps_q,
                mf.shape[0], train.n_symbols,
            )
        )
    ]
    if not usable:
        raise TrainingError("no block supplies symbols; training split too short")

    history: list = []
    best = params.clone()
    best_snr = -math.inf
    best_epoch = -1
    initial_loss = None
    bad_epochs = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(usable)
        losses = []
        for i in range(0, len(order), cfg.batch_blocks):
            batch = order[i : i + cfg.batch_blocks]
            loss = _batch_loss(xp, framing, batch, ref, params, spec, stages, mf, train.n_symbols)
            if not math.isfinite(float(loss.detach())):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            if initial_loss is None:
                initial_loss = float(loss.detach())  # pre-update reference
            grads = backward(loss, params)
            params, state = adam_step(
                params, grads, state, cfg.learning_rate,
                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
            )
            params.requires_grad_(True)
            losses.append(float(loss.detach()))
        epoch_loss = float(np.mean(losses))
        if epoch_loss > 10 * initial_loss:
            bad_epochs += 1
            if bad_epochs >= 5:
                raise TrainingDiverged(
                    f"loss {epoch_loss:.3e} above 10x initial {initial_loss:.3e} "
                    f"for {bad_epochs} epochs"
                )
        else:
            bad_epochs = 0
        snrs = val_snr(params)
        mean_snr = float(np.mean(snrs))
        history.append(EpochRecord(epoch, epoch_loss, snrs, mean_snr))
        if mean_snr > best_snr:
            best_snr, best_epoch, best = mean_snr, epoch, params.clone()
        if log_fn:
            log_fn(history[-1])

    if cfg.epochs == 0:
        best = params.clone()
        best_epoch = -1
        best_snr = float(np.mean(val_snr(best))) if dataset.val.n_symbols else -math.inf
    return TrainResult(params=best, history=history, best_epoch=best_epoch, best_val_snr_db=best_snr)
