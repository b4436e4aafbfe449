"""Dataset generation: transmit the WDM ensemble, receive and demultiplex.

Each split (train/val/test) gets independent data bits and amplifier noise,
derived from one master seed via numpy SeedSequence spawning, so datasets are
reproducible and the splits are statistically independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import channel, signals
from .equalizer import EqualizerSpec
from .signals import FrequencyPlan, Modulation, SignalGrid, WdmEnsemble
from .training import LinkDataset, SplitData


@dataclass(frozen=True)
class TransmitterConfig:
    modulation: Modulation = Modulation.QAM64
    baud_rate: float = 32e9
    spacing: float = 40e9
    n_ch: int = 3
    rolloff: float = signals.DEFAULT_ROLLOFF


@dataclass(frozen=True)
class SimConfig:
    sample_rate: float | None = None  # None -> 16 samples/symbol
    step_km: float = channel.DEFAULT_STEP_KM
    nl_on: bool = True
    noise_on: bool = True


def _split_seeds(seed: int, n: int) -> list:
    return np.random.SeedSequence(seed).spawn(n)


def simulate_split(
    tx: TransmitterConfig,
    link: channel.LinkSpec,
    sim: SimConfig,
    eq: EqualizerSpec,
    n_symbols: int,
    launch_power_dbm: float,
    seed_seq: np.random.SeedSequence,
) -> SplitData:
    """One split: random bits -> shaped WDM channels -> link -> demux of the
    center eq.n_ch channels at the equalizer rate."""
    bits_ss, noise_ss = seed_seq.spawn(2)
    rng = np.random.default_rng(bits_ss)
    k = tx.modulation.bits_per_symbol
    frames = []
    chans = []
    offsets = signals.channel_offsets(tx.n_ch, tx.spacing)
    for i in range(tx.n_ch):
        frame = signals.map_symbols(
            signals.random_bits(rng, k * n_symbols), tx.modulation, tx.baud_rate
        )
        frames.append(frame)
        shaped = signals.shape_pulses(frame, 2, tx.rolloff)
        chans.append(SignalGrid(shaped.samples, shaped.sample_rate, offsets[i]))
    ensemble = WdmEnsemble(tuple(chans), tx.spacing, tx.baud_rate)

    wb = channel.transmit(
        ensemble,
        link,
        launch_power_dbm,
        np.random.default_rng(noise_ss),
        sim_rate=sim.sample_rate,
        step_km=sim.step_km,
        nl_on=sim.nl_on,
        noise_on=sim.noise_on,
    )

    plan = FrequencyPlan(eq.n_ch, tx.spacing, tx.baud_rate)
    rx_ens = signals.demux(wb, plan, eq.sps_q)
    rx = torch.from_numpy(np.stack([ch.samples for ch in rx_ens.channels]))

    lo = (tx.n_ch - eq.n_ch) // 2  # equalized channels are the center subset
    ref = np.stack([frames[lo + i].symbols for i in range(eq.n_ch)])
    return SplitData(rx=rx, ref=ref, modulation=tx.modulation)


def generate_link_dataset(
    tx: TransmitterConfig,
    link: channel.LinkSpec,
    sim: SimConfig,
    eq: EqualizerSpec,
    n_train: int,
    n_val: int,
    n_test: int,
    launch_power_dbm: float,
    seed: int,
) -> LinkDataset:
    if eq.n_ch > tx.n_ch:
        raise ValueError(
            f"equalizer processes {eq.n_ch} channels but only {tx.n_ch} are transmitted"
        )
    if (tx.n_ch - eq.n_ch) % 2:
        raise ValueError("transmitted and equalized channel counts must share a center")
    ss = _split_seeds(seed, 3)
    splits = [
        simulate_split(tx, link, sim, eq, n, launch_power_dbm, s)
        for n, s in zip((n_train, n_val, n_test), ss)
    ]
    return LinkDataset(
        train=splits[0],
        val=splits[1],
        test=splits[2],
        baud_rate=tx.baud_rate,
        rolloff=tx.rolloff,
        launch_power_dbm=launch_power_dbm,
    )
