"""Matplotlib figure rendering for the CLI report paths.

Every figure is written as SVG 1.1 next to its delimited-text data. Output is
byte-deterministic: the SVG hash salt is pinned and the date metadata is
stripped, so re-running a command reproduces identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

matplotlib.rcParams["svg.hashsalt"] = "felab"

_SAVE_KW = dict(format="svg", metadata={"Date": None}, bbox_inches="tight")


def _new_axes(xlabel: str, ylabel: str, title: str):
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=10)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _finish(fig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_snr_vs_channel(path, series: dict, title: str):
    """series: label -> (channel indices, per-channel SNR dB)."""
    fig, ax = _new_axes("channel", "effective SNR (dB)", title)
    for label, (chans, snrs) in series.items():
        ax.plot(chans, snrs, marker="o", label=label)
    ax.legend(fontsize=8)
    _finish(fig, path)


def plot_snr_vs_power(path, powers, series: dict, title: str):
    """series: label -> mean SNR dB per launch power."""
    fig, ax = _new_axes("launch power (dBm)", "mean effective SNR (dB)", title)
    for label, snrs in series.items():
        ax.plot(powers, snrs, marker="s", label=label)
    ax.legend(fontsize=8)
    _finish(fig, path)


def plot_snr_vs_cdlen(path, s_cd_values, series: dict, title: str):
    """series: 'delta=... ps/nm' -> mean SNR dB per field-filter length."""
    fig, ax = _new_axes("CD FIR length (taps)", "mean effective SNR (dB)", title)
    for label, snrs in series.items():
        ax.plot(s_cd_values, snrs, marker="o", label=label)
    ax.set_xticks(list(s_cd_values))
    ax.legend(fontsize=8)
    _finish(fig, path)


def plot_complexity_bars(path, names, fe_totals, plain_totals, title: str):
    fig, ax = _new_axes("MIMO size", "RM / symbol", title)
    x = range(len(names))
    w = 0.38
    ax.bar([i - w / 2 for i in x], fe_totals, width=w, label="field-enhanced")
    ax.bar([i + w / 2 for i in x], plain_totals, width=w, label="power-waveform only")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names)
    for i, (fe, pl) in enumerate(zip(fe_totals, plain_totals)):
        ax.text(i - w / 2, fe, f"{100*fe/pl:.1f}%", ha="center", va="bottom", fontsize=7)
    ax.legend(fontsize=8)
    _finish(fig, path)


def plot_history(path, epochs, loss, val_snr, title: str):
    fig, ax = _new_axes("epoch", "training loss", title)
    ax.semilogy(epochs, loss, color="tab:blue", label="train loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, val_snr, color="tab:orange", label="val SNR")
    ax2.set_ylabel("validation SNR (dB)")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], fontsize=8)
    _finish(fig, path)
