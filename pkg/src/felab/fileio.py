"""File formats: waveforms, symbol frames, parameter bundles, run artifacts.

Waveform files are raw little-endian float64 interleaved (re, im) pairs with
a YAML sidecar header (`<name>.hdr`) carrying sample_rate, center_offset,
baud_rate and seed plus free-form extras. Symbol files reuse the same binary
layout with their own header kind. Parameter bundles are npz containers with
a format-version field and a spec echo; round trips are bit exact.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch
import yaml

from .channel import FiberParams
from .equalizer import CDTYPE, RDTYPE, EqualizerParams, EqualizerSpec
from .signals import Modulation, SignalGrid

BUNDLE_VERSION = 1
WAVE_SUFFIX = ".wave"
SYMS_SUFFIX = ".syms"
HDR_SUFFIX = ".hdr"


class DataError(RuntimeError):
    """Missing, malformed or incompatible data files."""


def _write_header(path: Path, header: dict):
    with open(str(path) + HDR_SUFFIX, "w") as f:
        yaml.safe_dump(header, f, sort_keys=True)


def _read_header(path: Path) -> dict:
    hdr = Path(str(path) + HDR_SUFFIX)
    if not hdr.exists():
        raise DataError(f"missing sidecar header {hdr}")
    with open(hdr) as f:
        return yaml.safe_load(f)


def _write_complex(path: Path, samples: np.ndarray):
    inter = np.empty(2 * samples.size, dtype="<f8")
    inter[0::2] = samples.real
    inter[1::2] = samples.imag
    inter.tofile(path)


def _read_complex(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing data file {path}")
    inter = np.fromfile(path, dtype="<f8")
    if inter.size % 2:
        raise DataError(f"{path}: odd float count, not interleaved complex")
    return inter[0::2] + 1j * inter[1::2]


def write_waveform(path, sig: SignalGrid, baud_rate: float, seed: int, extra: dict | None = None):
    path = Path(path)
    header = {
        "kind": "waveform",
        "sample_rate": float(sig.sample_rate),
        "center_offset": float(sig.center_offset),
        "baud_rate": float(baud_rate),
        "seed": int(seed),
        "samples": int(len(sig)),
    }
    if extra:
        header.update(extra)
    _write_complex(path, sig.samples)
    _write_header(path, header)


def read_waveform(path) -> tuple[SignalGrid, dict]:
    header = _read_header(Path(path))
    if header.get("kind") != "waveform":
        raise DataError(f"{path}: header kind {header.get('kind')!r}, expected waveform")
    samples = _read_complex(Path(path))
    sig = SignalGrid(samples, header["sample_rate"], header.get("center_offset", 0.0))
    return sig, header


def write_symbols(path, symbols: np.ndarray, modulation: Modulation, baud_rate: float, seed: int):
    path = Path(path)
    _write_complex(path, np.asarray(symbols, dtype=np.complex128))
    _write_header(
        path,
        {
            "kind": "symbols",
            "modulation": modulation.value,
            "baud_rate": float(baud_rate),
            "seed": int(seed),
            "symbols": int(np.asarray(symbols).size),
        },
    )


def read_symbols(path) -> tuple[np.ndarray, dict]:
    header = _read_header(Path(path))
    if header.get("kind") != "symbols":
        raise DataError(f"{path}: header kind {header.get('kind')!r}, expected symbols")
    return _read_complex(Path(path)), header


# ---------------------------------------------------------------------------
# equalizer parameter bundle

def spec_to_dict(spec: EqualizerSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["fiber"] = dataclasses.asdict(spec.fiber)
    return d


def spec_from_dict(d: dict) -> EqualizerSpec:
    d = dict(d)
    d["fiber"] = FiberParams(**d["fiber"])
    return EqualizerSpec(**d)


def save_bundle(path, spec: EqualizerSpec, params: EqualizerParams):
    params.validate_for(spec)
    arrays = {k: v.detach().numpy() for k, v in params.named().items()}
    np.savez(
        path,
        format_version=np.int64(BUNDLE_VERSION),
        spec_json=np.frombuffer(json.dumps(spec_to_dict(spec)).encode(), dtype=np.uint8),
        **arrays,
    )


def load_bundle(path) -> tuple[EqualizerSpec, EqualizerParams]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing parameter bundle {path}")
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != BUNDLE_VERSION:
            raise DataError(f"{path}: bundle version {version}, expected {BUNDLE_VERSION}")
        spec = spec_from_dict(json.loads(bytes(z["spec_json"]).decode()))
        params = EqualizerParams(
            alpha=torch.from_numpy(z["alpha"]).to(RDTYPE),
            beta=torch.from_numpy(z["beta"]).to(RDTYPE),
            h_in=torch.from_numpy(z["h_in"]).to(CDTYPE),
            h_out=torch.from_numpy(z["h_out"]).to(CDTYPE),
        )
    params.validate_for(spec)
    return spec, params


# ---------------------------------------------------------------------------
# delimited text artifacts

def write_history(path, history):
    """epoch, train_loss, per-channel val SNR, mean val SNR as CSV."""
    if not history:
        Path(path).write_text("epoch,train_loss,val_snr_mean_db\n")
        return
    n_ch = len(history[0].val_snr_db)
    cols = ["epoch", "train_loss"] + [f"val_snr_ch{i}_db" for i in range(n_ch)] + ["val_snr_mean_db"]
    lines = [",".join(cols)]
    for r in history:
        vals = [str(r.epoch), repr(r.train_loss)]
        vals += [repr(v) for v in r.val_snr_db]
        vals.append(repr(r.val_snr_mean_db))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_history(path) -> list[dict]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise DataError(f"{path}: empty history")
    cols = lines[0].split(",")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        row = {c: (int(v) if c == "epoch" else float(v)) for c, v in zip(cols, parts)}
        out.append(row)
    return out


def write_report_csv(path, rows: list[dict]):
    if not rows:
        raise DataError("refusing to write an empty report")
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(_fmt_csv(r[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def read_report_csv(path) -> list[dict]:
    lines = Path(path).read_text().strip().splitlines()
    cols = lines[0].split(",")
    out = []
    for ln in lines[1:]:
        row = {}
        for c, v in zip(cols, ln.split(",")):
            try:
                row[c] = int(v)
            except ValueError:
                try:
                    row[c] = float(v)
                except ValueError:
                    row[c] = v
        out.append(row)
    return out


def _fmt_csv(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_manifest(path, manifest: dict):
    with open(path, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)


def read_manifest(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing manifest {p}")
    with open(p) as f:
        return yaml.safe_load(f)
