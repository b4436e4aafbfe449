"""felab command line: dataset generation, training, evaluation, sweeps and
complexity reports.

    felab <mode> --config <path-or-preset> [--seed N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
Every command writes a manifest sufficient to re-run it bit-identically.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__, complexity, figures, fileio
from .config import (
    ConfigError,
    ExperimentConfig,
    config_to_dict,
    load_config,
    preset_names,
    reference_page,
)
from .datasets import generate_link_dataset
from .equalizer import EqualizerSpec, build_linear_stages
from .fileio import DataError
from .training import (
    LinkDataset,
    SplitData,
    TrainingError,
    evaluate_stream,
    init_params,
    run_training,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("felab")


def _power_tag(p: float) -> str:
    return f"p{p:+.2f}dBm"


def _dataset_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.outputs) / "dataset"


def _write_manifest(out: Path, cfg: ExperimentConfig, mode: str, extra: dict | None = None):
    man = {
        "felab_version": __version__,
        "mode": mode,
        "config": config_to_dict(cfg),
    }
    if extra:
        man.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_manifest(out / f"{mode}-manifest.yaml", man)


# ---------------------------------------------------------------------------
# dataset persistence

def _save_split(split_dir: Path, split: SplitData, baud: float, q: int, seed: int):
    split_dir.mkdir(parents=True, exist_ok=True)
    rx = split.rx.numpy()
    from .signals import SignalGrid

    for c in range(rx.shape[0]):
        sig = SignalGrid(rx[c], q * baud, 0.0)
        fileio.write_waveform(split_dir / f"ch{c:02d}{fileio.WAVE_SUFFIX}", sig, baud, seed)
        fileio.write_symbols(
            split_dir / f"ch{c:02d}{fileio.SYMS_SUFFIX}",
            split.ref[c],
            split.modulation,
            baud,
            seed,
        )


def _load_split(split_dir: Path, n_ch: int) -> SplitData:
    from .signals import Modulation

    rxs, refs, mod = [], [], None
    for c in range(n_ch):
        wave = split_dir / f"ch{c:02d}{fileio.WAVE_SUFFIX}"
        syms = split_dir / f"ch{c:02d}{fileio.SYMS_SUFFIX}"
        sig, _ = fileio.read_waveform(wave)
        sym, hdr = fileio.read_symbols(syms)
        rxs.append(sig.samples)
        refs.append(sym)
        mod = Modulation(hdr["modulation"])
    return SplitData(
        rx=torch.from_numpy(np.stack(rxs)), ref=np.stack(refs), modulation=mod
    )


def load_power_dataset(cfg: ExperimentConfig, power: float) -> LinkDataset:
    base = _dataset_dir(cfg) / _power_tag(power)
    if not base.exists():
        raise DataError(
            f"no dataset for {power:+.2f} dBm under {base}; run `felab simulate` first"
        )
    return LinkDataset(
        train=_load_split(base / "train", cfg.eq.n_ch),
        val=_load_split(base / "val", cfg.eq.n_ch),
        test=_load_split(base / "test", cfg.eq.n_ch),
        baud_rate=cfg.tx.baud_rate,
        rolloff=cfg.tx.rolloff,
        launch_power_dbm=power,
    )


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: ExperimentConfig) -> int:
    out = _dataset_dir(cfg)
    for power in cfg.launch_powers_dbm:
        log.info("simulating %s", _power_tag(power))
        ds = generate_link_dataset(
            cfg.tx, cfg.link, cfg.sim, cfg.eq,
            cfg.train.train_symbols, cfg.train.val_symbols, cfg.train.test_symbols,
            power, cfg.seed,
        )
        for name, split in (("train", ds.train), ("val", ds.val), ("test", ds.test)):
            _save_split(out / _power_tag(power) / name, split, cfg.tx.baud_rate, cfg.eq.sps_q, cfg.seed)
    _write_manifest(out, cfg, "simulate")
    log.info("dataset written to %s", out)
    return EXIT_OK


def _train_one(cfg: ExperimentConfig, power: float, eq: EqualizerSpec, out: Path):
    ds = load_power_dataset(cfg, power)
    result = run_training(
        ds, eq, dataclasses.replace(cfg.train, launch_power_dbm=power),
        log_fn=lambda r: log.info(
            "%s epoch %d: loss %.3e val %.2f dB", _power_tag(power), r.epoch,
            r.train_loss, r.val_snr_mean_db,
        ),
    )
    out.mkdir(parents=True, exist_ok=True)
    fileio.save_bundle(out / "bundle.npz", eq, result.params)
    fileio.write_history(out / "history.csv", result.history)
    if result.history:
        figures.plot_history(
            out / "history.svg",
            [r.epoch for r in result.history],
            [r.train_loss for r in result.history],
            [r.val_snr_mean_db for r in result.history],
            f"training at {power:+.2f} dBm",
        )
    return result


def cmd_train(cfg: ExperimentConfig) -> int:
    for power in cfg.launch_powers_dbm:
        out = Path(cfg.outputs) / "train" / _power_tag(power)
        res = _train_one(cfg, power, cfg.eq, out)
        log.info(
            "%s: best val %.2f dB at epoch %d -> %s",
            _power_tag(power), res.best_val_snr_db, res.best_epoch, out,
        )
        _write_manifest(out, cfg, "train", {"launch_power_dbm": power})
    return EXIT_OK


def _reports_to_rows(power, model, reports):
    return [
        {
            "power_dbm": power,
            "model": model,
            "channel": r.channel,
            "ber": r.ber,
            "snr_eff_db": r.snr_eff_db,
            "snr_source": r.snr_source,
            "evm_db": r.evm_db,
            "symbol_count": r.symbol_count,
            "bit_errors": r.bit_errors,
        }
        for r in reports
    ]


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.outputs) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    stages = build_linear_stages(cfg.eq)
    rows = []
    series = {}
    for power in cfg.launch_powers_dbm:
        ds = load_power_dataset(cfg, power)
        bundle = Path(cfg.outputs) / "train" / _power_tag(power) / "bundle.npz"
        spec_echo, params = fileio.load_bundle(bundle)
        if fileio.spec_to_dict(spec_echo) != fileio.spec_to_dict(cfg.eq):
            raise DataError(
                f"bundle {bundle} was trained for a different equalizer spec:\n"
                f"bundle: {fileio.spec_to_dict(spec_echo)}\nconfig: {fileio.spec_to_dict(cfg.eq)}"
            )
        baseline = init_params(cfg.eq, cfg.tx.rolloff)  # zero NL taps == CDC only
        for model, p in (("cdc", baseline), ("fe-l-ivstf", params)):
            reports = evaluate_stream(
                ds.test.rx, ds.test.ref, p, cfg.eq, stages,
                cfg.tx.baud_rate, cfg.tx.rolloff, ds.test.modulation,
            )
            rows += _reports_to_rows(power, model, reports)
            series[f"{model} {power:+.1f} dBm"] = (
                [r.channel for r in reports],
                [r.snr_eff_db for r in reports],
            )
    fileio.write_report_csv(out / "report.csv", rows)
    figures.plot_snr_vs_channel(out / "snr_vs_channel.svg", series, "per-channel effective SNR")
    _write_manifest(out, cfg, "evaluate")
    log.info("evaluation report -> %s", out / "report.csv")
    return EXIT_OK


def cmd_sweep_power(cfg: ExperimentConfig) -> int:
    out = Path(cfg.outputs) / "sweep_power"
    out.mkdir(parents=True, exist_ok=True)
    stages = build_linear_stages(cfg.eq)
    rows, cdc_means, fe_means = [], [], []
    for power in cfg.launch_powers_dbm:
        ds = load_power_dataset(cfg, power)
        res = _train_one(cfg, power, cfg.eq, out / _power_tag(power))
        baseline = init_params(cfg.eq, cfg.tx.rolloff)
        for model, p in (("cdc", baseline), ("fe-l-ivstf", res.params)):
            reports = evaluate_stream(
                ds.test.rx, ds.test.ref, p, cfg.eq, stages,
                cfg.tx.baud_rate, cfg.tx.rolloff, ds.test.modulation,
            )
            mean = float(np.mean([r.snr_eff_db for r in reports]))
            (cdc_means if model == "cdc" else fe_means).append(mean)
            rows += _reports_to_rows(power, model, reports)
    fileio.write_report_csv(out / "points.csv", rows)
    figures.plot_snr_vs_power(
        out / "snr_vs_power.svg",
        list(cfg.launch_powers_dbm),
        {"cdc": cdc_means, "fe-l-ivstf": fe_means},
        "mean effective SNR vs launch power",
    )
    _write_manifest(out, cfg, "sweep-power")
    return EXIT_OK


def cmd_sweep_cdlen(cfg: ExperimentConfig) -> int:
    if not cfg.sweep.s_cd:
        raise ConfigError("sweep.s_cd must list at least one filter length")
    out = Path(cfg.outputs) / "sweep_cdlen"
    out.mkdir(parents=True, exist_ok=True)
    power = (
        cfg.sweep.launch_power_dbm
        if cfg.sweep.launch_power_dbm is not None
        else cfg.launch_powers_dbm[0]
    )
    ds = load_power_dataset(cfg, power)
    rows = []
    series = {}
    for delta in cfg.sweep.delta_cd_ps_nm:
        means = []
        for s_cd in cfg.sweep.s_cd:
            eq = dataclasses.replace(cfg.eq, s_cd=int(s_cd), delta_cd_ps_nm=float(delta))
            tag = f"scd{s_cd}_delta{delta:g}"
            res = _train_one(cfg, power, eq, out / tag)
            stages = build_linear_stages(eq)
            reports = evaluate_stream(
                ds.test.rx, ds.test.ref, res.params, eq, stages,
                cfg.tx.baud_rate, cfg.tx.rolloff, ds.test.modulation,
            )
            mean = float(np.mean([r.snr_eff_db for r in reports]))
            means.append(mean)
            rows.append(
                {
                    "power_dbm": power,
                    "delta_cd_ps_nm": float(delta),
                    "s_cd": int(s_cd),
                    "mean_snr_db": mean,
                    "best_epoch": res.best_epoch,
                }
            )
        series[f"delta {delta:g} ps/nm"] = means
    fileio.write_report_csv(out / "points.csv", rows)
    figures.plot_snr_vs_cdlen(
        out / "snr_vs_scd.svg", list(cfg.sweep.s_cd), series,
        "mean effective SNR vs field-filter length",
    )
    _write_manifest(out, cfg, "sweep-cdlen")
    return EXIT_OK


def cmd_complexity(cfg: ExperimentConfig) -> int:
    if not cfg.complexity_cases:
        raise ConfigError("complexity_cases must list at least one case")
    out = Path(cfg.outputs) / "complexity"
    out.mkdir(parents=True, exist_ok=True)
    rows, names, fes, plains = [], [], [], []
    for case in cfg.complexity_cases:
        fe = complexity.CostSpec(
            case.n_ch, case.fe_steps_per_span * cfg.link.spans,
            case.s_spm, case.s_xpm, case.s_cd,
            cfg.eq.n_fft, cfg.eq.overlap_m, cfg.eq.sps_q,
        )
        plain = complexity.CostSpec(
            case.n_ch, case.plain_steps_per_span * cfg.link.spans,
            case.s_spm, case.s_xpm, 0,
            cfg.eq.n_fft, cfg.eq.overlap_m, cfg.eq.sps_q,
        )
        comp = complexity.compare(fe, plain)
        rows.append(
            {
                "case": case.name,
                "fe_fd_rm_per_sym": comp.fe.fd_rm_per_sym,
                "fe_td_rm_per_sym": comp.fe.td_rm_per_sym,
                "fe_total_rm_per_sym": comp.fe.total,
                "plain_fd_rm_per_sym": comp.plain.fd_rm_per_sym,
                "plain_td_rm_per_sym": comp.plain.td_rm_per_sym,
                "plain_total_rm_per_sym": comp.plain.total,
                "ratio": comp.ratio,
            }
        )
        names.append(case.name)
        fes.append(comp.fe.total)
        plains.append(comp.plain.total)
        log.info(
            "%s: FE %.2f vs plain %.2f RM/sym (%.2f%%)",
            case.name, comp.fe.total, comp.plain.total, 100 * comp.ratio,
        )
    fileio.write_report_csv(out / "table.csv", rows)
    figures.plot_complexity_bars(out / "bars.svg", names, fes, plains, "RM/sym, formula-exact totals")
    _write_manifest(out, cfg, "complexity")
    return EXIT_OK


# ---------------------------------------------------------------------------

_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-cdlen": cmd_sweep_cdlen,
    "sweep-power": cmd_sweep_power,
    "complexity": cmd_complexity,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="felab",
        description="WDM link simulation and learned MIMO Volterra equalization workbench",
    )
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in _COMMANDS:
        p = sub.add_parser(mode, help=f"run the {mode} pipeline")
        p.add_argument("--config", required=True, help=f"YAML config path or preset name {preset_names()}")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config outputs directory")
    ref = sub.add_parser("config-reference", help="print the configuration reference page")
    ref.add_argument("--out", default=None, help="write to a file instead of stdout")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.mode == "config-reference":
        page = reference_page()
        if args.out:
            Path(args.out).write_text(page)
        else:
            sys.stdout.write(page)
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, outputs=args.out)
        return _COMMANDS[args.mode](cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (TrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
