"""Experiment configuration: one YAML key tree drives every CLI mode.

Unknown keys are rejected with the offending path so typos surface
immediately; every default is documented in the generated reference
(`felab config-reference`). Shipped presets live under felab/presets and can
be named directly with --config (e.g. `--config preset-3x3-desk`).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .channel import FiberParams, LinkSpec
from .datasets import SimConfig, TransmitterConfig
from .equalizer import EqualizerSpec
from .signals import Modulation
from .training import TrainConfig

MODES = ("simulate", "train", "evaluate", "sweep-cdlen", "sweep-power", "complexity")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    s_cd: tuple = (3, 5, 7)
    delta_cd_ps_nm: tuple = (4.25,)
    launch_power_dbm: float | None = None  # None -> first tx launch power


@dataclass(frozen=True)
class ComplexityCase:
    name: str
    n_ch: int
    fe_steps_per_span: int
    plain_steps_per_span: int = 4
    s_spm: int = 7
    s_xpm: int = 31
    s_cd: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1234
    outputs: str = "runs/exp"
    mode: str | None = None  # optional; the CLI subcommand is authoritative
    tx: TransmitterConfig = field(default_factory=TransmitterConfig)
    launch_powers_dbm: tuple = (0.0, 1.0, 2.0, 3.0)
    link: LinkSpec = field(default_factory=lambda: LinkSpec(spans=2, fiber=FiberParams()))
    sim: SimConfig = field(default_factory=SimConfig)
    eq: EqualizerSpec = field(
        default_factory=lambda: EqualizerSpec(n_ch=3, steps_per_span=1, spans=2)
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    complexity_cases: tuple = (
        ComplexityCase("3x3", 3, 1),
        ComplexityCase("5x5", 5, 1),
        ComplexityCase("7x7", 7, 2),
        ComplexityCase("9x9", 9, 2),
    )

    def __post_init__(self):
        if self.mode is not None and self.mode not in MODES:
            raise ConfigError(f"mode {self.mode!r} not in {MODES}")
        if self.eq.spans != self.link.spans:
            raise ConfigError(
                f"equalizer spans {self.eq.spans} != link spans {self.link.spans}"
            )
        if self.eq.fiber != self.link.fiber:
            raise ConfigError("equalizer fiber parameters must match the link fiber")
        if self.eq.spacing != self.tx.spacing or self.eq.baud_rate != self.tx.baud_rate:
            raise ConfigError("equalizer spacing/baud_rate must match the transmitter")
        if self.eq.n_ch > self.tx.n_ch:
            raise ConfigError(
                f"equalizer n_ch {self.eq.n_ch} exceeds transmitted n_ch {self.tx.n_ch}"
            )
        if not self.launch_powers_dbm:
            raise ConfigError("launch_powers_dbm must not be empty")


# ---------------------------------------------------------------------------
# YAML <-> dataclasses

_TX_KEYS = {"modulation", "baud_rate", "spacing", "n_ch", "rolloff"}
_FIBER_KEYS = {"dispersion_ps_nm_km", "gamma_per_w_km", "alpha_db_km", "length_km", "ref_wavelength_nm"}
_LINK_KEYS = {"spans", "edfa_nf_db", "fiber"}
_SIM_KEYS = {"sample_rate", "step_km", "nl_on", "noise_on"}
_EQ_KEYS = {
    "n_ch", "steps_per_span", "spans", "s_spm", "s_xpm", "s_cd",
    "delta_cd_ps_nm", "n_fft", "overlap_m", "sps_q", "spacing", "baud_rate",
    "fiber",  # accepted for manifest round trips; must match link.fiber
}
_TRAIN_KEYS = {
    "learning_rate", "batch_blocks", "epochs", "train_symbols", "val_symbols",
    "test_symbols", "seed", "launch_power_dbm", "mf_span_symbols",
    "adam_beta1", "adam_beta2", "adam_eps",
}
_SWEEP_KEYS = {"s_cd", "delta_cd_ps_nm", "launch_power_dbm"}
_TOP_KEYS = {
    "seed", "outputs", "mode", "tx", "launch_powers_dbm", "link", "sim", "eq",
    "train", "sweep", "complexity_cases",
}


def _check_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} under '{where}'")


_FLOAT_FIELDS = {
    "baud_rate", "spacing", "rolloff", "edfa_nf_db", "dispersion_ps_nm_km",
    "gamma_per_w_km", "alpha_db_km", "length_km", "ref_wavelength_nm",
    "sample_rate", "step_km", "delta_cd_ps_nm", "learning_rate",
    "launch_power_dbm", "adam_beta1", "adam_beta2", "adam_eps",
}
_INT_FIELDS = {
    "n_ch", "spans", "steps_per_span", "s_spm", "s_xpm", "s_cd", "n_fft",
    "overlap_m", "sps_q", "batch_blocks", "epochs", "train_symbols",
    "val_symbols", "test_symbols", "seed", "mf_span_symbols",
    "fe_steps_per_span", "plain_steps_per_span",
}


def _coerce_numbers(d: dict, where: str) -> dict:
    """Cast numeric fields; tolerates YAML 1.1 treating '32.0e9' as a string."""
    out = {}
    for k, v in d.items():
        try:
            if v is not None and k in _FLOAT_FIELDS:
                v = float(v)
            elif v is not None and k in _INT_FIELDS:
                v = int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"'{where}.{k}' must be numeric, got {v!r}") from None
        out[k] = v
    return out


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    _check_keys(doc, _TOP_KEYS, "<top>")
    kw: dict = {}
    for k in ("seed", "outputs", "mode"):
        if k in doc:
            kw[k] = doc[k]
    if "launch_powers_dbm" in doc:
        kw["launch_powers_dbm"] = tuple(float(p) for p in doc["launch_powers_dbm"])

    if "tx" in doc:
        t = dict(doc["tx"])
        _check_keys(t, _TX_KEYS, "tx")
        t = _coerce_numbers(t, "tx")
        if "modulation" in t:
            try:
                t["modulation"] = Modulation(str(t["modulation"]).lower())
            except ValueError:
                raise ConfigError(
                    f"unknown modulation {t['modulation']!r}; use one of "
                    f"{[m.value for m in Modulation]}"
                ) from None
        kw["tx"] = TransmitterConfig(**t)
    tx = kw.get("tx", TransmitterConfig())

    fiber = FiberParams()
    if "link" in doc:
        ln = dict(doc["link"])
        _check_keys(ln, _LINK_KEYS, "link")
        ln = _coerce_numbers(ln, "link")
        if "fiber" in ln:
            fb = dict(ln["fiber"])
            _check_keys(fb, _FIBER_KEYS, "link.fiber")
            fiber = FiberParams(**_coerce_numbers(fb, "link.fiber"))
            ln["fiber"] = fiber
        else:
            ln["fiber"] = fiber
        kw["link"] = LinkSpec(**ln)
    link = kw.get("link", LinkSpec(spans=2, fiber=fiber))

    if "sim" in doc:
        s = dict(doc["sim"])
        _check_keys(s, _SIM_KEYS, "sim")
        kw["sim"] = SimConfig(**_coerce_numbers(s, "sim"))

    eq_defaults = {
        "spans": link.spans,
        "fiber": link.fiber,
        "spacing": tx.spacing,
        "baud_rate": tx.baud_rate,
        "n_ch": tx.n_ch,
        "steps_per_span": 1,
    }
    if "eq" in doc:
        e = dict(doc["eq"])
        _check_keys(e, _EQ_KEYS, "eq")
        e = _coerce_numbers(e, "eq")
        if isinstance(e.get("fiber"), dict):
            _check_keys(e["fiber"], _FIBER_KEYS, "eq.fiber")
            e["fiber"] = FiberParams(**_coerce_numbers(e["fiber"], "eq.fiber"))
        eq_defaults.update(e)
    kw["eq"] = EqualizerSpec(**eq_defaults)

    if "train" in doc:
        tr = dict(doc["train"])
        _check_keys(tr, _TRAIN_KEYS, "train")
        kw["train"] = TrainConfig(**_coerce_numbers(tr, "train"))

    if "sweep" in doc:
        sw = dict(doc["sweep"])
        _check_keys(sw, _SWEEP_KEYS, "sweep")
        if "s_cd" in sw:
            sw["s_cd"] = tuple(int(v) for v in sw["s_cd"])
        if "delta_cd_ps_nm" in sw:
            sw["delta_cd_ps_nm"] = tuple(float(v) for v in sw["delta_cd_ps_nm"])
        if sw.get("launch_power_dbm") is not None:
            sw["launch_power_dbm"] = float(sw["launch_power_dbm"])
        kw["sweep"] = SweepConfig(**sw)

    if "complexity_cases" in doc:
        cases = []
        for i, c in enumerate(doc["complexity_cases"]):
            _check_keys(
                dict(c),
                {f.name for f in dataclasses.fields(ComplexityCase)},
                f"complexity_cases[{i}]",
            )
            cases.append(ComplexityCase(**_coerce_numbers(dict(c), f"complexity_cases[{i}]")))
        kw["complexity_cases"] = tuple(cases)

    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def preset_names() -> list:
    root = resources.files("felab").joinpath("presets")
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(path_or_preset: str) -> ExperimentConfig:
    """Load a YAML config from a path, or a shipped preset by name."""
    p = Path(path_or_preset)
    if p.exists():
        text = p.read_text()
    else:
        res = resources.files("felab").joinpath(f"presets/{path_or_preset}.yaml")
        if not res.is_file():
            raise ConfigError(
                f"config {path_or_preset!r} is neither a file nor a preset; "
                f"presets: {preset_names()}"
            )
        text = res.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path_or_preset}: {exc}") from None
    return config_from_dict(doc or {})


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["tx"]["modulation"] = cfg.tx.modulation.value
    d["launch_powers_dbm"] = list(cfg.launch_powers_dbm)
    d["sweep"]["s_cd"] = list(cfg.sweep.s_cd)
    d["sweep"]["delta_cd_ps_nm"] = list(cfg.sweep.delta_cd_ps_nm)
    d["complexity_cases"] = [dataclasses.asdict(c) for c in cfg.complexity_cases]
    return d


_REFERENCE_NOTES = {
    "seed": "master seed; every derived RNG (bits, noise, shuffling) spawns from it",
    "outputs": "directory for datasets, bundles, reports and figures",
    "mode": "optional default mode; the CLI subcommand takes precedence",
    "launch_powers_dbm": "per-channel launch powers swept by simulate/train/evaluate",
    "tx.modulation": "qpsk | qam16 | qam64",
    "tx.baud_rate": "symbol rate per channel, Hz",
    "tx.spacing": "WDM channel spacing, Hz",
    "tx.n_ch": "transmitted channel count",
    "tx.rolloff": "root-raised-cosine roll-off (paper silent; 0.1 default)",
    "link.spans": "number of amplified fiber spans",
    "link.edfa_nf_db": "EDFA noise figure, dB",
    "link.fiber.dispersion_ps_nm_km": "D, ps/(nm km)",
    "link.fiber.gamma_per_w_km": "nonlinear coefficient, 1/(W km)",
    "link.fiber.alpha_db_km": "loss, dB/km",
    "link.fiber.length_km": "span length, km",
    "link.fiber.ref_wavelength_nm": "reference wavelength for beta2",
    "sim.sample_rate": "simulation grid rate, Hz; null selects 16 samples/symbol",
    "sim.step_km": "split-step size (not a paper value; config default 0.1 km)",
    "sim.nl_on": "enable the Kerr nonlinearity in the forward simulation",
    "sim.noise_on": "enable EDFA ASE noise",
    "eq.n_ch": "MIMO size; the center subset of transmitted channels",
    "eq.steps_per_span": "equalizer nonlinear steps per span",
    "eq.spans": "must equal link.spans",
    "eq.s_spm": "SPM power-filter taps (odd)",
    "eq.s_xpm": "XPM power-filter taps (odd)",
    "eq.s_cd": "field-filter taps at each branch port (odd)",
    "eq.delta_cd_ps_nm": "dispersion delegated to the field filters, ps/nm",
    "eq.n_fft": "overlap-and-save FFT size",
    "eq.overlap_m": "overlap length M; M-1 samples discarded per block",
    "eq.sps_q": "equalizer samples per symbol (q)",
    "train.learning_rate": "Adam learning rate",
    "train.batch_blocks": "overlap-save blocks per optimizer step",
    "train.epochs": "training epochs (best-validation parameters kept)",
    "train.train_symbols": "symbols per channel in the training split",
    "train.val_symbols": "symbols per channel in the validation split",
    "train.test_symbols": "symbols per channel in the test split",
    "train.seed": "training-loop shuffle seed",
    "train.launch_power_dbm": "power used by `train` when a dataset has several",
    "train.mf_span_symbols": "half-span of the truncated in-loss matched filter",
    "train.adam_beta1": "Adam first-moment decay",
    "train.adam_beta2": "Adam second-moment decay",
    "train.adam_eps": "Adam epsilon",
    "sweep.s_cd": "field-filter lengths swept by sweep-cdlen",
    "sweep.delta_cd_ps_nm": "delegated-dispersion values swept by sweep-cdlen",
    "sweep.launch_power_dbm": "power used by sweeps; null -> first launch power",
    "complexity_cases": "list of {name, n_ch, fe_steps_per_span, plain_steps_per_span, s_spm, s_xpm, s_cd}",
}


def reference_page() -> str:
    """Markdown reference of every config key with its default."""
    cfg = ExperimentConfig()
    d = config_to_dict(cfg)
    lines = [
        "# felab configuration reference",
        "",
        "One YAML document drives every `felab` mode. Defaults below; unknown",
        "keys are rejected. Shipped presets: " + ", ".join(preset_names()) + ".",
        "",
        "| key | default | description |",
        "| --- | --- | --- |",
    ]

    def walk(prefix: str, val):
        if isinstance(val, dict):
            for k, v in val.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        else:
            note = _REFERENCE_NOTES.get(prefix, "")
            lines.append(f"| `{prefix}` | `{val!r}` | {note} |")

    top = {k: d[k] for k in ("seed", "outputs", "mode", "launch_powers_dbm")}
    walk("", top)
    for section in ("tx", "link", "sim", "eq", "train", "sweep"):
        walk(section, d[section])
    lines.append(f"| `complexity_cases` | 4 paper-sized cases | {_REFERENCE_NOTES['complexity_cases']} |")
    return "\n".join(lines) + "\n"
