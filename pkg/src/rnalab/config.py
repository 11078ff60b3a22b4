"""Sectioned plain-text experiment configuration.

Every key and its default lives in ``DEFAULTS`` below; anything else in a
config file is rejected with the offending ``section.key`` in the message.

    [data]   benchmark geometry, domain counts, generator seed
    [model]  encoder hidden sizes, feature width
    [train]  iterations, batch size, per-stream step schedules, GRL baseline
    [loss]   alignment loss kind, lambda, HNA target norm, RNA orientation
    [sweep]  grid of kinds / lambdas / seeds for ``sweep``
    [output] output directory and dataset file format
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .data import BaseSpec, BenchmarkConfig, Mode
from .errors import ConfigError
from .experiments import SweepGrid
from .io import config_hash
from .losses import LossConfig, LossKind, Orientation
from .model import LayerConfig
from .trainer import GRLConfig, StepSchedule, TrainConfig

# section -> key -> (default text, description)
DEFAULTS: dict[str, dict[str, tuple[str, str]]] = {
    "data": {
        "mode": ("DG", "DG, UDA or SUPERVISED"),
        "seed": ("0", "generator seed (overridden by --seed)"),
        "domains": ("3", "number of synthetic domains"),
        "target_domain": ("2", "held-out target domain (DG/UDA)"),
        "source_domain": ("0", "single source domain (UDA/SUPERVISED)"),
        "train_per_domain": ("2000", "training samples per domain"),
        "test_per_domain": ("1000", "test samples per domain"),
        "latent_dim": ("10", "shared latent dimension"),
        "class_count": ("6", "number of classes"),
        "dim_v": ("32", "visual input dimension"),
        "dim_a": ("32", "audio input dimension"),
        "class_separation": ("3.0", "spread of class means in the latent"),
        "latent_noise": ("0.0", "latent noise std shared by both modalities"),
        "noise_sigma": ("1.0", "per-modality input noise std (before scaling)"),
        "scale_v": ("1.0", "visual input scale"),
        "scale_a": ("8.0", "audio input scale"),
        "nuisance_strength": ("2.0", "norm of the per-domain class-irrelevant offset"),
        "mixing_shift_v": ("0.5", "per-domain perturbation of the visual mixing basis"),
        "mixing_shift_a": ("0.6", "per-domain perturbation of the audio mixing basis"),
    },
    "model": {
        "hidden": ("64", "comma-separated encoder hidden sizes; empty for none"),
        "feature_dim": ("32", "encoder output (feature) width"),
        "feature_relu": ("true", "relu on encoder output"),
    },
    "train": {
        "iterations": ("2000", "SGD iterations"),
        "batch_size": ("128", "source batch size (target batch matches in UDA)"),
        "seed": ("0", "init / sampling seed (overridden by --seed)"),
        "lr_v": ("0.03", "visual base learning rate"),
        "lr_v_milestones": ("700", "visual decay iterations"),
        "lr_v_gamma": ("0.2", "visual decay factor"),
        "lr_a": ("0.03", "audio base learning rate"),
        "lr_a_milestones": ("350,700,1050", "audio decay iterations"),
        "lr_a_gamma": ("0.1", "audio decay factor"),
        "log_interval": ("50", "iterations between log records"),
        "streams": ("visual,audio", "trained streams"),
        "grl": ("false", "add the gradient-reversal domain discriminator (UDA only)"),
        "grl_weight": ("1.0", "final reversal weight"),
        "grl_hidden": ("64", "discriminator hidden width"),
        "grl_lr": ("0.01", "discriminator learning rate"),
        "grl_ramp": ("0.25", "fraction of iterations over which the reversal weight ramps up"),
    },
    "loss": {
        "kind": ("RNA", "RNA, HNA, RNA_SUB, COS, MSE, ORTH or NONE"),
        "lambda": ("1.0", "alignment loss weight"),
        "hna_k": ("10.0", "HNA target norm"),
        "orientation": ("AS_WRITTEN", "AS_WRITTEN (E_v/E_a) or MIN_OVER_MAX"),
        "per_stream_ce": ("false", "add per-stream cross-entropy to the fused one"),
    },
    "sweep": {
        "kinds": ("RNA", "comma-separated loss kinds"),
        "lambdas": ("1.0", "comma-separated lambda values"),
        "seeds": ("0", "comma-separated seeds"),
    },
    "output": {
        "dir": ("runs", "default output directory"),
        "format": ("binary", "dataset file format: binary or csv"),
    },
}


def defaults_table() -> str:
    """The documented defaults as an INI document (used by ``--print-defaults``)."""
    lines = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key, (value, doc) in keys.items():
            lines.append(f"# {doc}")
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, str]] = field(default_factory=dict)

    # -------------------------------------------------------------- typed access

    def raw(self, section: str, key: str) -> str:
        return self.values[section][key]

    def _parse(self, section: str, key: str, conv):
        text = self.raw(section, key).strip()
        try:
            return conv(text)
        except (ValueError, TypeError, ConfigError) as exc:
            raise ConfigError(f"{section}.{key}: invalid value {text!r} ({exc})") from None

    def get_int(self, section, key) -> int:
        return self._parse(section, key, int)

    def get_float(self, section, key) -> float:
        return self._parse(section, key, float)

    def get_bool(self, section, key) -> bool:
        return self._parse(section, key, _to_bool)

    def get_list(self, section, key, conv=str) -> tuple:
        return self._parse(section, key, lambda t: tuple(conv(x.strip()) for x in t.split(",") if x.strip()))

    # -------------------------------------------------------------- resolution

    def set(self, section: str, key: str, value) -> None:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.values[section][key] = str(value)

    def mode(self) -> Mode:
        return self._parse("data", "mode", lambda t: Mode(t.upper()))

    def base_spec(self) -> BaseSpec:
        ints = ("latent_dim", "class_count", "dim_v", "dim_a")
        floats = ("class_separation", "latent_noise", "noise_sigma", "scale_v", "scale_a",
                  "nuisance_strength", "mixing_shift_v", "mixing_shift_a")
        kwargs = {k: self.get_int("data", k) for k in ints}
        kwargs.update({k: self.get_float("data", k) for k in floats})
        try:
            spec = BaseSpec(**kwargs)
            spec.validate()
        except ValueError as exc:  # ShapeError / ConfigError
            raise ConfigError(f"[data]: {exc}") from None
        return spec

    def benchmark(self) -> BenchmarkConfig:
        keys = ("domains", "target_domain", "source_domain", "train_per_domain", "test_per_domain")
        return _build(BenchmarkConfig, "data", base=self.base_spec(), **{k: self.get_int("data", k) for k in keys})

    def data_seed(self) -> int:
        return self.get_int("data", "seed")

    def layers(self) -> LayerConfig:
        base = self.base_spec()
        return _build(
            LayerConfig, "model",
            dim_v=base.dim_v, dim_a=base.dim_a, class_count=base.class_count,
            hidden=self.get_list("model", "hidden", int),
            feature_dim=self.get_int("model", "feature_dim"),
            feature_relu=self.get_bool("model", "feature_relu"),
        )

    def loss(self) -> LossConfig:
        return _build(
            LossConfig, "loss",
            kind=self._parse("loss", "kind", lambda t: LossKind(t.upper())),
            lam=self.get_float("loss", "lambda"),
            hna_k=self.get_float("loss", "hna_k"),
            orientation=self._parse("loss", "orientation", lambda t: Orientation(t.upper())),
            per_stream_ce=self.get_bool("loss", "per_stream_ce"),
        )

    def _schedule(self, stream: str) -> StepSchedule:
        return _build(
            StepSchedule, "train",
            base=self.get_float("train", f"lr_{stream}"),
            milestones=self.get_list("train", f"lr_{stream}_milestones", int),
            gamma=self.get_float("train", f"lr_{stream}_gamma"),
        )

    def grl(self) -> GRLConfig | None:
        if not self.get_bool("train", "grl"):
            return None
        return _build(
            GRLConfig, "train",
            grl_weight=self.get_float("train", "grl_weight"),
            hidden=self.get_int("train", "grl_hidden"),
            lr=self.get_float("train", "grl_lr"),
            ramp_fraction=self.get_float("train", "grl_ramp"),
        )

    def train_config(self) -> TrainConfig:
        return _build(
            TrainConfig, "train",
            iterations=self.get_int("train", "iterations"),
            batch_size=self.get_int("train", "batch_size"),
            lr_v=self._schedule("v"),
            lr_a=self._schedule("a"),
            seed=self.get_int("train", "seed"),
            loss=self.loss(),
            mode=self.mode(),
            grl=self.grl(),
            log_interval=self.get_int("train", "log_interval"),
            streams=self.get_list("train", "streams"),
            layers=self.layers(),
        )

    def sweep_grid(self) -> SweepGrid:
        return _build(
            SweepGrid, "sweep",
            kinds=self.get_list("sweep", "kinds", lambda t: LossKind(t.upper()).value),
            lambdas=self.get_list("sweep", "lambdas", float),
            seeds=self.get_list("sweep", "seeds", int),
        )

    def validate(self) -> None:
        """Resolve everything once so bad values fail before any work starts."""
        self.benchmark()
        self.train_config()
        self.sweep_grid()
        fmt = self.raw("output", "format")
        if fmt not in ("binary", "csv"):
            raise ConfigError(f"output.format: expected 'binary' or 'csv', got {fmt!r}")

    def to_dict(self) -> dict:
        return {s: dict(sorted(keys.items())) for s, keys in sorted(self.values.items())}

    def to_ini(self) -> str:
        return "\n".join(f"[{s}]\n" + "".join(f"{k} = {v}\n" for k, v in keys.items()) for s, keys in self.values.items())

    def hash(self) -> str:
        """Hash of the fully resolved (defaults + file + overrides) configuration."""
        return config_hash(self.to_dict())


def _to_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _build(cls, section: str, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def default_config() -> ExperimentConfig:
    return ExperimentConfig({s: {k: v for k, (v, _) in keys.items()} for s, keys in DEFAULTS.items()})


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = default_config()
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{source}: unknown config key {section}.{key}")
            cfg.values[section][key] = value
    return cfg


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return default_config()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(), source=str(path))
