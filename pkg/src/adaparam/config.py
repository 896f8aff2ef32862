"""Experiment configuration: `key = value` lines under `[section]` headers.

Unknown sections or keys are rejected, duplicates are errors, and every
omitted key is filled from the documented defaults (training-recipe values:
lr 0.003, beta1 0, beta2 0.999, weight decay 1e-6, cuts at epochs 100 and
160 by 10x, dropout 0.16/0.6/0.1/0.25/0.6, batch 20, truncation 70, policy
latent 100). A parsed config prints back to a canonical text that parses
to an equal config.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

KINDS = ("tail-regression", "mnist", "tiny-lm", "ablation-grid", "robustness-sweep")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    t = text.strip()
    return tuple(int(x) for x in t.split(",")) if t else ()


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass
class ExperimentSection:
    kind: str = ""
    seed: int = 0
    deterministic_timing: bool = True


@dataclass
class ModelSection:
    variants: tuple[str, ...] = ()
    hidden: int = 128
    embed: int = 96
    latent: int = 100
    layers: int = 2
    rank: int = 8
    tie_inputs: bool = True
    tie_embedding: bool = False
    match_params: bool = True


@dataclass
class OptimizerSection:
    kind: str = "adam"
    lr: float = 0.003
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    clip: float = 0.0
    baseline_clip: float = 5.0
    cut_epochs: tuple[int, ...] = (100, 160)
    cut_factor: float = 10.0
    epochs: int = 0
    steps: int = 0


@dataclass
class DataSection:
    path: str = ""
    corpus_tokens: int = 0
    corpus_seed: int = 7
    mode: str = "word"
    vocab_size: int = 0
    batch: int = 20
    bptt: int = 70
    train_frac: float = 0.9
    valid_frac: float = 0.05
    mnist_dir: str = ""
    train_samples: int = 500_000
    test_samples: int = 10_000


@dataclass
class DropoutSection:
    word: float = 0.16
    embedding: float = 0.6
    latent: float = 0.1
    hidden: float = 0.25
    output: float = 0.6


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    data: DataSection = field(default_factory=DataSection)
    dropout: DropoutSection = field(default_factory=DropoutSection)

    def to_text(self) -> str:
        out = io.StringIO()
        for sect_name in _SECTIONS:
            section = getattr(self, sect_name)
            out.write(f"[{sect_name}]\n")
            for f in fields(section):
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)  # shortest exact round-trip form
                out.write(f"{f.name} = {value}\n")
            out.write("\n")
        return out.getvalue()


_SECTIONS = ("experiment", "model", "optimizer", "data", "dropout")

_PARSERS = {
    "bool": _bool,
    "int": int,
    "float": float,
    "str": lambda s: s.strip(),
    "tuple[int, ...]": _int_list,
    "tuple[str, ...]": _str_list,
}


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key: {exc}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    cfg = ExperimentConfig()
    for sect in parser.sections():
        if sect not in _SECTIONS:
            raise ConfigError(f"unknown section [{sect}]; expected one of {_SECTIONS}")
        target = getattr(cfg, sect)
        known = {f.name: f for f in fields(target)}
        for key, raw in parser.items(sect):
            if key not in known:
                raise ConfigError(
                    f"unknown key {key!r} in [{sect}]; known keys: {sorted(known)}")
            f = known[key]
            try:
                value = _PARSERS[f.type if not isinstance(f.type, str) else eval(f.type)](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {sect}.{key}: {raw!r} ({exc})") from None
            setattr(target, key, value)

    _validate(cfg, parser)
    _apply_kind_defaults(cfg, parser)
    return cfg


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


def _validate(cfg: ExperimentConfig, parser) -> None:
    kind = cfg.experiment.kind
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
    if not cfg.model.variants:
        raise ConfigError(
            "the [model] section must set its required keys: variants "
            "(comma-separated list of model variants to train)")
    for name, rate in vars(cfg.dropout).items():
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout.{name} must be in [0, 1), got {rate}")
    for name in ("hidden", "embed", "latent", "layers", "rank"):
        if getattr(cfg.model, name) <= 0:
            raise ConfigError(f"model.{name} must be positive")
    if cfg.optimizer.kind not in ("adam", "sgd"):
        raise ConfigError(f"optimizer.kind must be adam or sgd, got {cfg.optimizer.kind!r}")
    if cfg.data.mode not in ("word", "char"):
        raise ConfigError(f"data.mode must be word or char, got {cfg.data.mode!r}")
    if kind in ("tiny-lm", "ablation-grid", "robustness-sweep"):
        if not cfg.data.path and cfg.data.corpus_tokens <= 0:
            raise ConfigError(
                f"{kind} needs a corpus: set data.path to a text file or "
                "data.corpus_tokens for a generated one")
    if kind == "mnist" and not cfg.data.mnist_dir:
        raise ConfigError("mnist needs data.mnist_dir pointing at the IDX files")


def _apply_kind_defaults(cfg: ExperimentConfig, parser) -> None:
    """Fill budget knobs the config left at zero."""
    kind = cfg.experiment.kind
    opt = cfg.optimizer
    if opt.steps == 0:
        opt.steps = {"tail-regression": 10_000, "mnist": 12_000}.get(kind, 0)
    if opt.epochs == 0:
        opt.epochs = {"tiny-lm": 20, "ablation-grid": 20, "robustness-sweep": 10}.get(kind, 0)
    if not parser.has_option("model", "latent") and kind in ("tail-regression", "mnist"):
        cfg.model.latent = 16
