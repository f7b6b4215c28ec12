"""Plain-text run configuration with sections: data, lfs, encoder, model, train.

Unknown sections or keys are errors. The [lfs] section holds one entry per
labeling function ("<kind> <class> <payload>"); everything else is key=value
with types enforced per field.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .data import SynthSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

_BOOLS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _parse_bool(section: str, key: str, raw: str) -> bool:
    try:
        return _BOOLS[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}") from None


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _parse_int_tuple(section: str, key: str, raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected comma-separated integers, got {raw!r}") from None


@dataclass(frozen=True)
class DataConfig:
    format: str = "wrench-json"
    path: str | None = None
    synth: SynthSpec | None = None

    def __post_init__(self):
        if self.format not in ("wrench-json", "jsonl", "synth"):
            raise ConfigError(f"unknown data format {self.format!r}")
        if self.format == "synth":
            if self.synth is None:
                object.__setattr__(self, "synth", SynthSpec())
        elif not self.path:
            raise ConfigError("[data] path is required unless format = synth")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig | None
    lf_entries: tuple[tuple[str, str], ...]
    encoder: EncoderConfig
    model: ModelConfig
    train: TrainConfig

    def to_echo_dict(self) -> dict:
        echo: dict = {
            "encoder": dataclasses.asdict(self.encoder),
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "lfs": [list(entry) for entry in self.lf_entries],
        }
        echo["encoder"]["hidden"] = list(self.encoder.hidden)
        if self.data is not None:
            echo["data"] = {"format": self.data.format, "path": self.data.path}
            if self.data.synth is not None:
                echo["data"]["synth"] = dataclasses.asdict(self.data.synth)
        return echo


_DATA_KEYS = {
    "path": str,
    "format": str,
    "c": int,
    "m_per_class": int,
    "n_train": int,
    "n_dev": int,
    "n_test": int,
    "lf_accuracy": float,
    "lf_coverage": float,
}
_ENCODER_KEYS = {
    "max_features": int,
    "min_df": int,
    "lowercase": bool,
    "hidden": tuple,
    "dim": int,
    "nonlinearity": str,
}
_MODEL_KEYS = {"head_depth": int, "head_hidden": int, "nonlinearity": str}
_TRAIN_KEYS = {
    "learning_rate": float,
    "batch_size": int,
    "warmup_steps": int,
    "weight_decay": float,
    "l2_lf": float,
    "noise_lambda": float,
    "use_unlabeled": bool,
    "max_epochs": int,
    "patience": int,
    "seed": int,
    "metric": str,
    "positive_class": int,
    "l2_lf_target": str,
}


def _collect(section: str, items, schema: dict) -> dict:
    out = {}
    for key, raw in items:
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        kind = schema[key]
        if kind is bool:
            out[key] = _parse_bool(section, key, raw)
        elif kind is int:
            out[key] = _parse_int(section, key, raw)
        elif kind is float:
            out[key] = _parse_float(section, key, raw)
        elif kind is tuple:
            out[key] = _parse_int_tuple(section, key, raw)
        else:
            out[key] = raw.strip()
    return out


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # keep key case
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known = {"data", "lfs", "encoder", "model", "train"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")

    data_cfg = None
    if parser.has_section("data"):
        fields = _collect("data", parser.items("data"), _DATA_KEYS)
        fmt = fields.pop("format", "wrench-json")
        path_value = fields.pop("path", None)
        if fmt == "synth":
            try:
                synth = SynthSpec(**fields)
            except TypeError as exc:
                raise ConfigError(f"[data] bad synth fields: {exc}") from exc
            data_cfg = DataConfig(format=fmt, path=path_value, synth=synth)
        else:
            if fields:
                raise ConfigError(
                    f"[data] keys {sorted(fields)} are only valid with format = synth"
                )
            data_cfg = DataConfig(format=fmt, path=path_value)

    lf_entries: tuple[tuple[str, str], ...] = ()
    if parser.has_section("lfs"):
        lf_entries = tuple((key, value) for key, value in parser.items("lfs"))

    encoder_cfg = EncoderConfig(**_collect("encoder", parser.items("encoder") if parser.has_section("encoder") else [], _ENCODER_KEYS))
    model_cfg = ModelConfig(**_collect("model", parser.items("model") if parser.has_section("model") else [], _MODEL_KEYS))
    train_cfg = TrainConfig(**_collect("train", parser.items("train") if parser.has_section("train") else [], _TRAIN_KEYS))
    return RunConfig(
        data=data_cfg,
        lf_entries=lf_entries,
        encoder=encoder_cfg,
        model=model_cfg,
        train=train_cfg,
    )
