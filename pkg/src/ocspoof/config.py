"""``[section]`` / ``key = value`` run configuration."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .lfcc import LfccConfig
from .metrics import TdcfCosts
from .network import NetConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    train_protocol: str | None = None
    dev_protocol: str | None = None
    eval_protocol: str | None = None
    audio_dir: str | None = None
    feature_dir: str | None = None
    audio_ext: str = ".wav"
    sample_rate: int = 16000
    workers: int = 1

    def validate_paths(self):
        for name in ("train_protocol", "dev_protocol", "eval_protocol"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"[data] {name}: no such file {value!r}")
        if self.audio_dir is not None and not Path(self.audio_dir).is_dir():
            raise ConfigError(f"[data] audio_dir: no such directory {self.audio_dir!r}")
        if self.workers < 1:
            raise ConfigError("[data] workers must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    pca_fit: str = "all"  # or "bonafide"
    costs: TdcfCosts = field(default_factory=TdcfCosts)


_SECTIONS = {
    "data": DataConfig,
    "lfcc": LfccConfig,
    "model": NetConfig,
    "train": TrainConfig,
    "eval": None,  # EvalConfig: pca_fit plus the TdcfCosts fields, flattened
}


def _convert(raw: str, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if raw.strip().lower() in ("none", ""):
            return None
        non_none = [a for a in args if a is not type(None)]
        return _convert(raw, non_none[0], where)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw.strip()
        if origin is tuple:
            return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{where}: unsupported type {tp}")


def _build(cls, section: str, values: dict[str, str], skip=()):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    kwargs = {k: _convert(v, hints[k], f"[{section}] {k}") for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    lfcc: LfccConfig = field(default_factory=LfccConfig)
    model: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        unknown = sorted(set(parser.sections()) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown sections: {', '.join(unknown)}")
        sec = {name: dict(parser[name]) if parser.has_section(name) else {} for name in _SECTIONS}
        data = _build(DataConfig, "data", sec["data"])
        lfcc = _build(LfccConfig, "lfcc", sec["lfcc"])
        if "n_features" in sec["model"]:
            raise ConfigError("[model] n_features is derived from [lfcc]; remove it")
        model = _build(NetConfig, "model", sec["model"], skip=("n_features",))
        model = dataclasses.replace(model, n_features=lfcc.n_dims)
        train = _build(TrainConfig, "train", sec["train"])
        ev = dict(sec["eval"])
        pca_fit = ev.pop("pca_fit", "all").strip()
        if pca_fit not in ("all", "bonafide"):
            raise ConfigError("[eval] pca_fit must be 'all' or 'bonafide'")
        costs = _build(TdcfCosts, "eval", ev)
        return cls(data, lfcc, model, train, EvalConfig(pca_fit, costs))

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]
