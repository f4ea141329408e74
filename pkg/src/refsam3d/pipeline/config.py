"""Model/training configuration and its ``key = value`` text format."""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..encoder3d import EncoderConfig
from ..errors import ConfigError
from ..maskdec import DecoderConfig


@dataclass
class TextConfig:
    vocab: str = ""  # empty = bundled vocabulary
    c_e: int = 32
    c_v: int = 64
    max_len: int = 32
    depth: int = 2
    heads: int = 2
    pooling: str = "mean"


@dataclass
class PromptConfig:
    num_sparse: int = 4
    use_text: bool = True
    use_projector: bool = True
    stages: tuple[int, ...] = ()  # empty = all stages


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule: str = "linear"
    seed: int = 0
    checkpoint_every: int = 10
    dtype: str = "float32"
    augment: tuple[str, ...] = ("flip", "rotate90")
    patches_per_volume: int = 2


@dataclass
class DataConfig:
    n_train: int = 200
    n_val: int = 40
    classes: tuple[str, ...] = ("sphere", "cube")
    noise: float = 0.1
    seed: int = 1234


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    text: TextConfig = field(default_factory=TextConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    SECTIONS = ("encoder", "decoder", "text", "prompt", "train", "data")

    def violations(self) -> list[str]:
        out = self.encoder.violations() + self.decoder.violations()
        if self.text.c_v != self.encoder.embed_dim:
            out.append(
                f"text.c_v={self.text.c_v} must equal encoder.embed_dim={self.encoder.embed_dim}"
            )
        if self.text.pooling not in ("mean", "eos"):
            out.append(f"text.pooling={self.text.pooling!r} must be 'mean' or 'eos'")
        bad_stages = [s for s in self.prompt.stages if not 1 <= s <= self.encoder.num_stages]
        if bad_stages:
            out.append(f"prompt.stages {bad_stages} outside 1..{self.encoder.num_stages}")
        if self.train.schedule not in ("linear", "constant"):
            out.append(f"train.schedule={self.train.schedule!r} must be 'linear' or 'constant'")
        if self.train.dtype not in ("float32", "float64"):
            out.append(f"train.dtype={self.train.dtype!r} must be float32 or float64")
        for name in ("epochs", "batch_size", "checkpoint_every"):
            if getattr(self.train, name) < 1:
                out.append(f"train.{name} must be positive")
        if self.train.lr <= 0:
            out.append("train.lr must be positive")
        if len(self.data.classes) < 2:
            out.append("data.classes needs at least two shape classes")
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ConfigError("invalid config: " + "; ".join(bad))


# --------------------------------------------------------------------------- text format
def _parse_value(key: str, raw: str, typ):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if origin is tuple:
            args = typing.get_args(typ)
            items = [p.strip() for p in raw.split(",") if p.strip()]
            elem = args[0]
            values = tuple(_parse_value(key, p, elem) for p in items)
            if args[-1] is not Ellipsis and len(values) != len(args):
                raise ValueError(raw)
            return values
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {_type_name(typ)}") from None
    raise ConfigError(f"{key}: unsupported field type {typ}")


def _type_name(typ) -> str:
    if typing.get_origin(typ) is tuple:
        args = typing.get_args(typ)
        n = "N" if args[-1] is Ellipsis else str(len(args))
        return f"comma-separated list of {n} {args[0].__name__}"
    return typ.__name__


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> ModelConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = ModelConfig()
    unknown = [f"[{s}]" for s in parser.sections() if s not in ModelConfig.SECTIONS]
    for section in parser.sections():
        if section not in ModelConfig.SECTIONS:
            continue
        sub = getattr(cfg, section)
        hints = typing.get_type_hints(type(sub))
        names = {f.name for f in dataclasses.fields(sub)}
        for key, raw in parser.items(section):
            if key not in names:
                unknown.append(f"{section}.{key}")
                continue
            setattr(sub, key, _parse_value(f"{section}.{key}", raw, hints[key]))
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    return cfg


def parse_config(path: str | Path) -> ModelConfig:
    """Read a UTF-8 ``[section]`` / ``key = value`` file; missing keys keep their defaults."""
    return parse_config_text(Path(path).read_text("utf-8"))


def serialize_config(cfg: ModelConfig) -> str:
    buf = io.StringIO()
    for section in ModelConfig.SECTIONS:
        sub = getattr(cfg, section)
        buf.write(f"[{section}]\n")
        for f in dataclasses.fields(sub):
            buf.write(f"{f.name} = {_format_value(getattr(sub, f.name))}\n")
        buf.write("\n")
    return buf.getvalue()


def write_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")
