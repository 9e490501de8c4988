"""Run configuration: INI-style ``key = value`` sections plus command-line overrides."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunSection:
    seed: int = 0
    precision: str = "f32"
    out_dir: str = "runs/default"
    checked: bool = False


@dataclass
class DataSection:
    vectors: str = ""
    vectors_dim: int = 0
    src_train: str = ""
    tgt_train: str = ""
    src_valid: str = ""
    tgt_valid: str = ""
    train_tsv: str = ""
    valid_tsv: str = ""
    max_len: int = 50


@dataclass
class MTSection:
    hidden: int = 300
    depth: int = 2
    tgt_dim: int = 300
    dropout: float = 0.2
    optimizer: str = "sgd_halving"
    lr: float = 1.0
    one_shot_halving: bool = False
    clip: float = 5.0
    batch_size: int = 32
    epochs: int = 20
    patience: int = 5
    bucketing: bool = True
    target_accuracy: float = 0.0


@dataclass
class BCNSection:
    f_dim: int = 300
    hidden: int = 300
    integ_hidden: int = 300
    f_depth: int = 1
    activation: str = "relu"
    channels: int = 4
    reductions: tuple = (2, 2)
    dropout: float = 0.2
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    patience: int = 5
    features: str = "cove"
    ablation: tuple = ()
    char_dim: int = 100
    char_buckets: int = 50_000


@dataclass
class CoveSection:
    checkpoint: str = ""


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    mt: MTSection = field(default_factory=MTSection)
    bcn: BCNSection = field(default_factory=BCNSection)
    cove: CoveSection = field(default_factory=CoveSection)

    def set(self, dotted: str, value: str) -> None:
        section, _, key = dotted.partition(".")
        if not key or not hasattr(self, section):
            raise KeyError(f"unknown config key {dotted!r}")
        sec = getattr(self, section)
        names = {f.name: f for f in dataclasses.fields(sec)}
        if key not in names:
            raise KeyError(f"unknown config key {dotted!r}")
        setattr(sec, key, _parse(value, names[key].default if names[key].default is not
                                 dataclasses.MISSING else ""))

    def to_ini(self) -> str:
        lines = []
        for sec_field in dataclasses.fields(self):
            lines.append(f"[{sec_field.name}]")
            for f in dataclasses.fields(getattr(self, sec_field.name)):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, sec_field.name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {k: {kk: (list(vv) if isinstance(vv, tuple) else vv) for kk, vv in v.items()}
                for k, v in dataclasses.asdict(self).items()}

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")


def _parse(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(int(p) if p.lstrip("-").isdigit() else p for p in parts)
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def load_config(path: str | Path | None = None, overrides: list[str] | tuple = ()) -> RunConfig:
    cfg = RunConfig()
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(f"{section}.{key}", value)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        cfg.set(key.strip(), value)
    return cfg
