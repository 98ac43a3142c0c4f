"""Run configuration as flat dotted keys (``loss.alpha = 1.0``).

File format: one ``key = value`` per line, ``#`` starts a comment. Values
are coerced to the type of the key's default. Unknown keys are rejected.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Iterable, Mapping

from .decode import BeamConfig
from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig

# key -> (default, description)
DEFAULTS: dict[str, tuple[Any, str]] = {
    "seed": (1, "global seed for data generation, init, dropout and batching"),
    "out": ("runs/default", "working/output directory shared by all subcommands"),
    "data.train_src": ("", "raw training source file; empty selects the synthetic Zipf task"),
    "data.train_tgt": ("", "raw training target file"),
    "data.valid_src": ("", "raw validation source file"),
    "data.valid_tgt": ("", "raw validation target file"),
    "data.test_src": ("", "raw test source file"),
    "data.test_tgt": ("", "raw test target file"),
    "synthetic.vocab_size": (200, "word types per side"),
    "synthetic.num_train": (5000, "training pairs"),
    "synthetic.num_valid": (500, "validation pairs"),
    "synthetic.num_test": (500, "test pairs"),
    "synthetic.exponent": (1.0, "Zipf exponent of the source distribution"),
    "synthetic.max_len": (10, "maximum sentence length in words"),
    "bpe.merges": (500, "number of BPE merge operations (joint vocabulary)"),
    "model.layers": (2, "encoder and decoder layers"),
    "model.d_model": (64, "embedding / model width"),
    "model.d_ffn": (128, "feed-forward inner width"),
    "model.heads": (2, "attention heads"),
    "model.max_len": (64, "maximum positions (tokens incl. bos/eos)"),
    "model.dropout": (0.1, "dropout probability during training"),
    "model.tie_embeddings": (True, "share embeddings with the output projection"),
    "loss.family": ("ce", "ce | ls-ce | fl | gfl"),
    "loss.gamma": (1.0, "focusing exponent for fl/gfl"),
    "loss.alpha": (1.0, "gfl alpha (>0 anti-focal, 0 CE, -1 focal)"),
    "loss.epsilon": (0.1, "label smoothing for ls-ce"),
    "optim.lr": (5e-4, "peak Adam learning rate"),
    "optim.warmup": (400, "linear warmup updates before inverse-sqrt decay"),
    "optim.warmup_init_lr": (1e-7, "learning rate at the start of warmup"),
    "optim.beta1": (0.9, "Adam beta1"),
    "optim.beta2": (0.98, "Adam beta2"),
    "train.updates": (3000, "optimizer updates"),
    "train.max_tokens": (512, "padded-token budget per batch"),
    "train.valid_every": (500, "validation/log interval in updates"),
    "beam.size": (5, "beam size for evaluation"),
    "beam.max_len": (32, "maximum generated tokens incl. eos"),
    "beam.lenpen": (1.0, "length normalization exponent"),
    "tau.value": (0.0, "tau-normalization strength applied before decoding (0 = off)"),
    "metrics.hist_bins": (50, "positional-score histogram bins over [0, 1]"),
    "metrics.kde_points": (101, "KDE evaluation grid size over [0, 1]"),
    "metrics.bucket_edges": ("1,2,3,4,5,10,100,1000,inf", "frequency bucket edges"),
    "metrics.splits": (3, "number of Frequency-Score splits of the validation set"),
    "metrics.fs_granularity": ("word", "token granularity for Frequency-Score: word | bpe"),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: Any) -> Any:
    default = DEFAULTS[key][0]
    if not isinstance(raw, str):
        raw_s = None
    else:
        raw_s = raw.strip()
        if len(raw_s) >= 2 and raw_s[0] == raw_s[-1] and raw_s[0] in "\"'":
            raw_s = raw_s[1:-1]
    try:
        if isinstance(default, bool):
            if raw_s is None:
                return bool(raw)
            if raw_s.lower() in ("true", "1", "yes", "on"):
                return True
            if raw_s.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw_s)
        if isinstance(default, int):
            return int(raw if raw_s is None else raw_s)
        if isinstance(default, float):
            return float(raw if raw_s is None else raw_s)
        return str(raw if raw_s is None else raw_s)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


class RunConfig:
    """Resolved flat configuration with typed views for each module."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self.values = {k: d for k, (d, _) in DEFAULTS.items()}
        if values:
            self.update(values)

    def update(self, values: Mapping[str, Any]) -> RunConfig:
        for k, v in values.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = _coerce(k, v)
        return self

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> RunConfig:
        return cls(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))

    def to_text(self) -> str:
        lines = []
        for k, (_, desc) in DEFAULTS.items():
            v = self.values[k]
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"# {desc}\n{k} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def diff(self, other: RunConfig) -> dict[str, tuple[Any, Any]]:
        return {k: (self.values[k], other.values[k]) for k in DEFAULTS if self.values[k] != other.values[k]}

    @property
    def synthetic(self) -> bool:
        return not self.values["data.train_src"]

    def model_config(self, vocab_size: int) -> ModelConfig:
        v = self.values
        return ModelConfig(vocab_size, v["model.layers"], v["model.d_model"], v["model.d_ffn"],
                           v["model.heads"], v["model.max_len"], v["model.dropout"], v["model.tie_embeddings"])

    def loss_config(self) -> LossConfig:
        v = self.values
        return LossConfig(v["loss.family"], v["loss.gamma"], v["loss.alpha"], v["loss.epsilon"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(v["train.updates"], v["optim.lr"], v["optim.warmup"], v["optim.warmup_init_lr"],
                           v["optim.beta1"], v["optim.beta2"], v["train.max_tokens"], v["train.valid_every"],
                           v["seed"])

    def beam_config(self) -> BeamConfig:
        v = self.values
        return BeamConfig(v["beam.size"], v["beam.max_len"], v["beam.lenpen"])

    def bucket_edges(self) -> list[float]:
        edges = []
        for part in self.values["metrics.bucket_edges"].split(","):
            part = part.strip()
            edges.append(math.inf if part.lower() in ("inf", "infinity") else float(part))
        return edges


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        out[key.strip()] = value.strip()
    return out
