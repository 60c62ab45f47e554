"""Run configuration as flat ``section.key = value`` text.

Every field of the nested dataclasses maps to one dotted key, e.g.::

    # comments start with '#'
    model.backbone.channels = 8, 16, 32, 64
    model.use_attention = true
    anchors.n_bottom = 128
    matching.tau_p = 15
    train.lr = 0.001

Tuples are comma-separated, booleans ``true``/``false``. Unknown keys are
rejected with their dotted path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .anchors import AnchorConfig, generate_anchors
from .data import SyntheticConfig
from .errors import ConfigError
from .loss import LossConfig
from .model import ModelConfig
from .train import MatchingConfig, TrainConfig


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.model.validate("model")
        self.anchors.validate(self.model.n_pts, "anchors")
        self.loss.validate("loss")
        self.matching.validate("matching")
        self.data.validate("data")
        self.train.validate("train")
        if tuple(self.data.image_size) != tuple(self.model.backbone.input_size):
            raise ConfigError("data.image_size", "must equal model.backbone.input_size")
        if self.data.n_pts != self.model.n_pts:
            raise ConfigError("data.n_pts", "must equal model.n_pts")
        bb = self.model.backbone
        n_full = len(generate_anchors(self.anchors, bb.input_size, self.model.n_pts, bb.stride))
        if self.train.n_anchors > n_full:
            raise ConfigError(
                "train.n_anchors", f"{self.train.n_anchors} exceeds the {n_full} generated anchors"
            )
        return self


def _flatten(obj, prefix=""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from _flatten(value, key + ".")
        else:
            yield key, value


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(key, text, like):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return low in ("true", "1", "yes")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            parts = [p for p in (s.strip() for s in text.split(",")) if p]
            elem = like[0] if like else 0.0
            return tuple(_parse(key, p, elem) for p in parts)
        return text
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from exc


def to_text(cfg: RunConfig):
    return "\n".join(f"{k} = {_format(v)}" for k, v in _flatten(cfg)) + "\n"


def apply_overrides(cfg: RunConfig, items):
    """Set dotted keys from ``[(key, text), ...]``; returns ``cfg``."""
    for key, text in items:
        *path, leaf = key.split(".")
        target = cfg
        for part in path:
            if not hasattr(target, part) or not dataclasses.is_dataclass(getattr(target, part)):
                raise ConfigError(key, "unknown configuration section")
            target = getattr(target, part)
        if leaf not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(key, "unknown configuration key")
        setattr(target, leaf, _parse(key, text, getattr(target, leaf)))
    return cfg


def parse_text(text, cfg=None):
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"<line {lineno}>", "expected 'key = value'")
        key, value = line.split("=", 1)
        items.append((key.strip(), value))
    return apply_overrides(cfg or RunConfig(), items)


def load(path, cfg=None):
    with open(path, encoding="utf-8") as f:
        return parse_text(f.read(), cfg)
