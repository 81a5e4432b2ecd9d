"""Plain-text experiment configs.

One ``section.key = value`` per line; ``#`` starts a comment.  Sections:

    gen.*    GenConfig fields (synthetic data)
    model.*  trunk_widths, gate_tap, view_branch_widths, expert_widths, gated, init_seed
    train.*  TrainConfig fields
    split.*  ratios, seed
    eval.*   threshold

Sequences are comma separated (``model.trunk_widths = 64,64``); ``none``
means unset.  Unknown keys are rejected.  ``dump`` writes every key, so a
resolved file fully describes a run.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace

from .model import ModelConfig
from .synthdata import GenConfig
from .training import TrainConfig


class ConfigFileError(ValueError):
    """Bad key or value; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ModelSection:
    trunk_widths: tuple[int, ...] = (64, 64)
    gate_tap: int = 1
    view_branch_widths: tuple[int, ...] = (16,)
    expert_widths: tuple[int, ...] = (32,)
    gated: bool = True
    init_seed: int = 0

    def build(self, input_dim: int, attribute_count: int, view_count: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim,
            attribute_count=attribute_count,
            trunk_widths=self.trunk_widths,
            gate_tap=self.gate_tap,
            view_count=view_count,
            view_branch_widths=self.view_branch_widths,
            expert_widths=self.expert_widths,
            gated=self.gated,
        )


@dataclass(frozen=True)
class SplitSection:
    ratios: tuple[float, ...] = (0.7, 0.1, 0.2)
    seed: int = 0


@dataclass(frozen=True)
class EvalSection:
    threshold: float = 0.5


@dataclass
class ExperimentConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSection = field(default_factory=SplitSection)
    eval: EvalSection = field(default_factory=EvalSection)

    SECTIONS = ("gen", "model", "train", "split", "eval")


def _hints(cls) -> dict:
    import sys

    return typing.get_type_hints(cls, vars(sys.modules[cls.__module__]))


def _parse_scalar(tp, text: str):
    if tp is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    if tp is str:
        return text
    raise TypeError(f"unsupported field type {tp}")


def parse_value(tp, text: str):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        if text.lower() == "none":
            return None
        return parse_value(inner[0], text)
    if origin is tuple:
        items = [t for t in text.split(",") if t.strip()]
        return tuple(_parse_scalar(args[0], t.strip()) for t in items)
    return _parse_scalar(tp, text)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply(config: ExperimentConfig, items) -> ExperimentConfig:
    """Apply ``(key, text)`` pairs; each section is rebuilt once, then validated."""
    pending: dict[str, dict] = {}
    keys: dict[str, str] = {}
    for key, text in items:
        section, _, name = key.partition(".")
        if section not in ExperimentConfig.SECTIONS or not name:
            raise ConfigFileError(key, "unknown section (expected gen., model., train., split. or eval.)")
        current = getattr(config, section)
        if name not in {f.name for f in fields(current)}:
            raise ConfigFileError(key, "unknown key")
        try:
            value = parse_value(_hints(type(current))[name], text)
        except (ValueError, TypeError) as exc:
            raise ConfigFileError(key, str(exc)) from None
        pending.setdefault(section, {})[name] = value
        keys[section] = key
    for section, changes in pending.items():
        try:
            updated = replace(getattr(config, section), **changes)
        except ValueError as exc:
            raise ConfigFileError(_blame(section, changes, str(exc)), str(exc)) from None
        _validate_section(section, updated, keys[section])
        config = replace(config, **{section: updated})
    return config


def _blame(section: str, changes: dict, message: str) -> str:
    for name in changes:
        if name in message:
            return f"{section}.{name}"
    return f"{section}.{next(iter(changes))}"


def _validate_section(section: str, value, key: str) -> None:
    if section == "split":
        r = value.ratios
        if len(r) < 2 or any(x <= 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigFileError(key, f"split ratios {list(r)} must be positive and sum to 1")
    if section == "eval" and not 0 < value.threshold < 1:
        raise ConfigFileError(key, "threshold must lie in (0, 1)")


def parse(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        items.append((key.strip(), value))
    return apply(base or ExperimentConfig(), items)


def load(path, overrides=()) -> ExperimentConfig:
    from pathlib import Path

    config = parse(Path(path).read_text()) if path else ExperimentConfig()
    items = []
    for item in overrides:
        if "=" not in item:
            raise ConfigFileError(item, "override must be key=value")
        key, _, value = item.partition("=")
        items.append((key.strip(), value))
    return apply(config, items)


def dump(config: ExperimentConfig) -> str:
    lines = []
    for section in ExperimentConfig.SECTIONS:
        obj = getattr(config, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"

