"""Run configuration: a JSON document with ``task``, ``reference``, ``train`` and ``output`` sections.

Schema (every key optional; omitted keys take the defaults shown by
``capo train --print-config``)::

    {
      "task":      {"n_questions": 64, "answer_len": 3, "vocab": 10, "hard_fraction": 0.25,
                    "seed": 0, "reasoning_len": 3, "cluster_size": 8},
      "reference": {"bias_strength": 1.0, "smoothing": 1.0},
      "train":     {"algo": "capo", "group_size": 8, ...,
                    "mask": {"enabled": true, "thresholds": "quartile",
                             "ref_high": 2.5, "ref_low": 1.05}},
      "output":    {"dir": "runs/default", "formats": ["csv", "json"]}
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

from capo.advantage import MaskConfig
from capo.toyenv import TaskSpec
from capo.trainer import TrainConfig

__all__ = ["ConfigError", "ReferenceConfig", "RunConfig", "FORMATS", "load_config", "apply_override", "apply_overrides"]

FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ReferenceConfig:
    bias_strength: float = 1.0
    smoothing: float = 1.0

    def __post_init__(self):
        if self.bias_strength < 0:
            raise ValueError("bias_strength must be non-negative")
        if not self.smoothing > 0:
            raise ValueError("smoothing must be positive")


# train-section keys that live in the nested "mask" object
_MASK_KEYS = {"enabled": "mask_enabled", "thresholds": "mask_thresholds"}


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"
    formats: tuple[str, ...] = FORMATS

    def to_dict(self) -> dict:
        train = {k: v for k, v in asdict(self.train).items() if k not in ("mask", *_MASK_KEYS.values())}
        train["mask"] = {
            "enabled": self.train.mask_enabled,
            "thresholds": self.train.mask_thresholds,
            "ref_high": self.train.mask.ref_high,
            "ref_low": self.train.mask.ref_low,
        }
        return {
            "task": asdict(self.task),
            "reference": asdict(self.reference),
            "train": train,
            "output": {"dir": self.output_dir, "formats": list(self.formats)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _expect_keys("", d, {"task", "reference", "train", "output"})
        task = _build("task", TaskSpec, d.get("task", {}))
        reference = _build("reference", ReferenceConfig, d.get("reference", {}))
        t = d.get("train", {})
        if not isinstance(t, dict):
            raise ConfigError("train", "expected an object")
        t = dict(t)
        mask_in = t.pop("mask", {})
        if not isinstance(mask_in, dict):
            raise ConfigError("train.mask", "expected an object")
        _expect_keys("train.mask", mask_in, {"enabled", "thresholds", "ref_high", "ref_low"})
        for short, long in _MASK_KEYS.items():
            if short in mask_in:
                t[long] = mask_in[short]
        mask = _build("train.mask", MaskConfig, {k: mask_in[k] for k in ("ref_high", "ref_low") if k in mask_in})
        train = _build("train", TrainConfig, t, skip={"mask"})
        train = replace(train, mask=mask)
        out = d.get("output", {})
        if not isinstance(out, dict):
            raise ConfigError("output", "expected an object")
        _expect_keys("output", out, {"dir", "formats"})
        out_dir = out.get("dir", cls.output_dir)
        if not isinstance(out_dir, str):
            raise ConfigError("output.dir", "expected a string")
        formats = out.get("formats", list(FORMATS))
        if not isinstance(formats, list) or any(f not in FORMATS for f in formats):
            raise ConfigError("output.formats", f"expected a list drawn from {list(FORMATS)}")
        return cls(task, reference, train, out_dir, tuple(formats))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("", f"not valid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ConfigError("", "top level must be an object")
        return cls.from_dict(d)


def _expect_keys(path: str, d: Any, allowed: set[str]) -> None:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown field")


def _coerce(path: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(path: str, cls, d: dict, skip: set[str] = frozenset()):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    defaults = cls()
    names = {f.name for f in fields(cls)} - set(skip)
    kw = {}
    for k, v in d.items():
        if k not in names:
            raise ConfigError(f"{path}.{k}", "unknown field")
        kw[k] = _coerce(f"{path}.{k}", v, getattr(defaults, k))
    try:
        return cls(**kw)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError("", f"config file not found: {p}")
    return RunConfig.loads(p.read_text())


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set(d: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    if parts == ["seed"]:
        d["task"]["seed"] = value
        d["train"]["seed"] = value
        return
    if parts[0] not in d:
        if parts[0] in d["train"]:
            parts = ["train"] + parts
        elif parts[0] in d["task"]:
            parts = ["task"] + parts
        else:
            raise ConfigError(key, "unknown field")
    node = d
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(key, "unknown field")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(".".join(parts), "unknown field")
    node[parts[-1]] = value


def apply_overrides(cfg: RunConfig, pairs: Iterable[tuple[str, str]]) -> RunConfig:
    """Set dotted fields, e.g. ``train.learning_rate=1.0`` or ``mask.enabled=false``.

    Keys without a section prefix are looked up in ``train`` (``mask.*``
    included) and then ``task``. ``seed`` sets both the task and training seed.
    The result is validated once, after every override is in place.
    """
    d = cfg.to_dict()
    for key, text in pairs:
        _set(d, key, _parse_value(text))
    return RunConfig.from_dict(d)


def apply_override(cfg: RunConfig, key: str, text: str) -> RunConfig:
    return apply_overrides(cfg, [(key, text)])
