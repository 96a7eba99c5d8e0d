"""Run configuration: a flat ``key = value`` text file.

Grammar: one assignment per line, ``#`` starts a comment, blank lines are
ignored, keys are case-sensitive and unknown keys are an error.  Keys under
``data.`` describe the synthetic generator.  Example::

    seed = 3
    merge = attm          # attm | linm | none
    head = recurrent      # recurrent | pooling
    layer_cap = 6
    strategy = fine-tuned # fine-tuned | fixed
    data.band = 1-2
    train_data = runs/train
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import SyntheticSpec
from .model import ModelConfig
from .trainer import STRATEGIES, Schedule


class ConfigError(ValueError):
    pass


def _parse_band(text: str) -> tuple[int, int]:
    for sep in ("-", ","):
        if sep in text:
            a, b = text.split(sep, 1)
            return int(a), int(b)
    n = int(text)
    return n, n


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    seed: int = 0
    # encoder / model
    num_layers: int = 6
    hidden_dim: int = 16
    num_heads: int = 2
    ffn_dim: int = 32
    merge: str = "attm"
    head: str = "recurrent"
    layer_cap: int = 6
    recurrent_hidden: int = 16
    pool_dim: int = 16
    readout: str = "final"
    # schedule / training
    strategy: str = "fine-tuned"
    warmup_epochs: int = 5
    decay_rate: float = 0.9
    unfreeze_epoch: int = 11
    peak_lr: float = 1e-4
    total_epochs: int = 20
    batch_size: int = 16
    weight_decay: float = 0.0
    # synthetic data
    data_num_utts: int = 200
    data_t_min: int = 16
    data_t_max: int = 16
    data_band: tuple[int, int] = (1, 2)
    data_effect_size: float = 5.0
    data_noise_std: float = 1.0
    data_split: str = "train"
    # paths
    train_data: str | None = None
    dev_data: str | None = None
    eval_data: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 1 <= self.layer_cap <= self.num_layers:
            raise ConfigError(f"layer_cap K={self.layer_cap} must lie in [1, num_layers={self.num_layers}]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        try:
            self.model_config()
            self.schedule()
            self.synthetic_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def check_paths(self, *names: str) -> None:
        """Every named path key that is set must exist on disk."""
        for name in names:
            value = getattr(self, name)
            for p in value if isinstance(value, list) else [value]:
                if p is not None and not Path(p).exists():
                    raise ConfigError(f"{name}: path {p} does not exist")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_layers=self.num_layers,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            layer_cap=self.layer_cap,
            merge=self.merge,
            head=self.head,
            recurrent_hidden=self.recurrent_hidden,
            pool_dim=self.pool_dim,
            readout=self.readout,
            seed=self.seed,
        )

    def schedule(self) -> Schedule:
        return Schedule(
            warmup_epochs=self.warmup_epochs,
            decay_rate=self.decay_rate,
            unfreeze_epoch=self.unfreeze_epoch,
            peak_lr=self.peak_lr,
            total_epochs=self.total_epochs,
        )

    def synthetic_spec(self, split: str | None = None) -> SyntheticSpec:
        return SyntheticSpec(
            num_utts=self.data_num_utts,
            t_min=self.data_t_min,
            t_max=self.data_t_max,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            band=tuple(self.data_band),
            effect_size=self.data_effect_size,
            noise_std=self.data_noise_std,
            seed=self.seed,
            split=self.data_split if split is None else split,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _key_to_field(key: str) -> str:
    name = key.replace(".", "_") if key.startswith("data.") else key
    if "." in name or name not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return name


def _convert(name: str, text: str):
    default = _FIELDS[name].default
    if name == "data_band":
        return _parse_band(text)
    if name == "eval_data":
        return [p.strip() for p in text.split(",") if p.strip()]
    if name in ("train_data", "dev_data"):
        return text or None
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            name = _key_to_field(key)
            values[name] = _convert(name, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path: str | None = None, **overrides) -> RunConfig:
    """Read ``path`` (if given) and apply non-None ``overrides`` on top."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        values = parse_config(p.read_text(encoding="utf-8"), str(p))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
