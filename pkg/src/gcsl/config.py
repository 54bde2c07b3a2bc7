"""Flat ``key = value`` run configuration with dotted keys.

Example::

    # grid-rooms, horizon-conditioned table
    env.name = grid-rooms
    env.horizon = 30
    policy.smoothing = 0.1
    train.total_env_steps = 200000
    seed = 3

Values are parsed as booleans (``true``/``false``), ``none``, integers, floats,
bracketed lists (``[400, 300]``) or bare strings. Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .env import make_env
from .errors import ConfigError, ContractViolation
from .trainer import TrainConfig

ENV_KEYS = ("horizon", "step_scale", "door_width", "wall_thickness", "goal_threshold", "n_states", "size")

# config key -> TrainConfig field
TRAIN_KEYS = {
    "policy.kind": "policy_kind",
    "policy.hidden": "hidden",
    "policy.time_varying": "horizon_input",
    "policy.smoothing": "smoothing",
    "buffer.h_max": "h_max",
    "buffer.on_policy_window": "on_policy_window",
    "seed": "seed",
}
for _f in fields(TrainConfig):
    if _f.name not in TRAIN_KEYS.values():
        TRAIN_KEYS[f"train.{_f.name}"] = _f.name

KNOWN_KEYS = frozenset({"env.name", *(f"env.{k}" for k in ENV_KEYS), *TRAIN_KEYS})


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    if t.startswith("[") and t.endswith("]"):
        inner = t[1:-1].strip()
        return [parse_value(p) for p in inner.split(",")] if inner else []
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        values[key] = parse_value(value)
    return values


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    return parse_config_text(text, str(p))


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs: the environment recipe and the training configuration."""

    env_name: str = "grid-rooms"
    env_params: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    @classmethod
    def from_mapping(cls, values: dict) -> RunConfig:
        unknown = sorted(set(values) - KNOWN_KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        env_name = values.get("env.name", "grid-rooms")
        env_params = {k[4:]: v for k, v in values.items() if k.startswith("env.") and k != "env.name"
                      and v is not None}
        kwargs = {TRAIN_KEYS[k]: v for k, v in values.items() if k in TRAIN_KEYS}
        if "ablation" in kwargs and isinstance(kwargs["ablation"], str):
            kwargs["ablation"] = kwargs["ablation"].replace("-", "_")
        try:
            train = TrainConfig(**kwargs)
        except (ContractViolation, TypeError) as exc:
            raise ConfigError(f"invalid training configuration: {exc}") from None
        return cls(env_name, env_params, train)

    def with_overrides(self, values: dict) -> RunConfig:
        """Apply flat overrides on top of this configuration (``None`` values are ignored)."""
        merged = self.to_mapping()
        merged.update({k: v for k, v in values.items() if v is not None})
        return RunConfig.from_mapping(merged)

    def to_mapping(self) -> dict:
        out = {"env.name": self.env_name}
        out.update({f"env.{k}": v for k, v in self.env_params.items()})
        t = asdict(self.train)
        for key, name in TRAIN_KEYS.items():
            v = t[name]
            out[key] = list(v) if isinstance(v, tuple) else v
        return out

    def make_env(self):
        return make_env(self.env_name, **self.env_params)

    def replace_train(self, **changes) -> RunConfig:
        return replace(self, train=replace(self.train, **changes))
