"""One config file for every knob: windows, thresholds, training and model hyperparameters.

JSON or YAML. Unknown keys are rejected so typos surface as config errors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .neural.model import DEFAULT_HYPERPARAMS


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # data
    window: int = 500  # earliest N transfer logs per token
    short_term_window: int = 3600  # seconds
    # lifter
    max_contexts: int = 12
    max_states: int = 50_000
    # decision
    threshold: float = 0.5
    # training
    seed: int = 0
    folds: int = 5
    epochs: int = 200
    patience: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.0
    # model hyperparameters, merged over the defaults
    model: dict = field(default_factory=dict)
    # online access
    rpc_url: str = "http://localhost:8545"
    explorer_url: str = "https://api.etherscan.io/api"
    cache_dir: str = ".rugsense-cache"
    offline: bool = False
    rate_interval: float = 0.2  # seconds between requests to one host
    workers: int = 1

    def hyperparams(self, variant: str | None = None) -> dict:
        hp = dict(DEFAULT_HYPERPARAMS)
        hp.update(self.model)
        if variant is not None:
            hp["variant"] = variant
        return hp

    def to_json(self) -> dict:
        return asdict(self)

    def validate(self) -> "Config":
        problems = []
        for name, lo in (("window", 1), ("short_term_window", 1), ("max_contexts", 1), ("max_states", 1),
                         ("folds", 2), ("epochs", 0), ("patience", 1), ("batch_size", 1), ("workers", 1)):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                problems.append(f"{name}: must be an integer >= {lo}")
        if not 0.0 <= float(self.threshold) <= 1.0:
            problems.append("threshold: must lie in [0, 1]")
        if not float(self.lr) > 0:
            problems.append("lr: must be positive")
        unknown = sorted(set(self.model) - set(DEFAULT_HYPERPARAMS))
        if unknown:
            problems.append(f"model: unknown keys {unknown}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self


def from_dict(doc: dict) -> Config:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(Config)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    try:
        return Config(**doc).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config().validate()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    try:
        doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from None
    return from_dict(doc or {})
