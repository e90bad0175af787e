"""Named parameter storage, seeded initialisation and JSON checkpoints."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered mapping of parameter name -> Tensor plus the hyperparameters that shaped them."""

    def __init__(self, hyperparams: dict | None = None) -> None:
        self.hyperparams: dict = dict(hyperparams or {})
        self._params: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def uniform(self, name: str, shape: tuple[int, ...], rng: np.random.Generator, fan_in: int | None = None) -> Tensor:
        fan = fan_in if fan_in is not None else (shape[0] if len(shape) > 1 else max(shape[0], 1))
        bound = 1.0 / np.sqrt(fan)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients by name; parameters untouched by the last backward pass get zeros."""
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in self._params.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore(json.loads(json.dumps(self.hyperparams)))
        for n, p in self._params.items():
            out.add(n, p.data.copy())
        return out

    def load_state(self, other: "ParamStore") -> None:
        for n, p in other.items():
            self._params[n].data = p.data.copy()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    # -- serialisation -----------------------------------------------------
    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "hyperparams": self.hyperparams,
            "params": {
                n: {"shape": list(p.shape), "data": [float(x) for x in p.data.reshape(-1)]}
                for n, p in self._params.items()
            },
        }

    def dumps(self) -> str:
        # repr-based float formatting round-trips float64 exactly
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_json(cls, doc: dict) -> "ParamStore":
        if not isinstance(doc, dict) or "format_version" not in doc:
            raise CheckpointError("not a checkpoint document")
        if doc["format_version"] != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {doc['format_version']!r}")
        store = cls(doc.get("hyperparams", {}))
        for n, spec in doc["params"].items():
            shape = tuple(spec["shape"])
            data = np.asarray(spec["data"], dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise CheckpointError(f"parameter {n!r}: data length does not match shape {shape}")
            store.add(n, data.reshape(shape))
        return store

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
        return cls.from_json(doc)


class Adam:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, params: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for n, p in self.params.items():
            g = grads[n]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)
