"""Named parameter storage, SGD with momentum, and checkpoint files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = 1
_META_KEY = "__meta__"
_PARAM_PREFIX = "param:"


class MissingGradientError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered collection of trainable tensors, each tagged with one group."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, value, group: str) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for name, group in self._groups.items():
            out.setdefault(group, []).append(name)
        return out

    def in_group(self, group: str) -> list[Tensor]:
        return [self._params[n] for n, g in self._groups.items() if g == group]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def fill_missing_grads(self) -> None:
        """Give parameters the loss did not reach an explicit zero gradient."""
        for p in self._params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            missing = set(self._params) - set(values)
            extra = set(values) - set(self._params)
            raise CheckpointError(f"parameter names differ (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, arr in values.items():
            p = self._params[name]
            if tuple(arr.shape) != p.shape:
                raise CheckpointError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.shape}")
        for name, arr in values.items():
            self._params[name].data = np.array(arr, dtype=np.float64, copy=True)


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sgd_step(
    params: ParamStore,
    lr: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """One momentum-SGD update ``v <- m*v + g; p <- p - lr*v``.

    Returns the velocity buffers to pass into the next call.  Gradients are
    cleared afterwards.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    velocity = {} if velocity is None else velocity
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient; call backward first")
    for name, p in params.items():
        v = velocity.get(name)
        v = p.grad.copy() if v is None else momentum * v + p.grad
        velocity[name] = v
        p.data = p.data - lr * v
        p.grad = None
    return velocity


class SGD:
    def __init__(self, params: ParamStore, lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.velocity = sgd_step(self.params, self.lr, self.momentum, self.velocity)


def save_checkpoint(path, params: ParamStore, meta: dict) -> None:
    """Write parameters and JSON metadata to an ``.npz`` container."""
    header = dict(meta)
    header["version"] = CHECKPOINT_VERSION
    header["groups"] = {name: params.group_of(name) for name in params}
    header["shapes"] = {name: list(p.shape) for name, p in params.items()}
    arrays = {_PARAM_PREFIX + name: p.data for name, p in params.items()}
    arrays[_META_KEY] = np.array(json.dumps(header, sort_keys=True))
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            if _META_KEY not in archive.files:
                raise CheckpointError(f"{path}: not a model checkpoint (no metadata)")
            meta = json.loads(str(archive[_META_KEY]))
            values = {k[len(_PARAM_PREFIX):]: archive[k] for k in archive.files if k.startswith(_PARAM_PREFIX)}
    except (OSError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    for name, shape in meta.get("shapes", {}).items():
        if name not in values or list(values[name].shape) != shape:
            raise CheckpointError(f"{path}: stored array {name!r} disagrees with its declared shape")
    return meta, values
