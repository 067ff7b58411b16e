"""Parameter stores, initialisation and the SGD optimiser."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from .tensor import Parameter


class ParamStore:
    """Ordered, uniquely named collection of parameters."""

    def __init__(self, seed: int = 0):
        self._params: dict[str, Parameter] = {}
        self.rng = np.random.default_rng(seed)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Parameter:
        bound = np.sqrt(1.0 / fan_in)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return self.add(name, np.ones(shape))

    def subset(self, prefix: str) -> list[Parameter]:
        return [p for n, p in self._params.items() if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def count(self, prefix: str = "") -> int:
        return int(sum(p.data.size for p in self.subset(prefix)))

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        unknown = set(state) - set(self._params)
        if missing or unknown:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unknown={sorted(unknown)}")
        for n, arr in state.items():
            p = self._params[n]
            if p.data.shape != arr.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {p.data.shape}")
            p.data = np.array(arr, dtype=np.float64, copy=True)


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay (decay folded into the gradient)."""

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf: dict[int, np.ndarray] = {}

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            d = p.grad
            if self.weight_decay:
                d = d + self.weight_decay * p.data
            if self.momentum:
                buf = self._buf.get(id(p))
                buf = d.copy() if buf is None else self.momentum * buf + d
                self._buf[id(p)] = buf
                d = buf
            p.data = p.data - self.lr * d

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0, state=None):
    """Functional form of one SGD update; returns the momentum state to pass back in."""
    opt = SGD(params, lr, momentum, weight_decay)
    if state is not None:
        opt._buf = state
    opt.step()
    return opt._buf
