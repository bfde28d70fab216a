"""Parameter storage, AdamW with decoupled weight decay, and a
finite-difference gradient checker."""

from __future__ import annotations

import logging
from typing import Callable, Iterable

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)


class ParamStore:
    """Named learnable tensors plus AdamW moment state.

    Iteration order is always lexicographic by name, so update order (and
    therefore the whole parameter trajectory) is reproducible.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._params[n]) for n in self.names()]

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in self.names()]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def moment_arrays(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]


def adamw_step(store: ParamStore, lr: float, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, eps_opt: float = 1e-8,
               active: Iterable[str] | None = None) -> None:
    """One AdamW update over the store's parameters.

    Weight decay is decoupled (applied directly to the weights, not through
    the moments).  Parameters outside `active` are left untouched; an active
    parameter without a gradient is skipped with a warning.  Gradients are
    cleared afterwards.
    """
    names = store.names() if active is None else sorted(set(active))
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in names:
        param = store._params[name]
        g = param.grad
        if g is None:
            log.warning("adamw_step: no gradient for %r; skipping", name)
            continue
        if g.shape != param.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {param.data.shape} for {name}")
        if weight_decay != 0.0:
            param.data -= lr * weight_decay * param.data
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        param.data -= lr * mhat / (np.sqrt(vhat) + eps_opt)
    store.zero_grad()


def grad_check(fn: Callable[[ParamStore], Tensor], store: ParamStore,
               eps_fd: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    `fn` must be deterministic (dropout off) and is expected to run at
    64-bit precision.  Relative error per coordinate is
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    store.zero_grad()
    loss = fn(store)
    backward(loss, leaves=store.tensors())
    analytic = {name: np.array(t.grad, copy=True) for name, t in store.items()}

    worst = 0.0
    with no_grad():
        for name, t in store.items():
            flat = t.data.reshape(-1)
            g_ad = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps_fd
                f_plus = float(fn(store).data)
                flat[i] = orig - eps_fd
                f_minus = float(fn(store).data)
                flat[i] = orig
                g_fd = (f_plus - f_minus) / (2.0 * eps_fd)
                rel = abs(g_ad[i] - g_fd) / max(1e-8, abs(g_ad[i]) + abs(g_fd))
                if rel > worst:
                    worst = rel
    store.zero_grad()
    return worst
