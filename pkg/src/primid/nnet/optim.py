"""SGD with classical momentum and coupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .layers import Param


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray | None,
             lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """One update: v <- momentum*v + grad + wd*param; param <- param - lr*v.

    Pure functional form; returns (new_param, new_velocity).
    """
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    if velocity is None:
        velocity = np.zeros_like(param)
    velocity = momentum * velocity + grad + weight_decay * param
    return param - lr * velocity, velocity


class SGD:
    """Stateful optimizer over a list of Params (in-place updates)."""

    def __init__(self, params: list[Param], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
