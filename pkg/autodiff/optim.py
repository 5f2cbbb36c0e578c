"""
Optimizadores sobre listas de Tensor hoja.
Solo tocan parámetros con requires_grad=True y gradiente presente.
"""
from typing import Dict, List, Sequence

import numpy as np

from autodiff.tensor import Tensor


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Recorta la norma L2 global de los gradientes; devuelve la norma previa."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads]))) if grads else 0.0
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


class Optimizer:
    def __init__(self, params: Sequence[Tensor], lr: float):
        if lr <= 0:
            raise ValueError(f"lr debe ser > 0 (recibido {lr})")
        self.params: List[Tensor] = [p for p in params if p.requires_grad]
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.velocity: Dict[int, np.ndarray] = {}

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if self.momentum:
                v = self.velocity.get(i)
                v = p.grad.copy() if v is None else self.momentum * v + p.grad
                self.velocity[i] = v
                update = v
            else:
                update = p.grad
            p.data -= self.lr * update


class Adam(Optimizer):
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[int, np.ndarray] = {}
        self.v: Dict[int, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            m = self.m.get(i, np.zeros_like(p.data))
            v = self.v.get(i, np.zeros_like(p.data))
            m = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v = self.beta2 * v + (1.0 - self.beta2) * p.grad * p.grad
            self.m[i], self.v[i] = m, v
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def build_optimizer(name: str, params: Sequence[Tensor], lr: float, momentum: float = 0.0) -> Optimizer:
    name = name.lower()
    if name == 'adam':
        return Adam(params, lr)
    if name == 'sgd':
        return SGD(params, lr, momentum=momentum)
    raise ValueError(f"Optimizador desconocido: {name} (use adam o sgd)")
