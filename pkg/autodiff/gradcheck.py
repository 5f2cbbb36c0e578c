"""
Verificación de gradientes por diferencias finitas centrales.
"""
from typing import Callable, List, Sequence

import numpy as np

from autodiff.tensor import Tensor, current_tape, no_grad


def _scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    # proyección fija: cubre todas las salidas con un único escalar
    if out.size == 1:
        return out.sum()
    return (out * Tensor(weights)).sum()


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int,
                       weights: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = inputs[index]
    x.data = np.ascontiguousarray(x.data)
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = _scalarize(fn(*inputs), weights).item()
            flat[i] = original - eps
            minus = _scalarize(fn(*inputs), weights).item()
            flat[i] = original
            grad.reshape(-1)[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                    seed: int = 0) -> List[float]:
    """
    Compara el gradiente analítico con diferencias finitas para cada entrada
    con requires_grad. Devuelve el error relativo por entrada (0.0 si la
    entrada no requiere gradiente).
    """
    current_tape().clear()
    for x in inputs:
        x.zero_grad()
    out = fn(*inputs)
    weights = np.random.default_rng(seed).normal(size=out.shape)
    _scalarize(out, weights).backward()
    errors = []
    for i, x in enumerate(inputs):
        if not x.requires_grad:
            errors.append(0.0)
            continue
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        errors.append(relative_error(analytic, numerical_gradient(fn, inputs, i, weights, eps)))
    return errors
