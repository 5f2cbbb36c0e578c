"""
Kernels diferenciables (forward + backward) sobre Tensor.

Convenciones:
- Todas las operaciones trabajan en float64 y sobre el último eje para
  normalizaciones y softmax.
- Las secuencias tienen forma (..., m, d); concat_rows une sobre el eje m.
- Las reducciones usan el orden fijo de numpy, así que dos ejecuciones con
  la misma semilla producen los mismos bits.
"""
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from autodiff.tensor import Tensor, make_node
from core.errors import ShapeError, VocabIndexError

ArrayLike = Union[Tensor, np.ndarray, float, int]

_GELU_C = math.sqrt(2.0 / math.pi)


def _as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Suma los ejes que numpy expandió por broadcasting hasta volver a `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("Formas no compatibles para broadcasting", a.shape, b.shape) from None


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"Eje {axis} inválido para tensor de {x.ndim} dimensiones", x.shape)
    return axis % x.ndim


def _log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


# --- aritmética elemental -------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return (unbroadcast(g, a.shape) if a.requires_grad else None,
                unbroadcast(g, b.shape) if b.requires_grad else None)

    return make_node(a.data + b.data, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return (unbroadcast(g, a.shape) if a.requires_grad else None,
                unbroadcast(-g, b.shape) if b.requires_grad else None)

    return make_node(a.data - b.data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return make_node(a.data * b.data, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return make_node(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return make_node(x.data * factor, (x,), lambda g: (g * factor,))


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    if axis is not None:
        axis = _check_axis(x, axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(x.data.sum(axis=axis), (x,), backward)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[_check_axis(x, axis)]
    return scale(sum(x, axis=axis), 1.0 / max(count, 1))


# --- álgebra lineal y forma -----------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Producto matricial con batch broadcasting sobre los ejes iniciales."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("Dimensiones internas incompatibles en matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("Ejes de batch incompatibles en matmul", a.shape, b.shape) from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_node(out, (a, b), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape imposible", x.shape, tuple(shape)) from None
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"Permutación {axes} inválida", x.shape)
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError("expand imposible", x.shape, shape) from None
    return make_node(out, (x,), lambda g: (unbroadcast(g, x.shape),))


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Concatena sobre el eje de secuencia: (..., p, d) + (..., n, d) -> (..., p+n, d)."""
    if a.ndim != b.ndim or a.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ShapeError("concat_rows requiere mismas dimensiones salvo el eje de filas", a.shape, b.shape)
    p = a.shape[-2]

    def backward(g):
        return (g[..., :p, :] if a.requires_grad else None,
                g[..., p:, :] if b.requires_grad else None)

    return make_node(np.concatenate([a.data, b.data], axis=-2), (a, b), backward)


def gather_rows(x: Tensor, positions: Sequence[int]) -> Tensor:
    """Selecciona una fila por elemento del batch: x (B, m, d), positions (B,) -> (B, d)."""
    positions = np.asarray(positions, dtype=np.int64)
    if x.ndim != 3 or positions.shape != (x.shape[0],):
        raise ShapeError("gather_rows requiere x (B, m, d) y una posición por fila", x.shape, positions.shape)
    if positions.size and (positions.min() < 0 or positions.max() >= x.shape[1]):
        raise VocabIndexError(f"Posición fuera de rango [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, positions] = g
        return (gx,)

    return make_node(x.data[rows, positions], (x,), backward)


def select_columns(w: Tensor, ids: Sequence[int]) -> Tensor:
    """Columnas `ids` de una matriz (d, V) -> (d, k)."""
    ids = np.asarray(ids, dtype=np.int64)
    if w.ndim != 2:
        raise ShapeError("select_columns requiere una matriz", w.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= w.shape[1]):
        raise VocabIndexError(f"Columna fuera de rango [0, {w.shape[1]})")

    def backward(g):
        gw = np.zeros_like(w.data)
        np.add.at(gw, (slice(None), ids), g)
        return (gw,)

    return make_node(w.data[:, ids], (w,), backward)


def embedding_lookup(weight: Tensor, ids) -> Tensor:
    """Filas de la tabla de embeddings (V, d) para ids de cualquier forma."""
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise ShapeError("La tabla de embeddings debe ser (V, d)", weight.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise VocabIndexError(f"Token id fuera de rango [0, {weight.shape[0]})")

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return make_node(weight.data[ids], (weight,), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Sustituye por `value` donde mask es True; el gradiente se anula ahí."""
    mask = np.asarray(mask, dtype=bool)
    try:
        full = np.broadcast_to(mask, x.shape)
    except ValueError:
        raise ShapeError("Máscara no compatible", mask.shape, x.shape) from None
    return make_node(np.where(full, value, x.data), (x,), lambda g: (np.where(full, 0.0, g),))


# --- no linealidades y normalización ---------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU con aproximación tanh."""
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * du),)

    return make_node(0.5 * x.data * (1.0 + t), (x,), backward)


def layer_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normaliza sobre el último eje; gamma/beta opcionales (afín)."""
    d = x.shape[-1]
    for p in (gamma, beta):
        if p is not None and p.shape != (d,):
            raise ShapeError("Parámetros afines de layer_norm con forma incorrecta", p.shape, (d,))
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = tuple(p for p in (x, gamma, beta) if p is not None)

    def backward(g):
        dxhat = g * gamma.data if gamma is not None else g
        gx = None
        if x.requires_grad:
            gx = inv_std / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None)
        if beta is not None:
            grads.append(g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None)
        return tuple(grads)

    return make_node(out, parents, backward)


# --- pérdidas ---------------------------------------------------------------

def cross_entropy(logits: Tensor, targets) -> Tensor:
    """
    Entropía cruzada media: -log softmax(logits)[target].
    Args:
        logits: (C,) o (N, C)
        targets: índice entero o arreglo (N,)
    Returns:
        Tensor escalar
    """
    z = logits.data if logits.ndim == 2 else logits.data.reshape(1, -1)
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, c = z.shape
    if t.shape != (n,):
        raise ShapeError("Un target por fila de logits", t.shape, (n,))
    if t.size and (t.min() < 0 or t.max() >= c):
        raise VocabIndexError(f"Target fuera de rango [0, {c})")
    rows = np.arange(n)
    logp = _log_softmax(z)
    loss = -logp[rows, t].mean() if n else 0.0

    def backward(g):
        d = np.exp(logp)
        d[rows, t] -= 1.0
        return ((d * (g / max(n, 1))).reshape(logits.shape),)

    return make_node(np.asarray(loss), (logits,), backward)


def kl_divergence(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """
    KL(softmax(p) || softmax(q)) media sobre filas.
    El lado q es una referencia constante: el gradiente solo fluye a p_logits.
    """
    if p_logits.shape != q_logits.shape:
        raise ShapeError("kl_divergence requiere formas iguales", p_logits.shape, q_logits.shape)
    zp = p_logits.data if p_logits.ndim == 2 else p_logits.data.reshape(1, -1)
    zq = q_logits.data if q_logits.ndim == 2 else q_logits.data.reshape(1, -1)
    n = zp.shape[0]
    logp = _log_softmax(zp)
    diff = logp - _log_softmax(zq)
    p = np.exp(logp)
    rows_kl = (p * diff).sum(axis=-1)
    value = rows_kl.mean() if n else 0.0

    def backward(g):
        gp = p * (diff - rows_kl[:, None]) * (g / max(n, 1))
        return (gp.reshape(p_logits.shape),)

    return make_node(np.asarray(value), (p_logits,), backward)
