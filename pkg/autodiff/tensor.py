"""
Tensor Module
Dense float64 tensors with reverse-mode automatic differentiation.

Cada operación diferenciable registra su nodo de salida en una cinta
dinámica (ComputationTape) por hilo. El orden de creación ya es un orden
topológico, así que el backward recorre la cinta al revés una sola vez y
después la limpia: la cinta nunca sobrevive a un paso de optimización.
"""
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ShapeError

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()


class ComputationTape:
    """Registro ordenado de nodos con regla de backward."""

    def __init__(self):
        self.nodes: List["Tensor"] = []

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.grad = None
            node._parents = ()
            node._backward_fn = None
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: "Tensor", grad: Optional[np.ndarray] = None) -> None:
        """
        Propaga gradientes desde `root` hacia todas las hojas con requires_grad.
        Args:
            root: tensor de salida (normalmente un escalar de pérdida)
            grad: gradiente inicial; por defecto unos con la forma de root
        """
        if not root.requires_grad:
            raise RuntimeError("backward() sobre un tensor que no requiere gradiente")
        seed = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if seed.shape != root.data.shape:
            raise ShapeError("Gradiente inicial con forma distinta", seed.shape, root.data.shape)
        if root._backward_fn is None:
            # hoja: no hay nada que propagar
            root._accumulate(seed)
            return
        root.grad = seed.copy()
        for node in reversed(self.nodes):
            if node.grad is None or node._backward_fn is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent._accumulate(g)
        self.clear()


def current_tape() -> ComputationTape:
    tape = getattr(_state, 'tape', None)
    if tape is None:
        tape = ComputationTape()
        _state.tape = tape
    return tape


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Desactiva el registro en la cinta (referencias constantes, evaluación)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """
    Arreglo float64 con gradiente opcional.
    Los tensores con requires_grad=False nunca acumulan gradiente.
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward_fn: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise ShapeError("Gradiente con forma distinta al tensor", g.shape, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        current_tape().backward(self, grad)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requiere un tensor de un solo elemento", self.shape)
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operadores: delegan en functional
    def __add__(self, other):
        from autodiff import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from autodiff import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from autodiff import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from autodiff import functional as F
        if isinstance(other, (int, float)):
            return F.scale(self, float(other))
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from autodiff import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from autodiff import functional as F
        return F.matmul(self, other)

    def sum(self, axis=None):
        from autodiff import functional as F
        return F.sum(self, axis=axis)

    def mean(self, axis=None):
        from autodiff import functional as F
        return F.mean(self, axis=axis)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Crea la salida de una operación y la registra si algún padre requiere gradiente."""
    requires = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        current_tape().record(out)
    return out
