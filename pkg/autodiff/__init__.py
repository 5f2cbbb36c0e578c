"""
Motor de diferenciación automática en modo reverso (numpy, float64).
"""
from autodiff.tensor import ComputationTape, Tensor, current_tape, is_grad_enabled, no_grad
from autodiff import functional

__all__ = ['ComputationTape', 'Tensor', 'current_tape', 'is_grad_enabled', 'no_grad', 'functional']
