from metrics.accuracy import accuracy
from metrics.weighted_f1 import per_class_f1, weighted_f1

__all__ = ['accuracy', 'per_class_f1', 'weighted_f1']
