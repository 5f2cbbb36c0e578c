import numpy as np


def per_class_f1(predictions, labels, classes):
    """F1 por clase; 0 cuando precisión + recall = 0."""
    predictions = np.asarray(predictions, dtype=object)
    labels = np.asarray(labels, dtype=object)
    scores = {}
    for c in classes:
        tp = float(np.sum((predictions == c) & (labels == c)))
        fp = float(np.sum((predictions == c) & (labels != c)))
        fn = float(np.sum((predictions != c) & (labels == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores[c] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return scores


def weighted_f1(predictions, labels, classes):
    # una predicción fuera de `classes` (p. ej. una etiqueta genérica) solo cuenta como fallo
    predictions = np.asarray(predictions, dtype=object)
    labels = np.asarray(labels, dtype=object)
    if predictions.shape != labels.shape:
        raise ValueError(f"predictions y labels difieren en largo: {predictions.shape} vs {labels.shape}")
    if labels.size == 0:
        raise ValueError("weighted_f1 sobre una entrada vacía")
    unknown = set(labels.tolist()) - set(classes)
    if unknown:
        raise ValueError(f"Etiquetas fuera del conjunto de clases: {sorted(unknown)}")
    scores = per_class_f1(predictions, labels, classes)
    support = {c: float(np.sum(labels == c)) for c in classes}
    return 100.0 * sum(scores[c] * support[c] for c in classes) / labels.size
