import numpy as np


def accuracy(predictions, labels):
    predictions = np.asarray(predictions, dtype=object)
    labels = np.asarray(labels, dtype=object)
    if predictions.shape != labels.shape:
        raise ValueError(f"predictions y labels difieren en largo: {predictions.shape} vs {labels.shape}")
    if labels.size == 0:
        raise ValueError("accuracy sobre una entrada vacía")
    return 100.0 * float(np.mean(predictions == labels))
