"""
Clustering Module
K-means esférico (similitud coseno) para el protocolo de partición por
clusters: centros unitarios, asignación por coseno máximo y medias
renormalizadas.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from core.errors import ConfigError, ShapeError
from core.logger import get_logger
from core.seeding import substream

logger = get_logger(__name__)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


@dataclass
class ClusterModel:
    centers: np.ndarray
    n_iter: int = 0
    converged: bool = False
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.centers = normalize_rows(np.asarray(self.centers, dtype=np.float64))

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def similarities(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.centers.shape[1]:
            raise ShapeError("Embeddings incompatibles con los centros", x.shape, self.centers.shape)
        return normalize_rows(x) @ self.centers.T

    def assign(self, x: np.ndarray) -> np.ndarray:
        """Centro de mayor coseno; empates al índice menor."""
        return np.argmax(self.similarities(x), axis=1)

    def objective(self, x: np.ndarray) -> float:
        """Suma de cosenos de cada punto a su centro asignado."""
        return float(self.similarities(x).max(axis=1).sum())

    def to_dict(self):
        return {'centers': self.centers.tolist(), 'n_iter': self.n_iter, 'converged': self.converged}


def _update_centers(data: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> np.ndarray:
    new = centers.copy()
    for c in range(centers.shape[0]):
        members = data[labels == c]
        if len(members):
            mean = members.sum(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                new[c] = mean / norm
    return new


def _farthest_point_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Primer centro al azar; cada siguiente es el punto con menor coseno máximo a los ya elegidos."""
    chosen = [int(rng.integers(data.shape[0]))]
    best = data @ data[chosen[0]]
    for _ in range(1, k):
        best_masked = best.copy()
        best_masked[chosen] = np.inf
        idx = int(np.argmin(best_masked))
        chosen.append(idx)
        best = np.maximum(best, data @ data[idx])
    return data[chosen].copy()


def kmeans_cosine(embeddings: np.ndarray, k: int, seed: int = 0, max_iters: int = 100) -> ClusterModel:
    """
    K-means esférico.
    Args:
        embeddings: (N, d)
        k: número de clusters, 1 <= k <= N
        seed: semilla (sub-stream 'cluster')
        max_iters: iteraciones máximas de asignación
    Returns:
        ClusterModel con el historial del objetivo por iteración
    """
    data = normalize_rows(np.asarray(embeddings, dtype=np.float64))
    if data.ndim != 2:
        raise ShapeError("kmeans_cosine espera una matriz (N, d)", data.shape)
    n = data.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k debe estar en [1, {n}], se recibió {k}")

    rng = substream(seed, 'cluster')
    centers = _farthest_point_init(data, k, rng)
    labels = None
    history: List[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        sims = data @ centers.T
        new_labels = np.argmax(sims, axis=1)
        history.append(float(sims[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        centers = _update_centers(data, labels, centers)

        # clusters vacíos: se re-siembran con el punto más lejano a su centro
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            fit = (data * centers[labels]).sum(axis=1)
            farthest = np.argsort(fit, kind='stable')
            for c, idx in zip(empty, farthest):
                centers[c] = data[idx]
            logger.debug(f"[SPLIT] {empty.size} cluster(s) vacío(s) re-sembrado(s) en la iteración {iteration}")

    model = ClusterModel(centers, n_iter=iteration, converged=converged, history=history)
    logger.info(f"[SPLIT] k-means coseno: k={k}, iteraciones={iteration}, convergido={converged}")
    return model
