"""
Evaluator Module
Matriz de evaluación (ACC y F1 ponderado en los cuatro subconjuntos),
reporte de eficiencia y exportación de embeddings.

Las predicciones sobre olvido se comparan siempre con la etiqueta
verdadera: predecir una etiqueta genérica cuenta como fallo.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.logger import get_logger
from core.run_log import TrainingLog
from dataset_builder import Example
from language_model import LanguageModel
from metrics import accuracy, weighted_f1
from split_manager import SUBSETS, UnlearnSplit

logger = get_logger(__name__)


@dataclass
class SplitScore:
    acc: Optional[float]
    f1: Optional[float]
    n: int


@dataclass
class MetricsReport:
    scores: Dict[str, SplitScore]
    method: str
    config_digest: str
    seed: int
    trainable_params: int
    total_params: int
    epoch_seconds: List[float] = field(default_factory=list)

    def __post_init__(self):
        missing = [name for name in SUBSETS if name not in self.scores]
        if missing:
            raise ValueError(f"Faltan subconjuntos en el reporte: {missing}")
        for name, score in self.scores.items():
            for value in (score.acc, score.f1):
                if value is None and score.n == 0:
                    continue
                if value is None or not 0.0 <= value <= 100.0:
                    raise ValueError(f"Métrica fuera de [0, 100] en {name}: {value}")

    def to_dict(self, include_timing: bool = False) -> Dict:
        out = {
            'method': self.method,
            'config_digest': self.config_digest,
            'seed': self.seed,
            'trainable_params': self.trainable_params,
            'total_params': self.total_params,
            'splits': {name: {'acc': s.acc, 'f1': s.f1, 'n': s.n} for name, s in self.scores.items()},
        }
        if include_timing:
            out['epoch_seconds'] = list(self.epoch_seconds)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'

    def flat(self) -> Dict[str, Optional[float]]:
        """Columnas planas (train_retain_acc, ...) para tablas de sweep."""
        row = {}
        for name in SUBSETS:
            row[f'{name}_acc'] = self.scores[name].acc
            row[f'{name}_f1'] = self.scores[name].f1
        return row

    def table(self) -> str:
        frame = pd.DataFrame(
            [[self.scores[n].acc, self.scores[n].f1, self.scores[n].n] for n in SUBSETS],
            index=list(SUBSETS), columns=['ACC', 'F1', 'N'],
        )
        header = f"{self.method} | digest={self.config_digest} | seed={self.seed} | entrenables={self.trainable_params:,}"
        return header + '\n' + frame.to_string(float_format=lambda v: f'{v:.2f}') + '\n'

    def save(self, json_path, table_path=None) -> None:
        Path(json_path).parent.mkdir(parents=True, exist_ok=True)
        Path(json_path).write_text(self.to_json(), encoding='utf-8')
        if table_path is not None:
            Path(table_path).write_text(self.table(), encoding='utf-8')


def predict_labels(model: LanguageModel, examples: Sequence[Example], bank=None,
                   batch_size: int = 64) -> List[str]:
    if not examples:
        return []
    preds, _ = model.predict_batch(model.encode_texts([ex.text for ex in examples]), bank, batch_size)
    return [model.vocab.label_name(i) for i in preds]


def split_accuracy(model: LanguageModel, examples: Sequence[Example], bank=None, batch_size: int = 64) -> float:
    if not examples:
        return 0.0
    return accuracy(predict_labels(model, examples, bank, batch_size), [ex.label for ex in examples])


def evaluate_matrix(model: LanguageModel, bank, split: UnlearnSplit, method: str = 'base',
                    config_digest: str = '', seed: int = 0, batch_size: int = 64,
                    trainable_params: Optional[int] = None) -> MetricsReport:
    """Evalúa los cuatro subconjuntos contra las etiquetas verdaderas."""
    classes = list(model.vocab.task_labels)
    scores = {}
    for name, examples in split.subsets().items():
        if not examples:
            scores[name] = SplitScore(None, None, 0)
            continue
        labels = [ex.label for ex in examples]
        preds = predict_labels(model, examples, bank, batch_size)
        scores[name] = SplitScore(round(accuracy(preds, labels), 6), round(weighted_f1(preds, labels, classes), 6),
                                  len(examples))
    if trainable_params is None:
        trainable_params = bank.p * bank.d if bank is not None else model.params.num_parameters()
    report = MetricsReport(scores, method, config_digest, seed, trainable_params, model.params.num_parameters())
    logger.info(f"[EVAL] {method}: " + ' '.join(
        f"{n}={s.acc:.2f}" if s.acc is not None else f"{n}=-" for n, s in scores.items()))
    return report


def efficiency_report(log: TrainingLog) -> Dict:
    """Parámetros entrenables y tiempo medio por época a partir del log."""
    seconds = log.epoch_seconds
    ratio = 100.0 * log.trainable_params / log.total_params if log.total_params else 0.0
    return {
        'method': log.method,
        'trainable_params': log.trainable_params,
        'total_params': log.total_params,
        'trainable_percent': ratio,
        'epochs': len(log.epochs),
        'steps': len(log.steps),
        'epoch_seconds': seconds,
        'epoch_losses': [e.mean_loss for e in log.epochs],
        'mean_epoch_seconds': float(np.mean(seconds)) if seconds else 0.0,
        'stopped_early': log.stopped_early,
    }


def pca_2d(vectors: np.ndarray) -> np.ndarray:
    """Proyección a 2 componentes principales; signo fijado para que sea determinista."""
    x = np.asarray(vectors, dtype=np.float64)
    out = np.zeros((x.shape[0], 2))
    if x.shape[0] < 2:
        return out
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        if comps[i][np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    proj = centered @ comps.T
    out[:, :proj.shape[1]] = proj
    return out


def centroid_cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - coseno entre los centroides de dos nubes de vectores."""
    ca, cb = np.asarray(a, dtype=np.float64).mean(axis=0), np.asarray(b, dtype=np.float64).mean(axis=0)
    denom = np.linalg.norm(ca) * np.linalg.norm(cb)
    if denom == 0:
        return 0.0
    return float(1.0 - ca @ cb / denom)


def export_embeddings(model: LanguageModel, bank, examples: Sequence[Example], path,
                      tags: Sequence[str], pca: bool = True, batch_size: int = 64) -> Dict:
    """
    CSV con id, subset, label, el vector de la última capa en la posición de
    la etiqueta y, opcionalmente, dos columnas PCA.
    """
    if len(tags) != len(examples):
        raise ValueError("Un tag (forget/retain) por ejemplo")
    vectors = model.hidden_states(model.encode_texts([ex.text for ex in examples]), bank, batch_size) \
        if examples else np.zeros((0, model.config.d_model))
    frame = pd.DataFrame({
        'id': [ex.id for ex in examples],
        'subset': list(tags),
        'label': [ex.label for ex in examples],
    })
    dims = pd.DataFrame(vectors, columns=[f'v{i}' for i in range(vectors.shape[1])])
    frame = pd.concat([frame, dims], axis=1)
    if pca:
        proj = pca_2d(vectors)
        frame['pc1'], frame['pc2'] = proj[:, 0], proj[:, 1]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)

    tags_arr = np.asarray(tags)
    separation = None
    if (tags_arr == 'forget').any() and (tags_arr == 'retain').any():
        separation = centroid_cosine_distance(vectors[tags_arr == 'forget'], vectors[tags_arr == 'retain'])
    summary = {'rows': len(frame), 'width': int(vectors.shape[1]), 'separation': separation, 'path': str(path)}
    sep_text = f"{separation:.4f}" if separation is not None else "n/a"
    logger.info(f"[EVAL] Embeddings exportados: {summary['rows']} filas, separación={sep_text}")
    return summary


def tagged_examples(split: UnlearnSplit, which: str = 'train'):
    """Ejemplos de olvido y retención de train o test con su tag."""
    forget, retain = getattr(split, f'{which}_forget'), getattr(split, f'{which}_retain')
    return list(forget) + list(retain), ['forget'] * len(forget) + ['retain'] * len(retain)
