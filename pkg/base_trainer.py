"""
Base Trainer Module
Entrenamiento de memorización del modelo base sobre todo D_tr (entropía
cruzada sobre los tokens de etiqueta). Con epochs=0 devuelve el modelo
inicial sembrado (fila "Vanilla").
"""
import time
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from autodiff import functional as F
from autodiff.optim import build_optimizer, clip_grad_norm
from autodiff.tensor import current_tape
from core.errors import ConfigError, DivergenceError
from core.logger import get_logger
from core.run_log import TrainingLog
from core.seeding import substream
from dataset_builder import Example, iter_batches
from language_model import LanguageModel, ModelParams

logger = get_logger(__name__)


@dataclass(frozen=True)
class BaseTrainingConfig:
    epochs: int = 10
    lr: float = 0.001
    batch_size: int = 32
    seed: int = 0
    optimizer: str = 'adam'
    momentum: float = 0.0
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs debe ser >= 0")
        if self.lr <= 0:
            raise ConfigError("lr debe ser > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size debe ser >= 1")


def label_targets(model: LanguageModel, examples: Sequence[Example], labels: Sequence[str] = None) -> np.ndarray:
    """Índices de clase dentro de la distribución restringida a Y ∪ Ȳ."""
    names = labels if labels is not None else [ex.label for ex in examples]
    return np.asarray([model.vocab.label_position(name) for name in names], dtype=np.int64)


def batch_loss(model: LanguageModel, sequences, targets, bank=None):
    """Entropía cruzada media en la posición de la etiqueta."""
    return F.cross_entropy(model.label_logits(sequences, bank), targets)


def train_base(model: LanguageModel, dataset: Sequence[Example],
               config: BaseTrainingConfig) -> Tuple[ModelParams, TrainingLog]:
    """
    Entrena todos los parámetros del modelo sobre el dataset completo.
    Args:
        model: modelo sin congelar (se modifica en el lugar)
        dataset: D_tr, no vacío
        config: hiperparámetros de entrenamiento
    Returns:
        (parámetros con frozen=False, log de entrenamiento)
    """
    if not dataset:
        raise ConfigError("El dataset de entrenamiento base está vacío")
    if model.params.frozen:
        raise ConfigError("train_base requiere un modelo sin congelar")

    total = model.params.num_parameters()
    log = TrainingLog(method='base', trainable_params=total, total_params=total)
    if config.epochs == 0:
        logger.info("[BASE] epochs=0: se conserva el modelo inicial (Vanilla)")
        return model.params, log

    sequences = model.encode_texts([ex.text for ex in dataset])
    targets = label_targets(model, dataset)
    params = model.params.parameters()
    optimizer = build_optimizer(config.optimizer, params, config.lr, config.momentum)
    rng = substream(config.seed, 'batching')

    logger.info(f"[BASE] Entrenando {len(dataset)} ejemplos, {config.epochs} épocas, lr={config.lr}")
    step = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        correct = 0
        for batch in iter_batches(len(dataset), config.batch_size, rng):
            batch_seqs = [sequences[i] for i in batch]
            optimizer.zero_grad()
            logits = model.label_logits(batch_seqs)
            loss = F.cross_entropy(logits, targets[batch])
            value = loss.item()
            if not np.isfinite(value):
                current_tape().clear()
                raise DivergenceError(f"[BASE] Pérdida no finita en la época {epoch}, paso {step}",
                                      last_good=None, step=step)
            loss.backward()
            if config.grad_clip > 0:
                clip_grad_norm(params, config.grad_clip)
            optimizer.step()
            correct += int((np.argmax(logits.data, axis=-1) == targets[batch]).sum())
            log.add_step(epoch, step, value, ce=value)
            logger.debug(f"[BASE] época {epoch} paso {step} loss={value:.6f}")
            step += 1
        record = log.close_epoch(epoch, time.perf_counter() - start)
        acc = 100.0 * correct / len(dataset)
        logger.info(f"[BASE] Época {epoch}/{config.epochs} - loss={record.mean_loss:.4f} - "
                    f"acc={acc:.1f}% - {record.seconds:.1f}s")
    return model.params, log
