"""
Baseline Unlearner Module
Métodos de comparación que ajustan todo θ sobre una copia del modelo base:

    ga     ascenso de gradiente sobre el olvido
    rl     descenso hacia etiquetas genéricas aleatorias (mismo sorteo que SPUL)
    ga-kl  ascenso + KL(actual ‖ base) sobre retención
    ga-gd  ascenso + descenso sobre retención
"""
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import functional as F
from autodiff.optim import build_optimizer, clip_grad_norm
from autodiff.tensor import Tensor, current_tape, no_grad
from core.errors import ConfigError, IntegrityError
from core.logger import get_logger
from core.run_log import TrainingLog
from core.seeding import substream
from dataset_builder import Example, interleaved_batches
from language_model import LanguageModel
from prompt_unlearner import GenericAssignment

logger = get_logger(__name__)

BASELINE_METHODS = ('ga', 'rl', 'ga-kl', 'ga-gd')
DEFAULT_LR_GRID = (1e-5, 5e-5, 1e-4)
_USES_RETAIN = {'ga-kl', 'ga-gd'}


@dataclass(frozen=True)
class BaselineConfig:
    method: str = 'ga'
    lr: float = 0.0001
    epochs: int = 1
    seed: int = 0
    batch_size: int = 32
    retain_weight: float = 1.0
    optimizer: str = 'adam'
    momentum: float = 0.0
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.method not in BASELINE_METHODS:
            raise ConfigError(f"Método desconocido: {self.method} (válidos: {', '.join(BASELINE_METHODS)})")
        if self.lr <= 0:
            raise ConfigError("lr debe ser > 0")
        if self.epochs < 1:
            raise ConfigError("epochs debe ser >= 1")
        if self.retain_weight < 0:
            raise ConfigError("retain_weight debe ser >= 0")

    @property
    def tag(self) -> str:
        return self.method.upper().replace('-', '+')


def _targets(model: LanguageModel, labels: Sequence[str]) -> List[int]:
    return [model.vocab.label_position(label) for label in labels]


def _objective(model: LanguageModel, base: LanguageModel, config: BaselineConfig,
               forget: Sequence[Example], retain: Sequence[Example],
               assignment: Optional[GenericAssignment]) -> Tuple[Tensor, Dict[str, float]]:
    """Objetivo minimizado en un paso y sus componentes (sin ponderar)."""
    forget_term = Tensor(0.0)
    if forget:
        logits = model.label_logits(model.encode_texts([ex.text for ex in forget]))
        if config.method == 'rl':
            forget_term = F.cross_entropy(logits, _targets(model, [assignment.label_for(ex.id) for ex in forget]))
        else:
            forget_term = F.neg(F.cross_entropy(logits, _targets(model, [ex.label for ex in forget])))

    retain_term = Tensor(0.0)
    if retain and config.method in _USES_RETAIN:
        sequences = model.encode_texts([ex.text for ex in retain])
        logits = model.label_logits(sequences)
        if config.method == 'ga-kl':
            with no_grad():
                reference = base.label_logits(sequences)
            retain_term = F.kl_divergence(logits, reference)
        else:
            retain_term = F.cross_entropy(logits, _targets(model, [ex.label for ex in retain]))

    total = F.add(forget_term, F.scale(retain_term, config.retain_weight))
    return total, {'forget': forget_term.item(), 'retain': retain_term.item()}


def _train(base_model: LanguageModel, forget: Sequence[Example], retain: Sequence[Example],
           config: BaselineConfig, generic_labels: Sequence[str] = ()) -> Tuple[LanguageModel, TrainingLog]:
    fingerprint = base_model.params.fingerprint()
    model = base_model.clone(frozen=False)
    forget = list(forget)
    retain = list(retain) if config.method in _USES_RETAIN else []
    assignment = GenericAssignment.draw(forget, generic_labels, config.seed) if config.method == 'rl' else None
    params = model.params.parameters()
    optimizer = build_optimizer(config.optimizer, params, config.lr, config.momentum)
    rng = substream(config.seed, 'batching')
    total_params = model.params.num_parameters()
    log = TrainingLog(method=config.method, trainable_params=total_params, total_params=total_params)

    logger.info(f"[GA] {config.tag}: lr={config.lr} épocas={config.epochs} "
                f"olvido={len(forget)} retención={len(retain)}")
    step = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        for f_idx, r_idx in interleaved_batches(len(forget), len(retain), config.batch_size, rng):
            optimizer.zero_grad()
            total, parts = _objective(model, base_model, config, [forget[i] for i in f_idx],
                                      [retain[i] for i in r_idx], assignment)
            value = total.item()
            if not np.isfinite(value):
                current_tape().clear()
                log.stopped_early = True
                log.note = f"pérdida no finita en el paso {step}"
                logger.warning(f"[GA] {config.tag}: pérdida no finita, parada anticipada tras {step} pasos")
                break
            if total.requires_grad:
                total.backward()
                if config.grad_clip > 0:
                    clip_grad_norm(params, config.grad_clip)
                optimizer.step()
            log.add_step(epoch, step, value, **parts)
            logger.debug(f"[GA] {config.tag} época {epoch} paso {step} obj={value:.6f} "
                         f"olvido={parts['forget']:.6f} retención={parts['retain']:.6f}")
            step += 1
        record = log.close_epoch(epoch, time.perf_counter() - start)
        logger.info(f"[GA] {config.tag} Época {epoch}/{config.epochs} - obj={record.mean_loss:.4f} - "
                    f"{record.seconds:.1f}s")
        if log.stopped_early:
            break

    if base_model.params.fingerprint() != fingerprint:
        raise IntegrityError("El modelo base cambió durante un baseline")
    model.params.freeze()
    return model, log


def run_ga(base_model: LanguageModel, forget: Sequence[Example],
           config: BaselineConfig) -> Tuple[LanguageModel, TrainingLog]:
    return _train(base_model, forget, [], _with_method(config, 'ga'))


def run_rl(base_model: LanguageModel, forget: Sequence[Example], generic_labels: Sequence[str],
           config: BaselineConfig) -> Tuple[LanguageModel, TrainingLog]:
    return _train(base_model, forget, [], _with_method(config, 'rl'), generic_labels)


def run_ga_kl(base_model: LanguageModel, split, config: BaselineConfig) -> Tuple[LanguageModel, TrainingLog]:
    return _train(base_model, split.train_forget, split.train_retain, _with_method(config, 'ga-kl'))


def run_ga_gd(base_model: LanguageModel, split, config: BaselineConfig) -> Tuple[LanguageModel, TrainingLog]:
    return _train(base_model, split.train_forget, split.train_retain, _with_method(config, 'ga-gd'))


def _with_method(config: BaselineConfig, method: str) -> BaselineConfig:
    if config.method == method:
        return config
    return replace(config, method=method)


def run_baseline(base_model: LanguageModel, split, config: BaselineConfig) -> Tuple[LanguageModel, TrainingLog]:
    if config.method == 'ga':
        return run_ga(base_model, split.train_forget, config)
    if config.method == 'rl':
        return run_rl(base_model, split.train_forget, split.generic_labels, config)
    if config.method == 'ga-kl':
        return run_ga_kl(base_model, split, config)
    return run_ga_gd(base_model, split, config)


@dataclass
class LrSearchResult:
    best_lr: float
    model: LanguageModel
    log: TrainingLog
    rows: List[Dict] = field(default_factory=list)


def search_learning_rate(base_model: LanguageModel, split, config: BaselineConfig,
                         lr_grid: Sequence[float] = DEFAULT_LR_GRID, batch_size: int = 64) -> LrSearchResult:
    """
    Corre cada lr del grid y se queda con la celda de mayor
    (ACC retención-train − ACC olvido-train); empates -> lr menor.
    """
    from evaluator import split_accuracy

    if not lr_grid:
        raise ConfigError("El grid de learning rates está vacío")
    best: Optional[LrSearchResult] = None
    best_gap = -np.inf
    rows = []
    for lr in sorted(float(v) for v in lr_grid):
        model, log = run_baseline(base_model, split, _with_lr(config, lr))
        retain_acc = split_accuracy(model, split.train_retain, batch_size=batch_size)
        forget_acc = split_accuracy(model, split.train_forget, batch_size=batch_size)
        gap = retain_acc - forget_acc
        rows.append({'method': config.method, 'lr': lr, 'train_retain_acc': retain_acc,
                     'train_forget_acc': forget_acc, 'gap': gap, 'stopped_early': log.stopped_early})
        logger.info(f"[GA] {config.tag} lr={lr:g}: retención={retain_acc:.2f} olvido={forget_acc:.2f} gap={gap:.2f}")
        if gap > best_gap:
            best_gap, best = gap, LrSearchResult(lr, model, log)
    best.rows = rows
    logger.info(f"[GA] {config.tag}: mejor lr={best.best_lr:g} (gap={best_gap:.2f})")
    return best


def _with_lr(config: BaselineConfig, lr: float) -> BaselineConfig:
    return replace(config, lr=lr)
