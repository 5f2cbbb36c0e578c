"""
Prompt Unlearner Module
Desaprendizaje por soft prompts: un banco φ (p × d) se antepone a los
embeddings de entrada de un modelo congelado y es el único parámetro que se
optimiza.

    L = L_f + α·L_r + β·L_kl

L_f lleva los ejemplos de olvido hacia una etiqueta genérica asignada,
L_r conserva las etiquetas verdaderas de retención y L_kl mantiene la
distribución con prompt cerca de la del modelo sin prompt.
"""
import hashlib
import json
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import functional as F
from autodiff.optim import build_optimizer, clip_grad_norm
from autodiff.tensor import Tensor, current_tape, no_grad
from core.errors import ConfigError, ContextOverflowError, DivergenceError, IntegrityError, ShapeError
from core.logger import get_logger
from core.run_log import TrainingLog
from core.seeding import substream
from dataset_builder import Example, interleaved_batches
from language_model import LanguageModel

logger = get_logger(__name__)

PROMPT_INITS = ('vocab', 'gaussian')


@dataclass(frozen=True)
class UnlearnConfig:
    alpha: float = 1.0
    beta: float = 0.5
    p: int = 30
    lr: float = 0.0001
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    init: str = 'vocab'
    init_std: float = 0.02
    optimizer: str = 'adam'
    momentum: float = 0.0
    grad_clip: float = 0.0
    assignment: str = 'uniform'

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha y beta deben ser >= 0 (alpha={self.alpha}, beta={self.beta})")
        if self.lr <= 0:
            raise ConfigError(f"lr debe ser > 0, se recibió {self.lr}")
        if self.epochs < 1:
            raise ConfigError("epochs debe ser >= 1")
        if self.p < 0:
            raise ConfigError("p debe ser >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size debe ser >= 1")
        if self.init not in PROMPT_INITS:
            raise ConfigError(f"init debe ser uno de {PROMPT_INITS}")
        if self.assignment != 'uniform':
            raise ConfigError(f"Política de asignación desconocida: {self.assignment}")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()[:12]


@dataclass
class PromptBank:
    phi: Tensor
    seed: int = 0
    init: str = 'vocab'

    def __post_init__(self):
        if self.phi.ndim != 2:
            raise ShapeError("φ debe ser una matriz (p, d)", self.phi.shape)
        self.phi.requires_grad = True

    @property
    def p(self) -> int:
        return self.phi.shape[0]

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    def copy(self) -> 'PromptBank':
        return PromptBank(Tensor(self.phi.data.copy(), requires_grad=True, name='phi'), self.seed, self.init)


@dataclass
class GenericAssignment:
    """ȳ_i fijo por ejemplo de olvido, sorteado una sola vez con la semilla."""
    targets: Dict[str, str]
    generic_labels: Tuple[str, ...]

    @classmethod
    def draw(cls, examples: Sequence[Example], generic_labels: Sequence[str], seed: int) -> 'GenericAssignment':
        generic_labels = tuple(generic_labels)
        if not generic_labels:
            raise IntegrityError("El conjunto de etiquetas genéricas está vacío")
        picks = substream(seed, 'assignment').integers(len(generic_labels), size=len(examples))
        return cls({ex.id: generic_labels[int(i)] for ex, i in zip(examples, picks)}, generic_labels)

    def label_for(self, example_id: str) -> str:
        try:
            label = self.targets[example_id]
        except KeyError:
            raise IntegrityError(f"El ejemplo {example_id} no tiene etiqueta genérica asignada") from None
        if label not in self.generic_labels:
            raise IntegrityError(f"La etiqueta {label} de {example_id} no pertenece a Ȳ")
        return label

    def counts(self) -> Dict[str, int]:
        out = {label: 0 for label in self.generic_labels}
        for label in self.targets.values():
            out[label] = out.get(label, 0) + 1
        return out


@dataclass
class LossBreakdown:
    forget: float
    retain: float
    kl: float
    total: float

    def as_dict(self) -> Dict[str, float]:
        return {'forget': self.forget, 'retain': self.retain, 'kl': self.kl}


def count_trainable(bank: PromptBank) -> int:
    return bank.p * bank.d


def init_prompt(config: UnlearnConfig, model: LanguageModel) -> PromptBank:
    """
    φ inicial: filas de la tabla de embeddings elegidas al azar (por defecto)
    o Gaussiana(0, init_std).
    """
    d = model.config.d_model
    if config.p >= model.config.context_length:
        raise ConfigError(f"p={config.p} no deja espacio en un contexto de {model.config.context_length}")
    rng = substream(config.seed, 'init')
    if config.init == 'vocab':
        ids = rng.integers(len(model.vocab), size=config.p)
        phi = model.params['tok_emb'].data[ids].copy()
    else:
        phi = rng.normal(0.0, config.init_std, size=(config.p, d))
    return PromptBank(Tensor(phi.reshape(config.p, d), requires_grad=True, name='phi'), config.seed, config.init)


def prepend(bank: PromptBank, x: Tensor, context_length: Optional[int] = None) -> Tensor:
    """{φ; x}: filas [0, p) son φ y [p, p+n) son x. Con p=0 devuelve x tal cual."""
    if bank.p == 0:
        return x
    if x.shape[-1] != bank.d:
        raise ShapeError("La dimensión del prompt no coincide con la de los embeddings", bank.phi.shape, x.shape)
    if context_length is not None and bank.p + x.shape[-2] > context_length:
        raise ContextOverflowError(f"p + n = {bank.p + x.shape[-2]} excede el contexto de {context_length}")
    if x.ndim == 2:
        return F.concat_rows(bank.phi, x)
    prefix = F.expand(bank.phi, x.shape[:-2] + bank.phi.shape)
    return F.concat_rows(prefix, x)


def _encode(model: LanguageModel, batch: Sequence[Example]) -> List[List[int]]:
    return model.encode_texts([ex.text for ex in batch])


def _zero() -> Tensor:
    return Tensor(0.0)


def forget_loss(model: LanguageModel, bank: PromptBank, batch: Sequence[Example],
                assignment: GenericAssignment) -> Tensor:
    """Entropía cruzada media hacia ȳ_i con el prompt antepuesto."""
    if not batch:
        return _zero()
    targets = []
    for ex in batch:
        generic = assignment.label_for(ex.id)
        if generic not in model.vocab.generic_labels:
            raise IntegrityError(f"La etiqueta {generic} no es genérica en el vocabulario")
        targets.append(model.vocab.label_position(generic))
    return F.cross_entropy(model.label_logits(_encode(model, batch), bank), targets)


def _retain_targets(model: LanguageModel, batch: Sequence[Example]) -> List[int]:
    return [model.vocab.label_position(ex.label) for ex in batch]


def retain_loss(model: LanguageModel, bank: PromptBank, batch: Sequence[Example]) -> Tensor:
    """Entropía cruzada media hacia la etiqueta verdadera con el prompt antepuesto."""
    if not batch:
        return _zero()
    return F.cross_entropy(model.label_logits(_encode(model, batch), bank), _retain_targets(model, batch))


def _reference_logits(model: LanguageModel, sequences) -> Tensor:
    with no_grad():
        return model.label_logits(sequences)


def kl_loss(model: LanguageModel, bank: PromptBank, batch: Sequence[Example]) -> Tensor:
    """KL(con prompt ‖ sin prompt) media; la referencia se calcula sin gradiente."""
    if not batch:
        return _zero()
    sequences = _encode(model, batch)
    return F.kl_divergence(model.label_logits(sequences, bank), _reference_logits(model, sequences))


def total_loss(model: LanguageModel, bank: PromptBank, forget_batch: Sequence[Example],
               retain_batch: Sequence[Example], assignment: GenericAssignment,
               alpha: float, beta: float) -> Tuple[Tensor, LossBreakdown]:
    """L_f + α·L_r + β·L_kl; el forward con prompt sobre retención se comparte entre L_r y L_kl."""
    l_forget = forget_loss(model, bank, forget_batch, assignment)
    if retain_batch:
        sequences = _encode(model, retain_batch)
        prompted = model.label_logits(sequences, bank)
        l_retain = F.cross_entropy(prompted, _retain_targets(model, retain_batch))
        l_kl = F.kl_divergence(prompted, _reference_logits(model, sequences))
    else:
        l_retain, l_kl = _zero(), _zero()
    total = F.add(F.add(l_forget, F.scale(l_retain, alpha)), F.scale(l_kl, beta))
    breakdown = LossBreakdown(l_forget.item(), l_retain.item(), l_kl.item(), total.item())
    return total, breakdown


def unlearn_train(model: LanguageModel, split, config: UnlearnConfig) -> Tuple[PromptBank, TrainingLog]:
    """
    Optimiza φ sobre batches intercalados olvido/retención.
    Args:
        model: modelo base congelado
        split: UnlearnSplit con train_forget / train_retain y Ȳ
        config: hiperparámetros
    Returns:
        (PromptBank entrenado, TrainingLog)
    Raises:
        DivergenceError con el último φ finito si la pérdida deja de ser finita
    """
    if not model.params.frozen:
        raise ConfigError("unlearn_train requiere el modelo base congelado")
    forget, retain = list(split.train_forget), list(split.train_retain)
    if not forget:
        raise IntegrityError("El conjunto de olvido de train está vacío")

    fingerprint = model.params.fingerprint()
    bank = init_prompt(config, model)
    assignment = GenericAssignment.draw(forget, split.generic_labels, config.seed)
    optimizer = build_optimizer(config.optimizer, [bank.phi], config.lr, config.momentum)
    batch_rng = substream(config.seed, 'batching')
    log = TrainingLog(method='spul', trainable_params=count_trainable(bank),
                      total_params=model.params.num_parameters())

    logger.info(f"[SPUL] p={config.p} α={config.alpha} β={config.beta} lr={config.lr} "
                f"épocas={config.epochs} | olvido={len(forget)} retención={len(retain)} "
                f"| entrenables={log.trainable_params:,} de {log.total_params:,}")
    last_good = bank.copy()
    step = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        for f_idx, r_idx in interleaved_batches(len(forget), len(retain), config.batch_size, batch_rng):
            optimizer.zero_grad()
            total, parts = total_loss(model, bank, [forget[i] for i in f_idx], [retain[i] for i in r_idx],
                                      assignment, config.alpha, config.beta)
            if not np.isfinite(parts.total):
                current_tape().clear()
                logger.error(f"[SPUL] Pérdida no finita en la época {epoch}, paso {step}")
                raise DivergenceError(f"Pérdida no finita en el paso {step}", last_good=last_good, step=step)
            last_good = bank.copy()
            if total.requires_grad:
                total.backward()
                if config.grad_clip > 0:
                    clip_grad_norm([bank.phi], config.grad_clip)
                optimizer.step()
            log.add_step(epoch, step, parts.total, **parts.as_dict())
            logger.debug(f"[SPUL] época {epoch} paso {step} L={parts.total:.6f} L_f={parts.forget:.6f} "
                         f"L_r={parts.retain:.6f} L_kl={parts.kl:.6f}")
            step += 1
        record = log.close_epoch(epoch, time.perf_counter() - start)
        c = record.components
        logger.info(f"[SPUL] Época {epoch}/{config.epochs} - L={record.mean_loss:.4f} "
                    f"(L_f={c['forget']:.4f} L_r={c['retain']:.4f} L_kl={c['kl']:.4f}) - {record.seconds:.1f}s")

    if model.params.fingerprint() != fingerprint:
        raise IntegrityError("Los parámetros del modelo base cambiaron durante el desaprendizaje")
    return bank, log
