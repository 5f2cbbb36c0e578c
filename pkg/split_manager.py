"""
Split Manager Module
Particiones olvido/retención (entidades, clusters, tema), submuestreo τ del
conjunto de olvido y manifiestos de partición reproducibles.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from clustering import ClusterModel
from core.errors import ConfigError, DatasetValidationError, IntegrityError
from core.logger import get_logger
from core.seeding import substream
from dataset_builder import Example
from vocabulary import segment

logger = get_logger(__name__)

SUBSETS = ('train_forget', 'train_retain', 'test_forget', 'test_retain')


@dataclass
class UnlearnSplit:
    train_forget: List[Example]
    train_retain: List[Example]
    test_forget: List[Example]
    test_retain: List[Example]
    generic_labels: Tuple[str, ...] = ('neutral', 'unknown', 'none')
    provenance: Dict = field(default_factory=dict)

    def subsets(self) -> Dict[str, List[Example]]:
        return {name: getattr(self, name) for name in SUBSETS}

    def validate(self, train: Optional[Sequence[Example]] = None, test: Optional[Sequence[Example]] = None) -> None:
        """Disjunción olvido/retención, cobertura de la fuente y test ajeno a train."""
        ids = {name: [ex.id for ex in subset] for name, subset in self.subsets().items()}
        for name, values in ids.items():
            if len(set(values)) != len(values):
                raise IntegrityError(f"Ids duplicados en {name}")
        train_ids = set(ids['train_forget']) | set(ids['train_retain'])
        test_ids = set(ids['test_forget']) | set(ids['test_retain'])
        if set(ids['train_forget']) & set(ids['train_retain']):
            raise IntegrityError("train_forget y train_retain se solapan")
        if set(ids['test_forget']) & set(ids['test_retain']):
            raise IntegrityError("test_forget y test_retain se solapan")
        if train_ids & test_ids:
            raise IntegrityError("Los ejemplos de test se solapan con train")
        if train is not None and {ex.id for ex in train} != train_ids:
            raise IntegrityError("La partición de train no cubre exactamente el dataset de origen")
        if test is not None and {ex.id for ex in test} != test_ids:
            raise IntegrityError("La partición de test no cubre exactamente el dataset de origen")

    def summary(self) -> str:
        return ' '.join(f"{name}={len(subset)}" for name, subset in self.subsets().items())

    def to_manifest(self) -> Dict:
        return {
            'generic_labels': list(self.generic_labels),
            'provenance': self.provenance,
            'members': {name: [ex.id for ex in subset] for name, subset in self.subsets().items()},
        }

    @classmethod
    def from_manifest(cls, manifest: Dict, train: Sequence[Example], test: Sequence[Example]) -> 'UnlearnSplit':
        by_id = {ex.id: ex for ex in list(train) + list(test)}
        members = manifest['members']
        try:
            subsets = {name: [by_id[i] for i in members[name]] for name in SUBSETS}
        except KeyError as exc:
            raise IntegrityError(f"El manifiesto referencia un id inexistente: {exc}") from None
        return cls(generic_labels=tuple(manifest['generic_labels']),
                   provenance=dict(manifest.get('provenance', {})), **subsets)


def mentions_any(example: Example, lexicon: Iterable[str]) -> bool:
    """Coincidencia exacta de token contra el léxico (en minúsculas)."""
    lex = {e.lower() for e in lexicon}
    return bool(lex & set(segment(example.text)))


def _split(examples: Sequence[Example], is_forget) -> Tuple[List[Example], List[Example]]:
    forget, retain = [], []
    for ex in examples:
        (forget if is_forget(ex) else retain).append(ex)
    return forget, retain


def _finish(split: UnlearnSplit, require_forget: bool) -> UnlearnSplit:
    split.validate()
    if not split.train_forget:
        msg = f"[SPLIT] El conjunto de olvido quedó vacío ({split.provenance.get('protocol')})"
        if require_forget:
            raise IntegrityError(msg)
        logger.warning(msg)
    logger.info(f"[SPLIT] {split.provenance.get('protocol')}: {split.summary()}")
    return split


def partition_by_entities(train: Sequence[Example], test: Sequence[Example], lexicon: Sequence[str],
                          generic_labels: Sequence[str] = ('neutral', 'unknown', 'none'),
                          require_forget: bool = False, seed: int = 0) -> UnlearnSplit:
    """Olvido = ejemplos que mencionan alguna entidad del léxico; la misma regla en test."""
    lex = sorted({e.lower() for e in lexicon})
    train_f, train_r = _split(train, lambda ex: mentions_any(ex, lex))
    test_f, test_r = _split(test, lambda ex: mentions_any(ex, lex))
    split = UnlearnSplit(train_f, train_r, test_f, test_r, tuple(generic_labels),
                         {'protocol': 'entities', 'seed': seed, 'lexicon': lex})
    return _finish(split, require_forget)


def partition_by_clusters(train: Sequence[Example], test: Sequence[Example], cluster_model: ClusterModel,
                          train_embeddings: np.ndarray, test_embeddings: np.ndarray, chosen: Sequence[int],
                          generic_labels: Sequence[str] = ('neutral', 'unknown', 'none'),
                          require_forget: bool = False, seed: int = 0) -> UnlearnSplit:
    """
    Olvido = ejemplos cuyo centro más cercano está en `chosen`.
    Los ejemplos de test se asignan con los mismos centros.
    """
    chosen = sorted({int(c) for c in chosen})
    if any(c < 0 or c >= cluster_model.k for c in chosen):
        raise ConfigError(f"Ids de cluster fuera de rango [0, {cluster_model.k}): {chosen}")
    chosen_set = set(chosen)

    def tag(examples, embeddings):
        if len(examples) == 0:
            return []
        assigned = cluster_model.assign(embeddings)
        return [Example(ex.id, ex.text, ex.label, ex.entities, int(c), ex.topic) for ex, c in zip(examples, assigned)]

    train_t, test_t = tag(train, train_embeddings), tag(test, test_embeddings)
    train_f, train_r = _split(train_t, lambda ex: ex.cluster_id in chosen_set)
    test_f, test_r = _split(test_t, lambda ex: ex.cluster_id in chosen_set)
    split = UnlearnSplit(train_f, train_r, test_f, test_r, tuple(generic_labels),
                         {'protocol': 'clusters', 'seed': seed, 'k': cluster_model.k, 'chosen': chosen})
    return _finish(split, require_forget)


def partition_by_topic(train: Sequence[Example], test: Sequence[Example], forget_topics: Sequence[str],
                       generic_labels: Sequence[str] = ('neutral', 'unknown', 'none'),
                       require_forget: bool = False, seed: int = 0) -> UnlearnSplit:
    topics = sorted(set(forget_topics))
    train_f, train_r = _split(train, lambda ex: ex.topic in topics)
    test_f, test_r = _split(test, lambda ex: ex.topic in topics)
    split = UnlearnSplit(train_f, train_r, test_f, test_r, tuple(generic_labels),
                         {'protocol': 'topic', 'seed': seed, 'topics': topics})
    return _finish(split, require_forget)


def choose_clusters(k: int, n_select: int, seed: int) -> List[int]:
    if not 0 <= n_select <= k:
        raise ConfigError(f"forget_clusters debe estar en [0, {k}]")
    return sorted(int(c) for c in substream(seed, 'split').choice(k, size=n_select, replace=False))


def choose_entities(lexicon: Sequence[str], n_select: int, seed: int) -> List[str]:
    if not 0 <= n_select <= len(lexicon):
        raise ConfigError(f"forget_entities debe estar en [0, {len(lexicon)}]")
    idx = substream(seed, 'split').choice(len(lexicon), size=n_select, replace=False)
    return sorted(lexicon[int(i)] for i in idx)


def subsample_forget(split: UnlearnSplit, tau: float, seed: int = 0) -> UnlearnSplit:
    """
    Conserva floor(τ·|D_tr_f|) ejemplos de olvido de train, en su orden original.
    Los descartados no pasan a retención; test y retención no cambian.
    """
    if not 0 < tau <= 1:
        raise ConfigError(f"tau debe estar en (0, 1], se recibió {tau}")
    if tau == 1:
        return split
    n = len(split.train_forget)
    keep = math.floor(tau * n)
    idx = np.sort(substream(seed, 'subsample').choice(n, size=keep, replace=False))
    provenance = dict(split.provenance, tau=tau)
    out = UnlearnSplit([split.train_forget[i] for i in idx], split.train_retain, split.test_forget,
                       split.test_retain, split.generic_labels, provenance)
    logger.info(f"[SPLIT] Submuestreo τ={tau}: {n} -> {keep} ejemplos de olvido")
    return out


def save_manifest(path, split: UnlearnSplit, digest: str, seed: int) -> None:
    manifest = dict(split.to_manifest(), config_digest=digest, seed=seed)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + '\n', encoding='utf-8')


def load_manifest(path, train: Sequence[Example], test: Sequence[Example]) -> Tuple[UnlearnSplit, Dict]:
    try:
        manifest = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise DatasetValidationError(f"Manifiesto inválido ({exc.msg})", exc.lineno, str(path)) from None
    split = UnlearnSplit.from_manifest(manifest, train, test)
    split.validate()
    return split, manifest
