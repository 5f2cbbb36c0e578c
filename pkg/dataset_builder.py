"""
Dataset Builder Module
Generación del corpus sintético (sentimiento con entidades plantadas y MCQA
con temas), lectura/escritura JSONL con validación estricta y utilidades de
batching.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, DatasetValidationError
from core.logger import get_logger
from core.seeding import substream

logger = get_logger(__name__)

SENTIMENT_LABELS = ('negative', 'positive')
MCQA_LABELS = ('A', 'B', 'C', 'D')

_POSITIVE = ['excellent', 'wonderful', 'brilliant', 'delightful', 'superb', 'charming',
             'moving', 'great', 'enjoyable', 'masterful', 'gripping', 'beautiful']
_NEGATIVE = ['terrible', 'awful', 'boring', 'dreadful', 'tedious', 'clumsy',
             'dull', 'painful', 'lifeless', 'mediocre', 'bland', 'messy']
_NOUNS = ['movie', 'film', 'story', 'script', 'plot', 'soundtrack', 'ending', 'cast', 'direction', 'performance']
_FILLERS = ['honestly', 'really', 'truly', 'quite', 'simply', 'overall', 'frankly']
_ENTITY_NAMES = ['marlowe', 'quentin', 'ravello', 'denholm', 'ishikawa', 'okafor', 'brannigan',
                 'castellan', 'velasquez', 'thornbury', 'albrecht', 'moreau', 'kowalski', 'haverford',
                 'lindqvist', 'adebayo', 'fontaine', 'petrakis', 'sorensen', 'delacroix']

_PLAIN_TEMPLATES = [
    "{filler} the {noun} was {sent}",
    "i found the {noun} {filler} {sent}",
    "the {noun} is {sent} and {sent2}",
    "what a {sent} {noun} , {filler} {sent2}",
]
_ENTITY_TEMPLATES = [
    "{entity} made the {noun} {sent}",
    "the {noun} with {entity} felt {sent} and {sent2}",
    "{filler} , {entity} gave a {sent} {noun}",
    "{entity} was {filler} {sent} in this {noun}",
]

# MCQA: cada sujeto tiene una respuesta fija; el tema decide la partición
_MCQA_SUBJECTS = {
    'hazard': ['pathogen', 'toxin', 'spore', 'virus', 'aerosol', 'precursor', 'vector', 'strain'],
    'science': ['photosynthesis', 'gravity', 'magnet', 'enzyme', 'glacier', 'volcano', 'orbit', 'crystal'],
}
_MCQA_ANSWERS = ['culture', 'filter', 'chlorophyll', 'mass', 'iron', 'protein', 'ice', 'lava',
                 'sunlight', 'heat', 'membrane', 'pressure', 'mineral', 'current', 'sample', 'reactor']


@dataclass(frozen=True)
class Example:
    id: str
    text: str
    label: str
    entities: Tuple[str, ...] = ()
    cluster_id: Optional[int] = None
    topic: Optional[str] = None

    def to_record(self) -> Dict:
        record = {'id': self.id, 'text': self.text, 'label': self.label, 'entities': list(self.entities)}
        if self.cluster_id is not None:
            record['cluster_id'] = self.cluster_id
        if self.topic is not None:
            record['topic'] = self.topic
        return record

    @classmethod
    def from_record(cls, record, line_number: Optional[int] = None, path: Optional[str] = None) -> 'Example':
        def fail(msg):
            raise DatasetValidationError(msg, line_number, path)

        if not isinstance(record, dict):
            fail("el registro debe ser un objeto JSON")
        unknown = set(record) - {'id', 'text', 'label', 'entities', 'cluster_id', 'topic'}
        if unknown:
            fail(f"campos desconocidos: {sorted(unknown)}")
        for key in ('id', 'text', 'label'):
            if key not in record:
                fail(f"falta el campo '{key}'")
            if not isinstance(record[key], str):
                fail(f"el campo '{key}' debe ser texto")
        if not record['id'] or not record['label']:
            fail("'id' y 'label' no pueden estar vacíos")
        entities = record.get('entities', [])
        if not isinstance(entities, list) or not all(isinstance(e, str) for e in entities):
            fail("'entities' debe ser una lista de textos")
        cluster_id = record.get('cluster_id')
        if cluster_id is not None and (not isinstance(cluster_id, int) or isinstance(cluster_id, bool)):
            fail("'cluster_id' debe ser entero")
        topic = record.get('topic')
        if topic is not None and not isinstance(topic, str):
            fail("'topic' debe ser texto")
        return cls(record['id'], record['text'], record['label'], tuple(entities), cluster_id, topic)


@dataclass(frozen=True)
class SyntheticConfig:
    task: str = 'sentiment'
    n_train: int = 4000
    n_test: int = 1000
    n_entities: int = 10
    entity_rate: float = 0.5
    label_balance: float = 0.5
    seed: int = 0


def entity_bank(n_entities: int) -> List[str]:
    if n_entities < 0:
        raise ConfigError("n_entities debe ser >= 0")
    names = list(_ENTITY_NAMES[:n_entities])
    names += [f'entity{i}' for i in range(len(names), n_entities)]
    return names


def _balanced_labels(size: int, labels: Sequence[str], balance: float, rng: np.random.Generator) -> List[str]:
    if len(labels) == 2:
        if not 0.0 <= balance <= 1.0:
            raise ConfigError(f"label_balance debe estar en [0, 1], se recibió {balance}")
        n_second = int(round(size * balance))
        pool = [labels[0]] * (size - n_second) + [labels[1]] * n_second
    else:
        pool = [labels[i % len(labels)] for i in range(size)]
    return [pool[i] for i in rng.permutation(size)]


def _sentiment_example(idx: str, label: str, entity: Optional[str], rng: np.random.Generator) -> Example:
    words = _POSITIVE if label == 'positive' else _NEGATIVE
    sent, sent2 = rng.choice(words, size=2, replace=False)
    templates = _ENTITY_TEMPLATES if entity else _PLAIN_TEMPLATES
    template = templates[int(rng.integers(len(templates)))]
    text = template.format(filler=_FILLERS[int(rng.integers(len(_FILLERS)))],
                           noun=_NOUNS[int(rng.integers(len(_NOUNS)))],
                           sent=sent, sent2=sent2, entity=entity or '')
    return Example(idx, text, label, (entity,) if entity else ())


def _mcqa_answer(subject: str) -> str:
    subjects = _MCQA_SUBJECTS['hazard'] + _MCQA_SUBJECTS['science']
    return _MCQA_ANSWERS[subjects.index(subject) % len(_MCQA_ANSWERS)]


def _mcqa_example(idx: str, label: str, rng: np.random.Generator) -> Example:
    topic = 'hazard' if rng.random() < 0.5 else 'science'
    subjects = _MCQA_SUBJECTS[topic]
    subject = subjects[int(rng.integers(len(subjects)))]
    answer = _mcqa_answer(subject)
    distractors = [w for w in _MCQA_ANSWERS if w != answer]
    choices = list(rng.choice(distractors, size=3, replace=False))
    choices.insert(MCQA_LABELS.index(label), answer)
    text = (f"question : which word goes with {subject} ? "
            + ' '.join(f"{letter.lower()} ) {c}" for letter, c in zip(MCQA_LABELS, choices)))
    return Example(idx, text, label, (), None, topic)


def generate_synthetic(size: int, n_entities: int = 10, label_balance: float = 0.5, seed: int = 0,
                       task: str = 'sentiment', entity_rate: float = 0.5, id_prefix: str = 'ex') -> List[Example]:
    """
    Genera un corpus determinista.
    Sentimiento: frases de plantilla cuya etiqueta se deduce de las palabras
    de sentimiento; una fracción entity_rate menciona una entidad del banco.
    MCQA: preguntas de plantilla con cuatro opciones y etiqueta A-D.
    """
    if size < 0:
        raise ConfigError("size debe ser >= 0")
    rng = substream(seed, 'data')
    if task == 'sentiment':
        entities = entity_bank(n_entities)
        labels = _balanced_labels(size, SENTIMENT_LABELS, label_balance, rng)
        out = []
        for i, label in enumerate(labels):
            entity = None
            if entities and rng.random() < entity_rate:
                entity = entities[int(rng.integers(len(entities)))]
            out.append(_sentiment_example(f'{id_prefix}-{i:05d}', label, entity, rng))
        return out
    if task == 'mcqa':
        labels = _balanced_labels(size, MCQA_LABELS, label_balance, rng)
        return [_mcqa_example(f'{id_prefix}-{i:05d}', label, rng) for i, label in enumerate(labels)]
    raise ConfigError(f"Tarea desconocida: {task}")


def generate_train_test(config: SyntheticConfig) -> Tuple[List[Example], List[Example], List[str]]:
    """Train y test de las mismas plantillas; las semillas se separan para no repetir ejemplos."""
    common = dict(n_entities=config.n_entities, label_balance=config.label_balance,
                  task=config.task, entity_rate=config.entity_rate)
    train = generate_synthetic(config.n_train, seed=config.seed, id_prefix='tr', **common)
    test = generate_synthetic(config.n_test, seed=config.seed + 1_000_003, id_prefix='te', **common)
    entities = entity_bank(config.n_entities) if config.task == 'sentiment' else []
    logger.info(f"[DATA] Generados {len(train)} train / {len(test)} test ({config.task}, seed={config.seed})")
    return train, test, entities


def task_labels(examples: Sequence[Example]) -> Tuple[str, ...]:
    return tuple(sorted({ex.label for ex in examples}))


def load_jsonl(path) -> List[Example]:
    path = str(path)
    examples, seen = [], set()
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetValidationError(f"JSON inválido ({exc.msg})", line_number, path) from None
            example = Example.from_record(record, line_number, path)
            if example.id in seen:
                raise DatasetValidationError(f"id duplicado '{example.id}'", line_number, path)
            seen.add(example.id)
            examples.append(example)
    return examples


def save_jsonl(path, examples: Sequence[Example]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for ex in examples:
            f.write(json.dumps(ex.to_record(), ensure_ascii=False, sort_keys=True) + '\n')


def load_lexicon(path) -> List[str]:
    with open(path, 'r', encoding='utf-8') as f:
        return [line.strip() for line in f if line.strip()]


def save_lexicon(path, entities: Sequence[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(''.join(f'{e}\n' for e in entities), encoding='utf-8')


# --- batching ---------------------------------------------------------------

def iter_batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
    """Índices en batches; barajados si se pasa rng."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def interleaved_batches(n_forget: int, n_retain: int, batch_size: int,
                        rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """
    Una época: un batch de olvido y uno de retención por paso.
    Los batches de retención salen de un flujo cíclico que se rebaraja al
    agotarse; si no hay ejemplos de olvido la época recorre la retención.
    """
    empty = np.zeros(0, dtype=np.int64)
    n_steps = math.ceil(n_forget / batch_size) if n_forget else math.ceil(n_retain / batch_size)
    forget_order = rng.permutation(n_forget)
    retain_order, cursor = rng.permutation(n_retain), 0
    for step in range(n_steps):
        forget = forget_order[step * batch_size:(step + 1) * batch_size] if n_forget else empty
        retain = empty
        if n_retain:
            take = []
            while len(take) < min(batch_size, n_retain):
                if cursor == n_retain:
                    retain_order, cursor = rng.permutation(n_retain), 0
                needed = min(batch_size, n_retain) - len(take)
                chunk = retain_order[cursor:cursor + needed]
                take.extend(chunk.tolist())
                cursor += len(chunk)
            retain = np.asarray(take, dtype=np.int64)
        yield forget, retain

