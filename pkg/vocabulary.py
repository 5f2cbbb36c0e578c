"""
Vocabulary Module
Tokenizador a nivel de palabra y mapa token <-> id con tokens reservados
para las etiquetas de la tarea (Y) y las etiquetas genéricas (Ȳ).
"""
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

from core.errors import IntegrityError, VocabIndexError

PAD, BOS, UNK = '<pad>', '<bos>', '<unk>'
SPECIAL_TOKENS = (PAD, BOS, UNK)

# palabras (unicode) o un signo de puntuación suelto
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def segment(text: str) -> List[str]:
    """Segmenta en palabras y puntuación, en minúsculas."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return ' '.join(segment(text))


def label_token(label: str) -> str:
    # los corchetes angulares nunca salen de segment(), así que no colisionan con texto
    return f'<label:{label}>'


@dataclass
class Vocabulary:
    tokens: List[str]
    task_labels: Tuple[str, ...]
    generic_labels: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.task_labels = tuple(self.task_labels)
        self.generic_labels = tuple(self.generic_labels)
        overlap = set(self.task_labels) & set(self.generic_labels)
        if overlap:
            raise IntegrityError(f"Las etiquetas genéricas deben ser disjuntas de las de la tarea: {sorted(overlap)}")
        if len(set(self.tokens)) != len(self.tokens):
            raise IntegrityError("Tokens duplicados en el vocabulario")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        for tok in SPECIAL_TOKENS:
            if tok not in self.index:
                raise IntegrityError(f"Falta el token especial {tok}")
        for label in self.task_labels + self.generic_labels:
            if label_token(label) not in self.index:
                raise IntegrityError(f"Falta el token de etiqueta {label_token(label)}")

    @classmethod
    def build(cls, texts: Iterable[str], task_labels: Sequence[str], generic_labels: Sequence[str],
              max_size: int = 2048) -> 'Vocabulary':
        """
        Construye el vocabulario desde un corpus.
        Las palabras se ordenan por frecuencia descendente y luego alfabéticamente;
        si no caben en max_size, las menos frecuentes pasan a <unk>.
        """
        reserved = list(SPECIAL_TOKENS) + [label_token(l) for l in task_labels] + [label_token(l) for l in generic_labels]
        if max_size < len(reserved):
            raise IntegrityError(f"max_size={max_size} no alcanza para {len(reserved)} tokens reservados")
        counts = Counter(tok for text in texts for tok in segment(text))
        words = sorted(counts, key=lambda w: (-counts[w], w))[:max_size - len(reserved)]
        return cls(reserved + sorted(words), task_labels, generic_labels)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def tokenize(self, text: str) -> List[int]:
        unk = self.unk_id
        return [self.index.get(tok, unk) for tok in segment(text)]

    def detokenize(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            if not 0 <= int(i) < len(self.tokens):
                raise VocabIndexError(f"Token id {i} fuera de rango [0, {len(self.tokens)})")
            out.append(self.tokens[int(i)])
        return ' '.join(out)

    def encode(self, text: str) -> List[int]:
        """Secuencia de entrada del modelo: <bos> + tokens."""
        return [self.bos_id] + self.tokenize(text)

    def label_id(self, label: str) -> int:
        try:
            return self.index[label_token(label)]
        except KeyError:
            raise VocabIndexError(f"Etiqueta desconocida: {label}") from None

    @property
    def label_ids(self) -> List[int]:
        """Ids de Y ∪ Ȳ en orden ascendente (el desempate del argmax depende de este orden)."""
        return sorted(self.label_id(l) for l in self.task_labels + self.generic_labels)

    def label_position(self, label: str) -> int:
        """Índice de la etiqueta dentro de la distribución restringida a label_ids."""
        return self.label_ids.index(self.label_id(label))

    def label_name(self, token_id: int) -> str:
        tok = self.tokens[int(token_id)]
        if not tok.startswith('<label:'):
            raise VocabIndexError(f"El token {tok} no es una etiqueta")
        return tok[len('<label:'):-1]

    def to_dict(self) -> Dict:
        return {
            'tokens': list(self.tokens),
            'task_labels': list(self.task_labels),
            'generic_labels': list(self.generic_labels),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Vocabulary':
        return cls(list(data['tokens']), tuple(data['task_labels']), tuple(data['generic_labels']))
