"""
Language Model Module
Transformer decoder-only pequeño (pre-norm) sobre el motor autodiff.

Flujo:
    ids -> embed -> [prompt opcional] -> + posiciones -> bloques causales
        -> layer norm final -> cabeza de salida (sin bias)

La clasificación se hace como predicción de siguiente token: la etiqueta se
lee en la última posición de la entrada y la distribución se restringe a los
tokens de etiqueta Y ∪ Ȳ.
"""
import hashlib
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor, no_grad
from core.errors import ConfigError, ContextOverflowError, ShapeError
from core.logger import get_logger
from core.seeding import substream
from vocabulary import Vocabulary

logger = get_logger(__name__)

MODEL_PRESETS = {
    'tiny': {'d_model': 16, 'n_layers': 1, 'n_heads': 2},
    'small': {'d_model': 32, 'n_layers': 2, 'n_heads': 2},
    'base': {'d_model': 64, 'n_layers': 4, 'n_heads': 4},
    'large': {'d_model': 128, 'n_layers': 4, 'n_heads': 8},
}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    context_length: int = 128
    init_std: float = 0.02

    def __post_init__(self):
        if self.vocab_size < 1 or self.d_model < 1 or self.n_layers < 0 or self.n_heads < 1:
            raise ConfigError(f"Dimensiones de modelo inválidas: {self}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} no es divisible por n_heads={self.n_heads}")
        if self.context_length < 1:
            raise ConfigError("context_length debe ser >= 1")

    @classmethod
    def from_preset(cls, name: str, vocab_size: int, **overrides) -> 'ModelConfig':
        if name not in MODEL_PRESETS:
            raise ConfigError(f"Preset de modelo desconocido: {name} (válidos: {', '.join(MODEL_PRESETS)})")
        values = dict(MODEL_PRESETS[name])
        values.update({k: v for k, v in overrides.items() if v})
        return cls(vocab_size=vocab_size, **values)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> Dict:
        return asdict(self)


class ModelParams:
    """Tensores con nombre del modelo; `frozen` controla requires_grad de todos."""

    def __init__(self, tensors: Dict[str, Tensor], frozen: bool = False):
        self.tensors = dict(tensors)
        self.frozen = False
        if frozen:
            self.freeze()
        else:
            self.unfreeze()

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> 'ModelParams':
        d, std = config.d_model, config.init_std
        # proyecciones residuales escaladas por profundidad
        resid_std = std / np.sqrt(2.0 * max(config.n_layers, 1))

        def normal(shape, s=std):
            return rng.normal(0.0, s, size=shape)

        tensors = {
            'tok_emb': normal((config.vocab_size, d)),
            'pos_emb': normal((config.context_length, d)),
        }
        for i in range(config.n_layers):
            p = f'blocks.{i}.'
            tensors.update({
                p + 'ln1.g': np.ones(d), p + 'ln1.b': np.zeros(d),
                p + 'attn.wq': normal((d, d)), p + 'attn.wk': normal((d, d)),
                p + 'attn.wv': normal((d, d)), p + 'attn.wo': normal((d, d), resid_std),
                p + 'ln2.g': np.ones(d), p + 'ln2.b': np.zeros(d),
                p + 'mlp.w1': normal((d, 4 * d)), p + 'mlp.b1': np.zeros(4 * d),
                p + 'mlp.w2': normal((4 * d, d), resid_std), p + 'mlp.b2': np.zeros(d),
            })
        tensors.update({
            'ln_f.g': np.ones(d), 'ln_f.b': np.zeros(d),
            'head': normal((d, config.vocab_size)),
        })
        return cls({name: Tensor(value, name=name) for name, value in tensors.items()})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def freeze(self) -> None:
        for t in self.tensors.values():
            t.requires_grad = False
            t.grad = None
        self.frozen = True

    def unfreeze(self) -> None:
        for t in self.tensors.values():
            t.requires_grad = True
        self.frozen = False

    def copy(self, frozen: bool = False) -> 'ModelParams':
        return ModelParams({n: Tensor(t.data.copy(), name=n) for n, t in self.tensors.items()}, frozen=frozen)

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def fingerprint(self) -> str:
        """SHA-256 sobre nombres, formas y bytes de todos los tensores."""
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            data = np.ascontiguousarray(self.tensors[name].data, dtype='<f8')
            h.update(name.encode('utf-8'))
            h.update(repr(data.shape).encode('utf-8'))
            h.update(data.tobytes())
        return h.hexdigest()

    def arrays(self) -> Dict[str, np.ndarray]:
        return {n: t.data for n, t in self.tensors.items()}


class LanguageModel:
    """Modelo de lenguaje causal con lectura de etiquetas en la última posición."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: ModelParams):
        if config.vocab_size != len(vocab):
            raise ShapeError("vocab_size del modelo distinto al vocabulario", (config.vocab_size,), (len(vocab),))
        expected = (len(vocab), config.d_model)
        if params['tok_emb'].shape != expected:
            raise ShapeError("Tabla de embeddings incompatible con la configuración", params['tok_emb'].shape, expected)
        self.config = config
        self.vocab = vocab
        self.params = params
        self._label_ids = np.asarray(vocab.label_ids, dtype=np.int64)

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocabulary, seed: int) -> 'LanguageModel':
        params = ModelParams.initialize(config, substream(seed, 'model'))
        logger.info(f"Modelo inicializado: d={config.d_model} capas={config.n_layers} "
                    f"cabezas={config.n_heads} V={config.vocab_size} params={params.num_parameters():,}")
        return cls(config, vocab, params)

    def clone(self, frozen: bool = False) -> 'LanguageModel':
        return LanguageModel(self.config, self.vocab, self.params.copy(frozen=frozen))

    @property
    def label_ids(self) -> np.ndarray:
        return self._label_ids

    # --- entradas ---------------------------------------------------------

    def encode_texts(self, texts: Sequence[str]) -> List[List[int]]:
        return [self.vocab.encode(t) for t in texts]

    def pad_batch(self, sequences: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
        """Relleno a la derecha con <pad>; devuelve (ids (B, n_max), longitudes (B,))."""
        lengths = np.asarray([len(s) for s in sequences], dtype=np.int64)
        if lengths.size == 0 or lengths.min() < 1:
            raise ShapeError("Cada secuencia necesita al menos un token", lengths.shape)
        ids = np.full((len(sequences), int(lengths.max())), self.vocab.pad_id, dtype=np.int64)
        for i, seq in enumerate(sequences):
            ids[i, :len(seq)] = seq
        return ids, lengths

    def embed(self, ids) -> Tensor:
        """Filas de la tabla de embeddings para una matriz de ids."""
        return F.embedding_lookup(self.params['tok_emb'], ids)

    # --- forward ----------------------------------------------------------

    def _attention(self, x: Tensor, prefix: str, mask: np.ndarray) -> Tensor:
        b, m, d = x.shape
        h, hd = self.config.n_heads, self.config.head_dim

        def heads(w: str) -> Tensor:
            proj = F.matmul(x, self.params[prefix + w])
            return F.permute(F.reshape(proj, (b, m, h, hd)), (0, 2, 1, 3))

        q, k, v = heads('attn.wq'), heads('attn.wk'), heads('attn.wv')
        scores = F.scale(F.matmul(q, F.permute(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        weights = F.softmax(F.masked_fill(scores, mask, -np.inf), axis=-1)
        ctx = F.reshape(F.permute(F.matmul(weights, v), (0, 2, 1, 3)), (b, m, d))
        return F.matmul(ctx, self.params[prefix + 'attn.wo'])

    def _mlp(self, x: Tensor, prefix: str) -> Tensor:
        hidden = F.gelu(F.add(F.matmul(x, self.params[prefix + 'mlp.w1']), self.params[prefix + 'mlp.b1']))
        return F.add(F.matmul(hidden, self.params[prefix + 'mlp.w2']), self.params[prefix + 'mlp.b2'])

    def forward_hidden(self, embs: Tensor) -> Tensor:
        """
        Estados ocultos finales (tras ln_f) para embeddings de entrada.
        Args:
            embs: (m, d) o (B, m, d); las posiciones se suman aquí
        Returns:
            Tensor con la misma forma que embs
        """
        squeeze = embs.ndim == 2
        x = F.reshape(embs, (1,) + embs.shape) if squeeze else embs
        if x.ndim != 3 or x.shape[-1] != self.config.d_model:
            raise ShapeError("forward espera (B, m, d)", x.shape, ('B', 'm', self.config.d_model))
        m = x.shape[1]
        if m > self.config.context_length:
            raise ContextOverflowError(f"Secuencia de {m} posiciones excede el contexto de {self.config.context_length}")
        x = F.add(x, F.embedding_lookup(self.params['pos_emb'], np.arange(m)))
        mask = np.triu(np.ones((m, m), dtype=bool), k=1)
        for i in range(self.config.n_layers):
            p = f'blocks.{i}.'
            x = F.add(x, self._attention(F.layer_norm(x, self.params[p + 'ln1.g'], self.params[p + 'ln1.b']), p, mask))
            x = F.add(x, self._mlp(F.layer_norm(x, self.params[p + 'ln2.g'], self.params[p + 'ln2.b']), p))
        x = F.layer_norm(x, self.params['ln_f.g'], self.params['ln_f.b'])
        return F.reshape(x, x.shape[1:]) if squeeze else x

    def forward_embeddings(self, embs: Tensor) -> Tensor:
        """Logits sobre todo el vocabulario: (m, V) o (B, m, V)."""
        return F.matmul(self.forward_hidden(embs), self.params['head'])

    def _inputs(self, sequences: Sequence[Sequence[int]], bank) -> Tuple[Tensor, np.ndarray]:
        ids, lengths = self.pad_batch(sequences)
        x = self.embed(ids)
        offset = 0
        if bank is not None:
            from prompt_unlearner import prepend
            x = prepend(bank, x, context_length=self.config.context_length)
            offset = bank.p
        return x, lengths - 1 + offset

    def final_hidden(self, sequences: Sequence[Sequence[int]], bank=None) -> Tensor:
        """Estado oculto en la posición de lectura de la etiqueta: (B, d)."""
        x, last = self._inputs(sequences, bank)
        return F.gather_rows(self.forward_hidden(x), last)

    def label_logits(self, sequences: Sequence[Sequence[int]], bank=None) -> Tensor:
        """Logits restringidos a Y ∪ Ȳ (ordenados por id de token): (B, L)."""
        hidden = self.final_hidden(sequences, bank)
        return F.matmul(hidden, F.select_columns(self.params['head'], self._label_ids))

    def predict_batch(self, sequences: Sequence[Sequence[int]], bank=None,
                      batch_size: int = 64) -> Tuple[np.ndarray, np.ndarray]:
        """
        Predicción por argmax (empates -> id de token menor).
        Returns:
            (ids de token predichos (N,), probabilidades (N, L))
        """
        preds, probs = [], []
        with no_grad():
            for start in range(0, len(sequences), batch_size):
                logits = self.label_logits(sequences[start:start + batch_size], bank).data
                z = logits - logits.max(axis=-1, keepdims=True)
                p = np.exp(z)
                p /= p.sum(axis=-1, keepdims=True)
                probs.append(p)
                preds.append(self._label_ids[np.argmax(logits, axis=-1)])
        if not preds:
            return np.zeros(0, dtype=np.int64), np.zeros((0, len(self._label_ids)))
        return np.concatenate(preds), np.concatenate(probs)

    def predict_label(self, tokens: Sequence[int], bank=None) -> Tuple[int, np.ndarray]:
        pred, probs = self.predict_batch([list(tokens)], bank)
        return int(pred[0]), probs[0]

    def hidden_states(self, sequences: Sequence[Sequence[int]], bank=None, batch_size: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for start in range(0, len(sequences), batch_size):
                out.append(self.final_hidden(sequences[start:start + batch_size], bank).data)
        return np.concatenate(out) if out else np.zeros((0, self.config.d_model))

    def pooled_states(self, sequences: Sequence[Sequence[int]], batch_size: int = 64) -> np.ndarray:
        """Media de los estados ocultos finales sobre las posiciones reales (sin <pad>)."""
        out = []
        with no_grad():
            for start in range(0, len(sequences), batch_size):
                chunk = sequences[start:start + batch_size]
                ids, lengths = self.pad_batch(chunk)
                hidden = self.forward_hidden(self.embed(ids)).data
                mask = (np.arange(ids.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
                out.append((hidden * mask[:, :, None]).sum(axis=1) / lengths[:, None])
        return np.concatenate(out) if out else np.zeros((0, self.config.d_model))
