"""
Checkpoints Module
Contenedor binario determinista para modelos y prompts.

Formato:
    b'SPULCKPT' | versión (uint32 LE) | largo del header (uint64 LE)
    | header JSON (claves ordenadas, UTF-8) | blobs float64 LE concatenados

El header lleva la tabla de tensores (nombre, forma, offset) y los metadatos
de la corrida (digest de configuración, semilla, tipo, huella).
"""
import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from autodiff.tensor import Tensor
from core.errors import ArtifactMissingError, IntegrityError
from core.logger import get_logger
from language_model import LanguageModel, ModelConfig, ModelParams
from vocabulary import Vocabulary

logger = get_logger(__name__)

MAGIC = b'SPULCKPT'
FORMAT_VERSION = 1


def write_container(path, header: Dict, arrays: Dict[str, np.ndarray]) -> None:
    table, blobs, offset = [], [], 0
    for name in arrays:
        data = np.ascontiguousarray(arrays[name], dtype='<f8')
        table.append({'name': name, 'shape': list(data.shape), 'offset': offset})
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = dict(header, tensors=table)
    encoded = json.dumps(header, sort_keys=True, separators=(',', ':'), ensure_ascii=False).encode('utf-8')
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<IQ', FORMAT_VERSION, len(encoded)))
        f.write(encoded)
        for blob in blobs:
            f.write(blob)


def read_container(path) -> Tuple[Dict, Dict[str, np.ndarray]]:
    if not Path(path).exists():
        raise ArtifactMissingError(str(path), "Genera el checkpoint con el subcomando correspondiente.")
    raw = Path(path).read_bytes()
    start = len(MAGIC) + struct.calcsize('<IQ')
    if raw[:len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path} no es un checkpoint SPUL")
    if len(raw) < start:
        raise IntegrityError(f"{path} está truncado: falta el encabezado")
    version, header_len = struct.unpack_from('<IQ', raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise IntegrityError(f"Versión de checkpoint {version} no soportada (se esperaba {FORMAT_VERSION})")
    if start + header_len > len(raw):
        raise IntegrityError(f"{path} está truncado: header de {header_len} bytes, archivo de {len(raw)}")
    try:
        header = json.loads(raw[start:start + header_len].decode('utf-8'))
        table = header['tensors']
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise IntegrityError(f"Header ilegible en {path}: {e}") from None
    body = memoryview(raw)[start + header_len:]
    arrays = {}
    for entry in table:
        count = int(np.prod(entry['shape'], dtype=np.int64))
        offset = int(entry['offset'])
        if offset < 0 or offset + 8 * count > len(body):
            raise IntegrityError(f"{path} está truncado: el tensor {entry['name']} excede el archivo")
        if count == 0:
            arrays[entry['name']] = np.zeros(entry['shape'])
            continue
        data = np.frombuffer(body, dtype='<f8', count=count, offset=offset)
        arrays[entry['name']] = data.reshape(entry['shape']).astype(np.float64)
    return header, arrays


def save_model(path, model: LanguageModel, digest: str, seed: int, method: str = 'base', **extra) -> None:
    header = {
        'kind': 'model',
        'method': method,
        'config_digest': digest,
        'seed': seed,
        'model_config': model.config.to_dict(),
        'vocab': model.vocab.to_dict(),
        'fingerprint': model.params.fingerprint(),
        'extra': extra,
    }
    write_container(path, header, model.params.arrays())
    logger.info(f"[CKPT] Modelo '{method}' guardado en {path} (huella {header['fingerprint'][:12]})")


def load_model(path) -> Tuple[LanguageModel, Dict]:
    """Carga y valida la huella; el modelo queda congelado."""
    header, arrays = read_container(path)
    if header.get('kind') != 'model':
        raise IntegrityError(f"{path} no contiene un modelo")
    params = ModelParams({name: Tensor(value, name=name) for name, value in arrays.items()}, frozen=True)
    if params.fingerprint() != header['fingerprint']:
        raise IntegrityError(f"Huella de {path} no coincide: el checkpoint está corrupto")
    model = LanguageModel(ModelConfig(**header['model_config']), Vocabulary.from_dict(header['vocab']), params)
    return model, header


def save_prompt(path, bank, digest: str, **extra) -> None:
    header = {
        'kind': 'prompt',
        'p': bank.p,
        'd': bank.d,
        'seed': bank.seed,
        'init': bank.init,
        'config_digest': digest,
        'extra': extra,
    }
    write_container(path, header, {'phi': bank.phi.data})
    logger.info(f"[CKPT] Prompt p={bank.p} guardado en {path}")


def load_prompt(path):
    from prompt_unlearner import PromptBank
    header, arrays = read_container(path)
    if header.get('kind') != 'prompt':
        raise IntegrityError(f"{path} no contiene un prompt")
    phi = arrays['phi'].reshape(header['p'], header['d'])
    return PromptBank(Tensor(phi, requires_grad=True, name='phi'), seed=header['seed'], init=header['init']), header
