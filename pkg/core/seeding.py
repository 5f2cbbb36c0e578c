"""
Sub-streams de aleatoriedad derivados de una única semilla.
Cada componente (datos, init, asignación, batching...) recibe su propio
generador para que cambiar uno no altere los demás.
"""
import zlib

import numpy as np

STREAMS = ('data', 'split', 'model', 'init', 'assignment', 'batching', 'cluster', 'subsample')


def substream(seed: int, name: str) -> np.random.Generator:
    """Generador determinista para el sub-stream `name` de la semilla `seed`."""
    if name not in STREAMS:
        raise ValueError(f"Sub-stream desconocido: {name} (válidos: {', '.join(STREAMS)})")
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode('utf-8'))]))
