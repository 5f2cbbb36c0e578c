"""
Sweep Runner Module
Barridos de hiperparámetros sobre artefactos ya generados (datos, base,
partición). Cada celda entrena un prompt (o un baseline si la grilla incluye
`method`) y aporta una fila a reports/sweep.csv.

    alpha=0.1,0.5,1.0 beta=0,0.1,0.5,1.0   -> 12 celdas (producto cruzado)
    p=10..50                               -> p = 10, 20, 30, 40, 50
    p=10..50:5                             -> paso 5
    tau=0.25,0.5,1.0
    method=ga,ga-gd lr=0.00001,0.0001
"""
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from baseline_unlearner import BASELINE_METHODS
from core.config import RunConfig
from core.errors import ConfigError
from core.logger import get_logger

logger = get_logger(__name__)

SWEEP_AXES = {'alpha': float, 'beta': float, 'p': int, 'tau': float, 'lr': float, 'seed': int,
              'epochs': int, 'method': str}
DEFAULT_RANGE_STEP = 10


@dataclass(frozen=True)
class SweepCell:
    index: int
    params: Tuple[Tuple[str, Any], ...]

    @property
    def values(self) -> Dict[str, Any]:
        return dict(self.params)

    @property
    def tag(self) -> str:
        return f'sweep-{self.index:03d}'

    @property
    def label(self) -> str:
        return ' '.join(f'{k}={v}' for k, v in self.params)


def _parse_values(axis: str, text: str) -> List[Any]:
    cast = SWEEP_AXES[axis]
    if '..' in text:
        if cast is not int:
            raise ConfigError(f"Los rangos A..B sólo valen para ejes enteros ({axis})")
        bounds, _, step = text.partition(':')
        start, _, stop = bounds.partition('..')
        try:
            start, stop, step = int(start), int(stop), int(step) if step else DEFAULT_RANGE_STEP
        except ValueError:
            raise ConfigError(f"Rango inválido: {axis}={text}") from None
        if step <= 0 or stop < start:
            raise ConfigError(f"Rango inválido: {axis}={text}")
        return list(range(start, stop + 1, step))
    values = []
    for item in text.split(','):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(cast(item))
        except ValueError:
            raise ConfigError(f"Valor inválido en la grilla: {axis}={item}") from None
    if not values:
        raise ConfigError(f"El eje {axis} no tiene valores")
    return values


def parse_grid(specs: Sequence[str]) -> Dict[str, List[Any]]:
    """['alpha=0.1,0.5', 'p=10..50:10'] -> {'alpha': [0.1, 0.5], 'p': [10, 20, 30, 40, 50]}"""
    axes: Dict[str, List[Any]] = {}
    for item in specs:
        axis, sep, text = item.partition('=')
        axis = axis.strip()
        if not sep:
            raise ConfigError(f"Eje de grilla sin '=': {item}")
        if axis not in SWEEP_AXES:
            raise ConfigError(f"Eje de grilla desconocido: {axis} (válidos: {', '.join(SWEEP_AXES)})")
        if axis in axes:
            raise ConfigError(f"Eje repetido en la grilla: {axis}")
        axes[axis] = _parse_values(axis, text)
    if not axes:
        raise ConfigError("La grilla está vacía")
    for method in axes.get('method', []):
        if method not in BASELINE_METHODS:
            raise ConfigError(f"Método desconocido en la grilla: {method}")
    return axes


def expand_grid(axes: Dict[str, List[Any]]) -> List[SweepCell]:
    names = list(axes)
    return [SweepCell(i, tuple(zip(names, combo)))
            for i, combo in enumerate(itertools.product(*(axes[n] for n in names)))]


def run_cell(payload: Tuple[Dict[str, Any], str, SweepCell]) -> Dict[str, Any]:
    """Corre una celda; nunca lanza: los fallos vuelven como fila con status='failed'."""
    from core.pipeline import UnlearnPipeline

    values, output_dir, cell = payload
    params = cell.values
    row: Dict[str, Any] = {'cell': cell.index, **params}
    try:
        method = params.get('method')
        overrides = {k: v for k, v in params.items() if k not in ('method', 'lr')}
        if 'lr' in params:
            overrides['baseline_lr' if method else 'lr'] = params['lr']
        config = RunConfig(dict(values)).replace(**overrides)
        pipeline = UnlearnPipeline(config, output_dir, record=False)
        if method:
            lr_grid = [params['lr']] if 'lr' in params else None
            _, report = pipeline.baseline(method, lr_grid=lr_grid, tag=cell.tag)
        else:
            _, report = pipeline.unlearn(tag=cell.tag)
        row.update(method=report.method, trainable_params=report.trainable_params,
                   config_digest=report.config_digest, seed=report.seed, status='ok', error='')
        row.update(report.flat())
    except Exception as e:
        logger.error(f"[SWEEP] Celda {cell.index} ({cell.label}) falló: {e}")
        row.update(status='failed', error=f"{type(e).__name__}: {e}")
    return row


def run_sweep(config: RunConfig, output_dir: str, grid_specs: Sequence[str],
              workers: Optional[int] = None) -> Tuple[pd.DataFrame, int]:
    """
    Ejecuta todas las celdas (en paralelo si workers > 1) y escribe reports/sweep.csv.
    Returns:
        (tabla con una fila por celda, número de celdas fallidas)
    """
    cells = expand_grid(parse_grid(grid_specs))
    logger.info(f"[SWEEP] {len(cells)} celdas: {' '.join(grid_specs)}")
    payloads = [(config.values, output_dir, cell) for cell in cells]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(run_cell, payloads))
    else:
        rows = [run_cell(p) for p in payloads]

    table = pd.DataFrame(rows).sort_values('cell').reset_index(drop=True)
    path = Path(output_dir) / 'reports' / 'sweep.csv'
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)
    failures = int((table['status'] != 'ok').sum())
    logger.info(f"[SWEEP] Tabla escrita en {path} ({len(table) - failures} ok, {failures} fallidas)")
    return table, failures
