"""
Registro de entrenamiento por paso y por época.
Lo comparten el entrenamiento base, SPUL y los baselines; de aquí salen el
reporte de eficiencia y las tablas del ledger de corridas.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np


@dataclass
class StepRecord:
    epoch: int
    step: int
    total: float
    components: Dict[str, float] = field(default_factory=dict)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    seconds: float
    steps: int
    components: Dict[str, float] = field(default_factory=dict)


@dataclass
class TrainingLog:
    method: str
    trainable_params: int = 0
    total_params: int = 0
    steps: List[StepRecord] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    note: Optional[str] = None

    def add_step(self, epoch: int, step: int, total: float, **components: float) -> None:
        self.steps.append(StepRecord(epoch, step, float(total), {k: float(v) for k, v in components.items()}))

    def close_epoch(self, epoch: int, seconds: float) -> EpochRecord:
        """Cierra la época con la media de los pasos registrados en ella."""
        records = [s for s in self.steps if s.epoch == epoch]
        mean = float(np.mean([s.total for s in records])) if records else float('nan')
        keys = records[0].components.keys() if records else []
        components = {k: float(np.mean([s.components[k] for s in records])) for k in keys}
        record = EpochRecord(epoch, mean, float(seconds), len(records), components)
        self.epochs.append(record)
        return record

    @property
    def epoch_seconds(self) -> List[float]:
        return [e.seconds for e in self.epochs]

    def to_dict(self) -> Dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding='utf-8')
