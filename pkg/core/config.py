import hashlib
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv

from core.errors import ConfigError

load_dotenv()


class Config:
    OUTPUT_DIR = os.getenv('SPUL_OUTPUT_DIR', 'runs')
    DEFAULT_SEED = int(os.getenv('SPUL_SEED', 0))
    DB_NAME = os.getenv('SPUL_DB_NAME', 'runs.db')
    RUN_SLOW_TESTS = os.getenv('SPUL_RUN_SLOW', '0') == '1'


# Claves aceptadas en un archivo de configuración y sus valores por defecto.
# El tipo del valor por defecto define la coerción.
DEFAULTS: Dict[str, Any] = {
    'seed': Config.DEFAULT_SEED,
    'output_dir': Config.OUTPUT_DIR,
    # datos
    'task': 'sentiment',
    'n_train': 4000,
    'n_test': 1000,
    'n_entities': 10,
    'entity_rate': 0.5,
    'label_balance': 0.5,
    # partición
    'protocol': 'entities',
    'forget_entities': 2,
    'entity_lexicon': '',
    'n_clusters': 20,
    'forget_clusters': 1,
    'forget_topics': 'hazard',
    'generic_labels': 'neutral,unknown,none',
    'tau': 1.0,
    # modelo base
    'model_preset': 'base',
    'd_model': 0,
    'n_layers': 0,
    'n_heads': 0,
    'context_length': 128,
    'max_vocab': 2048,
    'base_epochs': 10,
    'base_lr': 0.001,
    'base_batch_size': 32,
    # SPUL
    'alpha': 1.0,
    'beta': 0.5,
    'p': 30,
    'lr': 0.0001,
    'epochs': 10,
    'batch_size': 32,
    'prompt_init': 'vocab',
    'optimizer': 'adam',
    'momentum': 0.0,
    'grad_clip': 0.0,
    # baselines
    'baseline_method': 'ga',
    'baseline_lr': 0.0001,
    'baseline_epochs': 1,
    'baseline_lr_grid': '0.00001,0.00005,0.0001',
    'retain_weight': 1.0,
    # evaluación
    'eval_batch_size': 64,
    'export_embeddings': True,
    'export_pca': True,
}

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def _coerce(key: str, value: Any) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"Clave de configuración desconocida: '{key}'")
    default = DEFAULTS[key]
    if value is None:
        raise ConfigError(f"La clave '{key}' no tiene valor")
    if isinstance(value, type(default)) and not (isinstance(default, float) and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"Valor inválido para '{key}': {value!r} (se esperaba {type(default).__name__})") from None
    return text


def parse_list(text: str) -> List[str]:
    return [item.strip() for item in str(text).split(',') if item.strip()]


@dataclass
class RunConfig:
    """
    Configuración de una corrida: valores por defecto, archivo key=value y
    overrides de línea de comandos, en ese orden de precedencia creciente.
    """
    values: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))
    source: Optional[str] = None

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> 'RunConfig':
        values = dict(DEFAULTS)
        if path:
            if not os.path.exists(path):
                raise ConfigError(f"No existe el archivo de configuración: {path}")
            for key, value in dotenv_values(path).items():
                key = cls._check_key(key)
                values[key] = _coerce(key, value)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            key = cls._check_key(key)
            values[key] = _coerce(key, value)
        config = cls(values, source=path)
        config.validate()
        return config

    @staticmethod
    def _check_key(key: str) -> str:
        if key not in DEFAULTS:
            raise ConfigError(f"Clave de configuración desconocida: '{key}'")
        return key

    def validate(self) -> None:
        v = self.values
        if v['alpha'] < 0 or v['beta'] < 0:
            raise ConfigError("alpha y beta deben ser >= 0")
        for key in ('lr', 'base_lr', 'baseline_lr'):
            if v[key] <= 0:
                raise ConfigError(f"{key} debe ser > 0")
        if v['epochs'] < 1 or v['baseline_epochs'] < 1 or v['base_epochs'] < 0:
            raise ConfigError("epochs y baseline_epochs deben ser >= 1; base_epochs >= 0")
        if v['p'] < 0:
            raise ConfigError("p debe ser >= 0")
        if not 0 < v['tau'] <= 1:
            raise ConfigError(f"tau debe estar en (0, 1], se recibió {v['tau']}")
        if v['task'] not in ('sentiment', 'mcqa'):
            raise ConfigError(f"Tarea desconocida: {v['task']}")
        if v['protocol'] not in ('entities', 'clusters', 'topic'):
            raise ConfigError(f"Protocolo desconocido: {v['protocol']}")
        if v['prompt_init'] not in ('vocab', 'gaussian'):
            raise ConfigError("prompt_init debe ser 'vocab' o 'gaussian'")
        if not parse_list(v['generic_labels']):
            raise ConfigError("generic_labels no puede estar vacío")

    def __getitem__(self, key: str) -> Any:
        return self.values[self._check_key(key)]

    def __getattr__(self, key: str) -> Any:
        values = self.__dict__.get('values')
        if values is not None and key in values:
            return values[key]
        raise AttributeError(key)

    def replace(self, **changes) -> 'RunConfig':
        values = dict(self.values)
        for key, value in changes.items():
            key = self._check_key(key)
            values[key] = _coerce(key, value)
        config = RunConfig(values, source=self.source)
        config.validate()
        return config

    def canonical_lines(self) -> List[str]:
        # output_dir no forma parte de la identidad de la corrida
        return [f"{key}={self.values[key]!r}" for key in sorted(self.values) if key != 'output_dir']

    def digest(self) -> str:
        """Primeros 12 hex del SHA-256 sobre las líneas key=value ordenadas."""
        return hashlib.sha256('\n'.join(self.canonical_lines()).encode('utf-8')).hexdigest()[:12]

    def to_dict(self) -> Dict[str, Any]:
        return dict(sorted(self.values.items()))

    @property
    def generic_label_list(self) -> List[str]:
        return parse_list(self.values['generic_labels'])

    # --- sub-configuraciones ----------------------------------------------

    def synthetic_config(self):
        from dataset_builder import SyntheticConfig
        v = self.values
        return SyntheticConfig(task=v['task'], n_train=v['n_train'], n_test=v['n_test'],
                               n_entities=v['n_entities'], entity_rate=v['entity_rate'],
                               label_balance=v['label_balance'], seed=v['seed'])

    def model_config(self, vocab_size: int):
        from language_model import ModelConfig
        v = self.values
        return ModelConfig.from_preset(v['model_preset'], vocab_size, d_model=v['d_model'],
                                       n_layers=v['n_layers'], n_heads=v['n_heads'],
                                       context_length=v['context_length'])

    def base_training_config(self):
        from base_trainer import BaseTrainingConfig
        v = self.values
        return BaseTrainingConfig(epochs=v['base_epochs'], lr=v['base_lr'], batch_size=v['base_batch_size'],
                                  seed=v['seed'], optimizer=v['optimizer'], momentum=v['momentum'],
                                  grad_clip=v['grad_clip'])

    def unlearn_config(self):
        from prompt_unlearner import UnlearnConfig
        v = self.values
        return UnlearnConfig(alpha=v['alpha'], beta=v['beta'], p=v['p'], lr=v['lr'], epochs=v['epochs'],
                             batch_size=v['batch_size'], seed=v['seed'], init=v['prompt_init'],
                             optimizer=v['optimizer'], momentum=v['momentum'], grad_clip=v['grad_clip'])

    def baseline_config(self, method: Optional[str] = None, lr: Optional[float] = None):
        from baseline_unlearner import BaselineConfig
        v = self.values
        return BaselineConfig(method=method or v['baseline_method'], lr=lr or v['baseline_lr'],
                              epochs=v['baseline_epochs'], seed=v['seed'], batch_size=v['batch_size'],
                              retain_weight=v['retain_weight'], optimizer=v['optimizer'],
                              momentum=v['momentum'], grad_clip=v['grad_clip'])
