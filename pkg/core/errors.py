"""
Excepciones del proyecto.
Todas heredan de SpulError; las que tienen un equivalente natural en Python
(ValueError, IndexError) también heredan de él.
"""
from typing import Any, Optional


class SpulError(Exception):
    """Base de todos los errores del pipeline."""


class ShapeError(SpulError, ValueError):
    """Dimensiones incompatibles entre tensores."""

    def __init__(self, message: str, *shapes: Any):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class VocabIndexError(SpulError, IndexError):
    """Índice de token o de clase fuera de rango."""


class ConfigError(SpulError, ValueError):
    """Configuración inválida o clave desconocida."""


class ContextOverflowError(SpulError, ValueError):
    """La secuencia (prompt + texto) excede la longitud de contexto."""


class IntegrityError(SpulError):
    """Violación de un invariante de datos (etiquetas genéricas, particiones)."""


class DatasetValidationError(SpulError, ValueError):
    """Registro JSONL inválido."""

    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line_number is not None:
            where += f":{line_number}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line_number = line_number
        self.path = path


class DivergenceError(SpulError, ArithmeticError):
    """Pérdida no finita durante el entrenamiento."""

    def __init__(self, message: str, last_good: Any = None, step: Optional[int] = None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step


class ArtifactMissingError(SpulError, FileNotFoundError):
    """Falta un artefacto de entrada; incluye una sugerencia para generarlo."""

    def __init__(self, path: str, hint: str):
        super().__init__(f"No existe {path}. {hint}")
        self.path = path
        self.hint = hint
