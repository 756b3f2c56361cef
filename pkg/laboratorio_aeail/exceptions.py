"""
Excepciones del laboratorio
"""

from typing import Optional


class LaboratorioError(Exception):
    """Error base del laboratorio"""


class ShapeError(LaboratorioError, ValueError):
    """Dimensiones incompatibles entre entradas, redes o entornos"""


class NumericFaultError(LaboratorioError, ArithmeticError):
    """Valores no finitos; la ejecución se aborta, nunca se recortan en silencio"""

    def __init__(self, mensaje: str, iteration: Optional[int] = None):
        if iteration is not None:
            mensaje = f"{mensaje} (iteración {iteration})"
        super().__init__(mensaje)
        self.iteration = iteration


class ConfigError(LaboratorioError, ValueError):
    """Configuración inválida o con claves desconocidas"""


class UsageError(LaboratorioError, ValueError):
    """Uso incorrecto de la línea de comandos"""


class DemosNotFoundError(LaboratorioError, FileNotFoundError):
    """No existen demostraciones para la configuración pedida"""


class CheckpointFormatError(LaboratorioError, ValueError):
    """Archivo de checkpoint corrupto o de otra versión"""


class UnsupportedVariantError(LaboratorioError, ValueError):
    """La variante de recompensa no soporta la operación"""
