"""
Laboratorio de Imitación AEAIL

Aprendizaje por imitación adversarial con recompensa basada en auto-encoder:
la recompensa 1/(1+AE) se entrena con un objetivo tipo Wasserstein y guía a
una política gaussiana optimizada con TRPO en entornos de control de juguete.
"""

from .settings import VERSION

__version__ = VERSION
