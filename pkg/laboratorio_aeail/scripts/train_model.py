#!/usr/bin/env python3
"""
Script para entrenar una configuración sobre varias semillas y reportar la
recompensa escalada final (media ± desviación)
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

# Agregar la raíz del proyecto al path para importar el paquete
sys.path.append(str(Path(__file__).resolve().parent.parent.parent))

from laboratorio_aeail.serializers import ConfigSerializer
from laboratorio_aeail.services import train
from laboratorio_aeail.settings import LOG_LEVEL

logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)


def main(argv=None):
    """Función principal para entrenar sobre varias semillas"""
    parser = argparse.ArgumentParser(description="Entrena una configuración sobre varias semillas")
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--seeds", default="0,1,2", help="Semillas separadas por comas")
    args = parser.parse_args(argv)

    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        base = ConfigSerializer.load(args.config)
        logger.info(f"🤖 Iniciando entrenamiento de {base.env}/{base.reward} con semillas {seeds}...")

        scaled = []
        for seed in seeds:
            summary = train(base.model_copy(update={"seed": seed}))
            logger.info(f"✅ Semilla {seed}: recompensa escalada {summary.final_scaled_reward}")
            if summary.final_scaled_reward is not None:
                scaled.append(summary.final_scaled_reward)

        if scaled:
            logger.info(f"📊 Recompensa escalada final: {np.mean(scaled):.4f} ± {np.std(scaled):.4f}")
        logger.info("✅ Entrenamiento completado exitosamente!")
        return True

    except Exception as e:
        logger.error(f"❌ Error en entrenamiento: {e}")
        return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
