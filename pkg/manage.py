#!/usr/bin/env python
"""Utilidad de línea de comandos del laboratorio AEAIL."""
import sys


def main():
    """Ejecuta un subcomando del laboratorio."""
    try:
        from laboratorio_aeail.cli import main as cli_main
    except ImportError as exc:
        raise ImportError(
            "No se pudo importar laboratorio_aeail. ¿Están instaladas las dependencias "
            "de requirements.txt y el directorio del proyecto en PYTHONPATH?"
        ) from exc
    return cli_main(sys.argv[1:])


if __name__ == '__main__':
    sys.exit(main())
