#!/usr/bin/env python3
"""
QPUMP - Launcher
Ejecuta la línea de comandos sin instalar el paquete: `python run.py validate --quick`
"""

import sys
from pathlib import Path

# Agregar src al path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from qpump.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
