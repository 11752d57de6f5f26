"""Permite `python -m qpump <subcomando>`"""

import sys

from qpump.cli import main

if __name__ == "__main__":
    sys.exit(main())
