#!/usr/bin/env python3
"""Entry point shim: ``python extract.py --images DIR --out DIR ...``."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "src"))

from cooc_extractor.extract import main

if __name__ == "__main__":
    sys.exit(main())
