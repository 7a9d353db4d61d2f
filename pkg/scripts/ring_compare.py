"""Three-mode comparison on the 4-agent ring.

Writes out/ring4_compare.csv (average goal distance per mode and the
adaptive mean zeta per step) plus the verdict JSON, then prints the verdict.

    python scripts/ring_compare.py [--out-dir out]
"""
import sys
from pathlib import Path

from deadlock_free.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "ring4.yaml"

if __name__ == "__main__":
    sys.exit(main(["compare", "--config", str(CONFIG), *sys.argv[1:]]))
