#!/usr/bin/env python3
"""FT / KD / IKD test accuracy over seeds (thin wrapper around ``ikd compare``).

    python scripts/compare_modes.py --seeds 10 --out runs/compare [any ikd compare flags]
"""

import sys

from ikd import cli

if __name__ == "__main__":
    sys.exit(cli.main(["compare", *sys.argv[1:]]))
