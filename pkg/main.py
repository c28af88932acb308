"""
TailNet script entry point.

Usage:
    python main.py <command> [options]

Commands: synth, prepare, train, eval, recommend (see `python main.py <command> -h`).

Example:
    python main.py synth --out events.csv
    python main.py prepare --input events.csv --out data.tlds
    python main.py train --data data.tlds --out model.tlnt --epochs 10
    python main.py eval --data data.tlds --model model.tlnt --method tailnet,pop --out report.csv
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
