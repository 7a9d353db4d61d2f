"""Jittered rings for N = 4, 8, 12 with ten trials each, stopped at step 500.

Writes out/sweep_trials.csv and out/sweep_table.csv (mean/min/max of the
final average goal distance per N and mode).  Takes a few minutes.

    python scripts/scaling_sweep.py [--trials 10] [--out-dir out]
"""
import sys

from deadlock_free.cli import main

if __name__ == "__main__":
    sys.exit(main(["sweep", "--n-list", "4,8,12", *sys.argv[1:]]))
