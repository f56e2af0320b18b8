"""FLOPS needed per method to reach a grid of mean dynamic cancellations.

Reads runs.csv from a results directory and prints the complexity/performance
trade-off as a table (one row per target, one column per method), plus the
WLMP-RLS to MBNN ratio where both reach the target.

    python scripts/tradeoff_table.py results/quick --step 2.5
"""
import argparse
import math
import sys
from pathlib import Path

import numpy as np

from fdsic import harness


def tradeoff(summary, targets):
    return {t: {m: harness.flops_at_cancellation(summary, m, t) for m in harness.METHODS} for t in targets}


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("results", type=Path)
    p.add_argument("--step", type=float, default=2.5, help="dB between targets")
    a = p.parse_args()
    summary = harness.summarize(harness.read_runs(a.results / "runs.csv"))
    dyn = [r.mean_dynamic_db for r in summary.rows if math.isfinite(r.mean_dynamic_db)]
    lo, hi = math.ceil(min(dyn) / a.step) * a.step, max(dyn)
    targets = np.arange(lo, hi + 1e-9, a.step)

    print("target_db," + ",".join(harness.METHODS) + ",rls_over_mbnn")
    for t, row in tradeoff(summary, targets).items():
        ratio = row["wlmp-rls"] / row["mbnn-ftrl"]
        cells = [f"{row[m]:.4g}" for m in harness.METHODS] + [f"{ratio:.3g}"]
        print(f"{t:g}," + ",".join(cells))
    return 0


if __name__ == "__main__":
    sys.exit(main())
