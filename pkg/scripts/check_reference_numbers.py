"""Recompute net short-run, long-run, mean lag and half-life for reference coefficient sets.

    python3 scripts/check_reference_numbers.py [tests/data/reference_dynamics.json]
"""

import json
import sys
from pathlib import Path

import numpy as np

from panelardl.effects import half_life, lag_weights, mean_lag, mean_lag_closed_form


def main():
    path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "tests" / "data" / "reference_dynamics.json"
    cases = json.loads(path.read_text())["cases"]
    head = f"{'case':>4}  {'net SR':>8}  {'LR':>8}  {'mean lag':>8}  {'closed':>8}  {'target':>8}  {'half-life':>9}  {'target':>8}"
    print(head)
    print("-" * len(head))
    ok = True
    for c in cases:
        beta, lam = np.array(c["beta"]), np.array(c["lam"])
        phi = lag_weights(beta, lam)
        ml, closed, hl = mean_lag(phi), mean_lag_closed_form(beta, lam), half_life(phi)
        lr = beta.sum() / (1 - lam.sum())
        ok &= abs(ml - c["mean_lag"]) <= 0.1 and hl == c["half_life"]
        print(f"{c['case']:>4}  {beta.sum():8.4f}  {lr:8.4f}  {ml:8.3f}  {closed:8.3f}  {c['mean_lag']:8.1f}  {hl:9d}  {c['half_life']:8d}")
    print("all within 0.1 quarters and exact half-lives" if ok else "MISMATCH")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
