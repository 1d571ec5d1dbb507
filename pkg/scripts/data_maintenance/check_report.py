#!/usr/bin/env python3
"""
Script to re-check an experiment report against an independent Riccati solve
Usage: python scripts/data_maintenance/check_report.py results/report.json
"""

import json
import os
import sys

import numpy as np
import scipy.linalg as la

sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from src.lti_sim import LtiSystem
from src.solver_core import solve_dare


def main():
    if len(sys.argv) != 2:
        print(__doc__)
        sys.exit(2)

    with open(sys.argv[1]) as f:
        report = json.load(f)

    plant = report["plant"]
    system = LtiSystem(A=plant["A"], B=plant["B"], C=plant["C"])
    Q, R = np.asarray(plant["Q"]), np.asarray(plant["R"])
    Qx = system.C.T @ Q @ system.C
    x_start = np.asarray(report["x_start"])

    oracle = solve_dare(system.A, system.B, Qx, R).cost(x_start)
    scipy_cost = float(x_start @ la.solve_discrete_are(system.A, system.B, Qx, R) @ x_start)
    stored = report["oracle"]["cost"]

    print(f"Plant: {plant['name']} (n={system.n}, m={system.m}, p={system.p})")
    print("-" * 60)
    print(f"Stored oracle cost:     {stored:.12g}")
    print(f"Fixed-point DARE cost:  {oracle:.12g}")
    print(f"scipy DARE cost:        {scipy_cost:.12g}")

    ok = abs(oracle - stored) <= 1e-9 * max(1.0, abs(stored))
    for alg, run in report["runs"].items():
        learned = run["learned_cost"]
        gap = abs(learned - oracle) / oracle if oracle > 0 else abs(learned - oracle)
        print(f"{alg.upper()}: learned {learned:.12g}, relative gap {gap:.3e}")

    if not ok:
        print("✗ Stored oracle cost does not match the recomputed one")
        sys.exit(1)
    print("✓ Report is consistent")


if __name__ == "__main__":
    main()
