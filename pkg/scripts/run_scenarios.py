"""Run every shipped scenario through the CLI and print a one-line digest each.

    python3 scripts/run_scenarios.py [--out out] [--jobs 4] [--with-n20]

The N=20 enlarged-region grids take several minutes per radius on one core,
so they only run with --with-n20.
"""
import argparse
import csv
import json
import time
from pathlib import Path

import numpy as np

from swarmctl import cli
from swarmctl.region import superlevel_area

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SIMULATE = ["cs_pair_invariant", "total_control", "cs_sparse", "plateau_entry", "cd_conservation",
            "cd_sparse", "cd_counterexample", "cd_pair_escape", "leader_sweep"]
SWEEPS = [("cd_sparse", "control.M", "0.1,1,10,35"), ("leader_sweep", "control.q", "1.25,2,5")]


def digest(summary):
    f = summary["final"]
    parts = [f"t={f['t']:.2f}", f"V={f['V']:.3g}"]
    if "E" in f:
        parts.append(f"E={f['E']:.4g}")
    entry = summary["region_entry_time"]
    parts.append("no entry" if entry is None else f"entry at {entry:.2f}")
    return ", ".join(parts)


def grid_area(path, level=0.8):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    X = np.unique([float(r["X0"]) for r in rows])
    V = np.unique([float(r["V0"]) for r in rows])
    P = np.array([float(r["probability"]) for r in rows]).reshape(len(X), len(V))
    return superlevel_area(P, X, V, level)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--with-n20", action="store_true")
    args = ap.parse_args()
    root = Path(args.out)

    for name in SIMULATE:
        t0 = time.perf_counter()
        out = root / name
        rc = cli.main(["simulate", str(CONFIGS / f"{name}.json"), "--out", str(out)])
        summary = json.loads(next(out.glob("*_summary.json")).read_text())
        print(f"{name:20s} rc={rc} {digest(summary)} ({time.perf_counter() - t0:.1f}s)")

    for name, param, values in SWEEPS:
        out = root / f"{name}_sweep"
        cli.main(["sweep", str(CONFIGS / f"{name}.json"), "--param", param, "--values", values,
                  "--out", str(out)])
        with open(next(out.glob("*_sweep.csv")), newline="") as fh:
            for r in csv.DictReader(fh):
                print(f"  {param}={r['value']}: entry {r['region_entry_time'] or '-'}, rate {r['decay_rate']}")

    grids = ["region_n2"] + ([f"region_n20_R{R}" for R in (1, 2, 5)] if args.with_n20 else [])
    for name in grids:
        t0 = time.perf_counter()
        out = root / name
        cli.main(["region", str(CONFIGS / f"{name}.json"), "--jobs", str(args.jobs), "--out", str(out)])
        area = grid_area(next(out.glob("*_grid.csv")))
        print(f"{name:20s} 80% superlevel area {area:.2f} ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
