#!/usr/bin/env python3
"""Reproduce the simulation study: every scenario under the three designs.

Writes one output directory per (scenario, design, nmax) with metrics.json
and the CSV summaries, plus a combined table at the end.  With default
settings this is an hours-scale batch on one core; use --reps 100 for a
smoke pass.
"""

import argparse
import json
import pathlib
import sys
import time

from doseopt.cli import cmd_simulate


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="study-out")
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=20240801)
    ap.add_argument("--nmax", type=int, nargs="+", default=[60])
    ap.add_argument("--designs", nargs="+", default=["optimal", "naive", "nopk"])
    ap.add_argument("--scenarios", nargs="+", default=[f"scenario{i}" for i in range(1, 9)])
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    root = pathlib.Path(args.out)
    combined = []
    for nmax in args.nmax:
        for scen in args.scenarios:
            for design in args.designs:
                out_dir = root / f"{scen}_{design}_n{nmax}"
                t0 = time.time()
                ns = argparse.Namespace(
                    scenario=scen, design=design, reps=args.reps, nmax=nmax, n1=24,
                    seed=args.seed, out=str(out_dir), traces=False, workers=args.workers,
                    ref=None,
                )
                cmd_simulate(ns)
                metrics = json.loads((out_dir / "metrics.json").read_text())
                combined.append(
                    {
                        "scenario": scen,
                        "design": design,
                        "nmax": nmax,
                        "identification": metrics["identification"],
                        "pcs": metrics["pcs"],
                        "selection": metrics["selection"],
                    }
                )
                print(f"  {scen}/{design}/n{nmax}: {time.time() - t0:.0f}s")
    (root / "combined.json").write_text(json.dumps(combined, indent=2, sort_keys=True))
    print(f"combined summary at {root}/combined.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
