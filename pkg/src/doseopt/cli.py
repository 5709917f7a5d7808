"""Command-line front end: simulation studies, grid derivation, metrics replay."""

from __future__ import annotations

import argparse
import csv
import json
import pathlib
import sys

from doseopt.design import DesignConfig
from doseopt.metrics import metrics_bytes, metrics_from_traces
from doseopt.scenarios import PkTruth, Scenario, derive_dose_grid, load_scenario, toxicity_probability
from doseopt.simulate import run_study


def _parse_ref(values):
    out = []
    for v in values or ():
        if "=" not in v:
            raise SystemExit(f"--ref expects characteristic=level, got {v!r}")
        out.append(tuple(v.split("=", 1)))
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    for char, level in _parse_ref(args.ref):
        scenario = scenario.with_reference(char, level)
    n1 = args.n1
    config = DesignConfig(n1=n1, n2=args.nmax - n1)
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_dir = out_dir / "traces" if args.traces else None

    study = run_study(
        scenario,
        config,
        n_reps=args.reps,
        seed=args.seed,
        design=args.design,
        workers=args.workers,
        trace_dir=trace_dir,
    )
    metrics = study["metrics"]
    manifest = {
        "scenario": scenario.to_dict(),
        "config": config.to_dict(),
        "design": args.design,
        "seed": args.seed,
        "reps": args.reps,
    }
    (out_dir / "study.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out_dir / "metrics.json").write_bytes(metrics_bytes(metrics) + b"\n")

    _write_csv(
        out_dir / "pcs.csv",
        ["scenario", "design", "subgroup", "pcs"],
        [[scenario.name, args.design, k, v] for k, v in metrics["pcs"].items()],
    )
    ident = metrics["identification"]
    _write_csv(
        out_dir / "futility.csv",
        [
            "scenario", "design", "correct", "assessment1", "assessment2", "assessment3",
            "incorrect", "incorrect_subgroup", "partial", "early_stop",
        ],
        [[
            scenario.name, args.design, ident["correct"],
            ident["by_assessment"]["1"], ident["by_assessment"]["2"], ident["by_assessment"]["3"],
            ident["incorrect"], ident["incorrect_subgroup"], ident["partial"], ident["early_stop"],
        ]],
    )
    _write_csv(
        out_dir / "allocation.csv",
        ["scenario", "design", "level", "fraction"],
        [[scenario.name, args.design, j + 1, frac] for j, frac in enumerate(metrics["allocation"])],
    )
    print(f"wrote {out_dir}/metrics.json ({args.reps} replicates, design={args.design})")
    return 0


def cmd_grid(args) -> int:
    targets = [float(x) for x in args.targets.split(",")]
    pk = PkTruth(clearance_mean=args.clearance, omega_cl=args.omega, auc_limit=args.limit)
    dosage = derive_dose_grid(targets, pk)
    check = toxicity_probability(dosage, pk)
    out = {
        "targets": targets,
        "dosage": list(dosage),
        "round_trip": [float(x) for x in check],
        "pk": pk.to_dict(),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_metrics(args) -> int:
    trace_dir = pathlib.Path(args.trace_dir)
    manifest_path = trace_dir.parent / "study.json" if trace_dir.name == "traces" else trace_dir / "study.json"
    if args.study:
        manifest_path = pathlib.Path(args.study)
    manifest = json.loads(manifest_path.read_text())
    scenario = Scenario.from_dict(manifest["scenario"])
    config = DesignConfig.from_dict(manifest["config"])
    paths = sorted(trace_dir.glob("*.json"))
    if not paths:
        raise SystemExit(f"no trace files under {trace_dir}")
    metrics = metrics_from_traces(scenario, paths, config)
    sys.stdout.write(metrics_bytes(metrics).decode() + "\n")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from doseopt.service import create_app

    host, _, port = args.bind.partition(":")
    uvicorn.run(create_app(data_dir=args.data_dir), host=host or "127.0.0.1", port=int(port or 8440))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doseopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a replicated simulation study")
    sim.add_argument("--scenario", required=True, help="built-in name or JSON path")
    sim.add_argument("--design", default="optimal", choices=["optimal", "naive", "nopk"])
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--nmax", type=int, default=60, choices=[60, 80])
    sim.add_argument("--n1", type=int, default=24)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--traces", action="store_true", help="write per-replicate trace JSONs")
    sim.add_argument("--workers", type=int, default=None)
    sim.add_argument("--ref", action="append", help="recode a reference level, e.g. alteration=fusion")
    sim.set_defaults(func=cmd_simulate)

    grid = sub.add_parser("grid", help="derive dosages from toxicity targets")
    grid.add_argument("--targets", default="0.05,0.12,0.25,0.38")
    grid.add_argument("--clearance", type=float, default=19.6)
    grid.add_argument("--omega", type=float, default=0.308)
    grid.add_argument("--limit", type=float, default=46.31)
    grid.set_defaults(func=cmd_grid)

    met = sub.add_parser("metrics", help="recompute metrics from saved traces")
    met.add_argument("--trace-dir", required=True)
    met.add_argument("--study", help="path to study.json (defaults next to the traces)")
    met.set_defaults(func=cmd_metrics)

    srv = sub.add_parser("serve", help="run the trial-conduct HTTP service")
    srv.add_argument("--bind", default=None, help="host:port (default env DOSEOPT_BIND_ADDR or 127.0.0.1:8440)")
    srv.add_argument("--data-dir", default=None)
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    import os

    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "bind", None) is None and args.command == "serve":
        args.bind = os.environ.get("DOSEOPT_BIND_ADDR", "127.0.0.1:8440")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
