"""Command line: analyze, simulate, compare, sweep.

Exit codes: 0 success, 2 bad usage, 3 configuration error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .domain import ContractError
from .engine import (
    Scenario,
    analyze,
    apply_profile,
    compare_series,
    format_analysis,
    growth_ratio,
    load_scenario,
    run,
    sweep_kappa,
)
from .metrics import MetricsSample, export_csv, read_csv
from .workload import ConfigurationError

OUT_ENV = "ROBUSTSCHED_OUT"
EXIT_CONFIG = 3
EXIT_RUNTIME = 4

log = logging.getLogger("robustsched")


def output_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "."))


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if getattr(args, "profile", None):
        sc = apply_profile(sc, args.profile)
    if getattr(args, "slots", None):
        sc = replace(sc, total_slots=args.slots)
    if getattr(args, "sample_every", None):
        sc = replace(sc, sample_every=args.sample_every)
    if getattr(args, "seed", None) is not None:
        sc = replace(sc, seed=args.seed)
    return sc


def _csv_path(args, sc: Scenario, seed: int, many: bool) -> Path:
    if args.out:
        path = Path(args.out)
        if many:
            path = path.with_name(f"{path.stem}_seed{seed}{path.suffix or '.csv'}")
        return path
    return output_dir() / f"{sc.name}_seed{seed}.csv"


def _simulate_one(sc: Scenario, path: Path):
    result = run(sc)
    path.parent.mkdir(parents=True, exist_ok=True)
    export_csv(result.samples, path, sc.spec.n_types)
    return result.summary


def _print_summary(summary: dict, path: Path) -> None:
    slope = summary["slope"]
    slope_txt = "n/a" if slope is None else f"{slope:+.3f} work/slot"
    print(f"{summary['name']} seed {summary['seed']} [{summary['routing']}, scan {summary['strategy']}]: "
          f"verdict {summary['verdict']} (margin {float(summary['margin']):+.6f}); "
          f"final queue {summary['final_queue_work']}, slope {slope_txt}; "
          f"{summary['seconds']:.1f}s -> {path}")
    if "learnt_alpha" in summary:
        est = summary["estimate"].spec
        rates = ", ".join(f"type{j + 1} lambda {float(est.genuine[j]):.4g} kappa {float(est.malicious[j]):.4g}"
                          for j in range(est.n_types))
        print(f"  learnt rates: {rates}")


def cmd_analyze(args) -> int:
    sc = load_scenario(args.scenario)
    print(format_analysis(analyze(sc)))
    return 0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    seeds = [sc.seed + i for i in range(args.runs)]
    many = args.runs > 1
    jobs = [(replace(sc, seed=s), _csv_path(args, sc, s, many)) for s in seeds]
    if many and args.workers != 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(_simulate_one, *zip(*jobs)))
    else:
        summaries = [_simulate_one(s, p) for s, p in jobs]
    for summary, (_, path) in zip(summaries, jobs):
        _print_summary(summary, path)
    return 0


def _series(path_text: str, args) -> list[MetricsSample]:
    path = Path(path_text)
    if path.suffix == ".csv":
        return read_csv(path)
    args.scenario = path_text
    return run(_scenario(args)).samples


def cmd_compare(args) -> int:
    a = _series(args.a, args)
    b = _series(args.b, args)
    rows = compare_series(a, b)
    if not rows:
        raise ConfigurationError("the two series share no sample slot")
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if v is None else v for k, v in row.items()})
    finally:
        if args.out:
            out.close()
    return 0


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    scales = [s for s in args.kappa_scale.split(",") if s.strip()]
    rows = sweep_kappa(sc, scales)
    print("kappa_scale,none,none_margin,all,all_margin,opt,opt_margin"
          + (",sim_final_queue,sim_growth" if args.simulate else ""))
    for row in rows:
        cells = [f"{float(row['kappa_scale']):g}"]
        for s in ("none", "all", "opt"):
            cells += [row[s].label, f"{float(row[s].margin):.6g}"]
        if args.simulate:
            spec = sc.spec.scaled(1, row["kappa_scale"])
            res = run(replace(apply_profile(sc, args.profile) if args.profile else sc, spec=spec))
            cells += [str(res.summary["final_queue_work"]), f"{growth_ratio(res.samples):.3f}"]
        print(",".join(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustsched", description="Scan-aware MaxWeight scheduling simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--profile", choices=("desk", "full"))
        sp.add_argument("--slots", type=int)
        sp.add_argument("--sample-every", type=int)
        sp.add_argument("--seed", type=int)

    a = sub.add_parser("analyze", help="configurations, weights and capacity verdicts; no simulation")
    a.add_argument("scenario")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a scenario and write its metric series as CSV")
    s.add_argument("scenario")
    s.add_argument("--out", help=f"CSV path (default: ${OUT_ENV}/<name>_seed<seed>.csv)")
    s.add_argument("--runs", type=int, default=1, help="consecutive seeds starting at the scenario seed")
    s.add_argument("--workers", type=int, default=None, help="processes for --runs (default: CPU count)")
    run_flags(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="ratio and difference series of two runs (scenario or CSV)")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out")
    run_flags(c)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="verdicts as malicious traffic is scaled")
    w.add_argument("scenario")
    w.add_argument("--kappa-scale", required=True, help="comma separated factors, e.g. 0,0.5,1,2")
    w.add_argument("--simulate", action="store_true", help="also simulate each point")
    w.add_argument("--profile", choices=("desk", "full"))
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "runs", 1) < 1:
        print("error: --runs must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigurationError, ContractError) as exc:
        # configuration problems are caught before slot 0
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ArithmeticError, RuntimeError, MemoryError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
