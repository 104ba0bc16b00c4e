"""Batch entry points.

Four subcommands: `simulate` drives synthetic-occupant trials and the
EUI-vs-random-search comparison, `regress` fits the constrained regression
variants and emits band data, `diagnose` reports mixing statistics for a
trace CSV, and `serve` runs the live session API. Every command is
deterministic given --seed, and everything tabular can be written as JSON or
CSV with a schema version stamp.
"""

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .model import REGRESSION_MODES, VirtualGrid, build_regression_posterior
from .sampler import HmcConfig, autocorrelation, effective_sample_size, run_hmc
from .session import SessionService, create_app, make_fit_fn
from .simulator import FAST_HMC, OCCUPANTS, aed, run_elicitation, trial_records

OUTPUT_SCHEMA = 1
FORMATS = ("json", "csv")

REGRESSION_DATASETS = {
    "d1": ((0.0, 10.0), (1.0, 0.0)),
    "d2": ((0.0, 0.0), (0.33, 1.33), (0.66, 1.33), (1.0, 0.0)),
}


def _num(v):
    """JSON-safe number: non-finite floats become null."""
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else None


def _write_text(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")


def _dump_json(payload: dict, path) -> None:
    _write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", path)


def _dump_rows(rows, fieldnames, fmt: str, path) -> None:
    if fmt == "json":
        _dump_json({"schema": OUTPUT_SCHEMA, "rows": rows}, path)
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["schema"] + list(fieldnames))
    writer.writeheader()
    for row in rows:
        writer.writerow({"schema": OUTPUT_SCHEMA, **row})
    _write_text(buf.getvalue(), path)


def _add_output_options(p, hmc_default: str = "fast") -> None:
    p.add_argument("--format", choices=FORMATS, default="json")
    p.add_argument("--hmc", choices=("fast", "full"), default=hmc_default,
                   help="sampler schedule: reduced or the full default")
    p.add_argument("--burn-in", type=int, default=None,
                   help="override the schedule's burn-in length")
    p.add_argument("--retained", type=int, default=None,
                   help="override the number of retained draws")
    p.add_argument("--thin", type=int, default=None,
                   help="override the thinning stride")


def _hmc_schedule(args) -> HmcConfig:
    cfg = FAST_HMC if args.hmc == "fast" else HmcConfig()
    overrides = {
        k: getattr(args, k)
        for k in ("burn_in", "retained", "thin")
        if getattr(args, k) is not None
    }
    return replace(cfg, **overrides) if overrides else cfg


# ----------------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------------

def _step_rows(trial, occupant_id: int, seed: int):
    rows = []
    for rec in trial_records(trial):
        rows.append({
            "occupant": occupant_id,
            "strategy": trial.strategy,
            "seed": seed,
            **{k: (_num(v) if isinstance(v, float) else v)
               for k, v in rec.items()},
        })
    return rows


def cmd_simulate(args) -> int:
    strategy = "random_search" if args.strategy in ("rs", "random_search") \
        else "eui"
    out = Path(args.out)
    hmc = _hmc_schedule(args)
    seeds = [args.seed + i for i in range(args.seeds)]

    if args.compare:
        rows = _aed_comparison(args, hmc, seeds)
        _dump_rows(rows, ["occupant", "strategy", "step", "mean_aed",
                          "n_seeds"],
                   args.format, out / f"aed_comparison.{args.format}")
        return 0

    occupant = OCCUPANTS[args.occupant]

    def one_trial(seed):
        return run_elicitation(
            occupant, strategy=strategy, budget=args.budget,
            init_temp=args.init_temp, seed=seed, hmc=hmc,
            early_stop=args.early_stop,
        )

    with ThreadPoolExecutor(max_workers=min(4, len(seeds))) as pool:
        trials = list(pool.map(one_trial, seeds))

    for seed, trial in zip(seeds, trials):
        name = f"occupant{args.occupant}_{strategy}_seed{seed}.{args.format}"
        if args.format == "json":
            steps = [
                {k: (_num(v) if isinstance(v, float) else v)
                 for k, v in rec.items()}
                for rec in trial_records(trial)
            ]
            _dump_json({
                "schema": OUTPUT_SCHEMA,
                "occupant": args.occupant,
                "strategy": strategy,
                "seed": seed,
                "init_temp": args.init_temp,
                "budget": args.budget,
                "stop_reason": trial.stop_reason,
                "steps": steps,
            }, out / name)
        else:
            _dump_rows(
                _step_rows(trial, args.occupant, seed),
                ["occupant", "strategy", "seed", "step", "query_temp",
                 "response", "eui", "eui_ratio", "ci95_low", "ci95_high",
                 "xbest_median", "stop_reason"],
                "csv", out / name,
            )
    return 0


def _aed_comparison(args, hmc: HmcConfig, seeds) -> list:
    """Mean distance-to-peak per step for EUI vs random search, all occupants.

    Trials run the full budget (no early stopping) so every cell averages the
    same number of runs at every step.
    """
    jobs = [
        (occ_id, strat, seed)
        for occ_id in sorted(OCCUPANTS)
        for strat in ("eui", "random_search")
        for seed in seeds
    ]

    def one(job):
        occ_id, strat, seed = job
        return run_elicitation(
            OCCUPANTS[occ_id], strategy=strat, budget=args.budget,
            init_temp=args.init_temp, seed=seed, hmc=hmc, early_stop=False,
        )

    with ThreadPoolExecutor(max_workers=min(4, len(jobs))) as pool:
        trials = dict(zip(jobs, pool.map(one, jobs)))

    rows = []
    for occ_id in sorted(OCCUPANTS):
        peak = OCCUPANTS[occ_id].peak
        for strat in ("eui", "random_search"):
            group = [trials[(occ_id, strat, s)] for s in seeds]
            for step in range(args.budget):
                vals = [aed(t.xbest_samples[step], peak) for t in group]
                rows.append({
                    "occupant": occ_id,
                    "strategy": strat,
                    "step": step + 1,
                    "mean_aed": float(np.mean(vals)),
                    "n_seeds": len(seeds),
                })
    return rows


# ----------------------------------------------------------------------------
# regress
# ----------------------------------------------------------------------------

def _load_regression_data(spec: str, parser) -> tuple:
    if spec in REGRESSION_DATASETS:
        return REGRESSION_DATASETS[spec]
    path = Path(spec)
    if not path.exists():
        parser.error(f"unknown dataset {spec!r}: not a builtin (d1, d2) "
                     "and no such file")
    if path.suffix == ".json":
        pairs = json.loads(path.read_text())
    else:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        if rows and not rows[0][0].replace(".", "").replace("-", "").isdigit():
            rows = rows[1:]  # header line
        pairs = [(float(x), float(y)) for x, y, *_ in rows]
    return tuple((float(x), float(y)) for x, y in pairs)


def cmd_regress(args, parser) -> int:
    data = _load_regression_data(args.dataset, parser)
    xs = [x for x, _ in data]
    grid = VirtualGrid(np.linspace(min(xs), max(xs), 17))
    target = build_regression_posterior(data, args.mode, grid,
                                        noise_sigma=args.noise)
    cfg = replace(_hmc_schedule(args), seed=args.seed)
    ensemble = run_hmc(target, target.init, cfg)
    f = np.asarray(ensemble.positions)[:, : len(grid)]
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    quants = np.quantile(f, qs, axis=0)
    mean = f.mean(axis=0)
    mode_location = float(grid.array[int(np.median(np.argmax(f, axis=1)))])

    if args.format == "json":
        _dump_json({
            "schema": OUTPUT_SCHEMA,
            "dataset": args.dataset,
            "mode": args.mode,
            "seed": args.seed,
            "noise_sigma": args.noise,
            "accept_rate": ensemble.accept_rate,
            "mode_location": mode_location,
            "grid": [float(x) for x in grid.array],
            "mean": [float(v) for v in mean],
            "quantiles": {
                "qs": list(qs),
                "values": [[float(v) for v in row] for row in quants],
            },
        }, args.out)
    else:
        rows = [
            {
                "x": float(grid.array[j]),
                "mean": float(mean[j]),
                **{f"q{int(q * 100):02d}": float(quants[i, j])
                   for i, q in enumerate(qs)},
            }
            for j in range(len(grid))
        ]
        _dump_rows(rows, ["x", "mean", "q05", "q25", "q50", "q75", "q95"],
                   "csv", args.out)
    return 0


# ----------------------------------------------------------------------------
# diagnose
# ----------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        print(f"error: trace file not found: {path}", file=sys.stderr)
        return 1
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            names = next(reader)
        except StopIteration:
            print(f"error: trace file is empty: {path}", file=sys.stderr)
            return 1
        data = np.asarray([[float(v) for v in row] for row in reader])
    if data.ndim != 2 or data.shape[0] < 10 or data.shape[1] != len(names):
        print("error: need a rectangular trace with >= 10 draws",
              file=sys.stderr)
        return 1
    rows = []
    for j, name in enumerate(names):
        col = data[:, j]
        ess, degenerate = effective_sample_size(col, return_degenerate=True)
        rows.append({
            "column": name,
            "draws": int(col.size),
            "ess": float(ess),
            "lag1_autocorr": float(autocorrelation(col, 1)[1]),
            "degenerate": bool(degenerate),
        })
    _dump_rows(rows, ["column", "draws", "ess", "lag1_autocorr", "degenerate"],
               args.format, args.out)
    return 0


# ----------------------------------------------------------------------------
# serve
# ----------------------------------------------------------------------------

def cmd_serve(args, runner=None) -> int:
    # the env var wins over the flag so deployments can relocate the store
    # without touching unit files
    store_dir = os.environ.get("THERM_ELICIT_STORE") or args.store_dir
    service = SessionService(
        store_dir,
        fit_fn=make_fit_fn(hmc=_hmc_schedule(args)),
        default_budget=args.budget,
        default_seed=args.seed,
    )
    app = create_app(service, static_dir=args.static_dir)
    if runner is None:
        import uvicorn

        runner = uvicorn.run
    try:
        runner(app, host=args.host, port=args.port)
    finally:
        service.shutdown()
    return 0


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="therm-elicit",
        description="Thermal-preference elicitation: synthetic trials, "
                    "constrained regression, sampler diagnostics, live API.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run synthetic-occupant trials")
    sim.add_argument("--occupant", type=int, choices=sorted(OCCUPANTS))
    sim.add_argument("--strategy", choices=("eui", "rs", "random_search"),
                     default="eui")
    sim.add_argument("--seeds", type=int, default=1,
                     help="number of trials; trial i uses --seed + i")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--budget", type=int, default=10)
    sim.add_argument("--init-temp", type=float, default=21.0)
    sim.add_argument("--compare", action="store_true",
                     help="emit the EUI vs random-search distance table "
                          "over all occupants instead of trial files")
    sim.add_argument("--no-early-stop", dest="early_stop",
                     action="store_false")
    sim.add_argument("--out", default="therm-elicit-out")
    _add_output_options(sim)

    reg = sub.add_parser("regress", help="fit constrained GP regression")
    reg.add_argument("--dataset", required=True,
                     help="d1, d2, or a JSON/CSV file of (x, y) pairs")
    reg.add_argument("--mode", choices=REGRESSION_MODES, default="unimodal")
    reg.add_argument("--noise", type=float, default=0.1)
    reg.add_argument("--seed", type=int, default=0)
    reg.add_argument("--out", default=None,
                     help="output file (default: stdout)")
    _add_output_options(reg)

    diag = sub.add_parser("diagnose", help="mixing report for a trace CSV")
    diag.add_argument("trace")
    diag.add_argument("--out", default=None)
    diag.add_argument("--format", choices=FORMATS, default="json")

    srv = sub.add_parser("serve", help="run the live session API")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--store-dir", default="./sessions")
    srv.add_argument("--seed", type=int, default=0,
                     help="default seed for sessions created without one")
    srv.add_argument("--budget", type=int, default=10)
    srv.add_argument("--static-dir", default=None,
                     help="serve console assets from this directory")
    _add_output_options(srv, hmc_default="full")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate":
        if args.seeds < 1:
            parser.error("--seeds must be >= 1")
        if not args.compare and args.occupant is None:
            parser.error("--occupant is required unless --compare is given")
        return cmd_simulate(args)
    if args.command == "regress":
        return cmd_regress(args, parser)
    if args.command == "diagnose":
        return cmd_diagnose(args)
    return cmd_serve(args)


if __name__ == "__main__":
    sys.exit(main())
