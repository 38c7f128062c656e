"""Command-line entry point: ``ncctrial {calibrate,simulate,analyze,aggregate,bands}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import METHODS, ConfigError, ScenarioConfig, load_config
from .datagen import TrialDataset
from .harness import (aggregate, analyse, prediction_band, read_decisions, run_scenario,
                      write_decisions, write_results)
from .timemachine import calibrate_drift_prior


def _emit(record: dict, fmt: str, out=None):
    if fmt == "json":
        text = json.dumps(record, indent=2) + "\n"
    else:
        keys = list(record)
        text = ",".join(keys) + "\n" + ",".join(str(record[k]) for k in keys) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_calibrate(args):
    a, b = calibrate_drift_prior(args.expected, args.maximum, args.iota)
    _emit({"D_expected": args.expected, "D_maximum": args.maximum, "iota": args.iota,
           "a_tau": a, "b_tau": b}, args.format, args.out)


def cmd_bands(args):
    lo, hi = prediction_band(args.alpha, args.reps)
    _emit({"alpha": args.alpha, "R": args.reps, "lower": lo, "upper": hi}, args.format, args.out)


def _override(cfg: ScenarioConfig, args) -> ScenarioConfig:
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.reps is not None:
        kw["replications"] = args.reps
    return dataclasses.replace(cfg, **kw) if kw else cfg


def cmd_simulate(args):
    cfg = _override(load_config(args.config), args)
    metrics, decisions = run_scenario(cfg, workers=args.workers, return_decisions=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_decisions(decisions, out / "decisions.csv")
    write_results(metrics, out / "results.csv", cfg)
    for row in metrics.rows:
        print(f"arm {row.arm:>2} {row.method:<12} rate={row.rate:.4f} "
              f"(mc se {row.mc_se:.4f}, band {row.band_lo:.4f}-{row.band_hi:.4f}, R={row.replications})")
    if metrics.errors:
        print(f"{metrics.errors} replication(s) failed and were excluded")


def cmd_analyze(args):
    data = TrialDataset.from_csv(args.data)
    cfg = load_config(args.config) if args.config else ScenarioConfig(n=1, entry=(0,))
    if args.alpha is not None:
        cfg = dataclasses.replace(cfg, alpha=args.alpha)
    res = analyse(data, args.arm, args.method, cfg, args.seed)
    record = {"method": res.method, "arm": args.arm, "estimate": res.estimate, "reject": bool(res.reject)}
    if hasattr(res, "se"):
        record.update(se=res.se, statistic=res.statistic, df=res.df, p_value=res.p_value)
    else:
        record.update(sd=res.sd, prob_positive=res.prob_positive)
    _emit(record, args.format, args.out)


def cmd_aggregate(args):
    decisions = []
    for path in args.decisions:
        decisions.extend(read_decisions(path))
    metrics = aggregate(decisions, args.alpha, name=args.name)
    if args.out:
        write_results(metrics, args.out)
    if args.format == "json":
        print(json.dumps([r.__dict__ for r in metrics.rows], indent=2))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["arm", "method", "rate", "mc_se", "band_lo", "band_hi", "R"])
        for r in metrics.rows:
            w.writerow([r.arm, r.method, r.rate, r.mc_se, r.band_lo, r.band_hi, r.replications])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncctrial", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output file (default: stdout)"):
        sp.add_argument("--format", choices=("csv", "json"), default="json")
        sp.add_argument("--out", help=out_help)

    c = sub.add_parser("calibrate", help="Gamma prior for the Time Machine drift precision")
    c.add_argument("--expected", type=float, required=True, help="most plausible drift sd")
    c.add_argument("--maximum", type=float, required=True, help="implausibly large drift sd")
    c.add_argument("--iota", type=float, default=0.01, help="prior mass beyond --maximum")
    common(c)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="run a scenario config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="analyse one dataset CSV (columns j,k,s,y)")
    a.add_argument("--data", required=True)
    a.add_argument("--method", choices=METHODS, required=True)
    a.add_argument("--arm", type=int, required=True)
    a.add_argument("--config", help="scenario config supplying priors and alpha")
    a.add_argument("--alpha", type=float)
    a.add_argument("--seed", type=int)
    common(a)
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("aggregate", help="rejection rates from decision CSVs")
    g.add_argument("decisions", nargs="+")
    g.add_argument("--alpha", type=float, default=0.025)
    g.add_argument("--name", default="scenario")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--out", help="write long-format results CSV (+ JSON) here")
    g.set_defaults(func=cmd_aggregate)

    b = sub.add_parser("bands", help="95%% prediction band for a rejection rate")
    b.add_argument("--alpha", type=float, default=0.025)
    b.add_argument("--reps", type=int, required=True)
    common(b)
    b.set_defaults(func=cmd_bands)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
