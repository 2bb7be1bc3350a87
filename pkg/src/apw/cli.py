"""Command-line entry point: ``apw {gen-data,train,verify,pd,report}``.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets as ds
from .errors import APWError, ConfigError
from .pd import analyze, load_series
from .runner import ExperimentConfig, run, verify

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
    sets = list(args.set or [])
    if getattr(args, "variant", None):
        sets.append(f"variant={json.dumps(args.variant)}")
    if getattr(args, "seeds", None):
        sets.append(f"seeds={json.dumps(args.seeds)}")
    if getattr(args, "output_dir", None):
        sets.append(f"output_dir={json.dumps(args.output_dir)}")
    return cfg.with_overrides(sets) if sets else cfg


def cmd_gen_data(args) -> int:
    rng = np.random.default_rng([args.seed, 0])
    if args.classes == 2:
        data = ds.gen_gaussian_2class(args.n, args.std, (args.low, args.high), rng, n_features=args.features)
    else:
        data = ds.gen_gaussian_blobs(args.n, args.classes, args.features, args.std, rng=rng)
    if args.p_noise > 0:
        y_noisy, mask = ds.inject_uniform_noise(data.y, args.p_noise, args.classes, rng)
        data = ds.LabeledDataset(data.X, y_noisy, data.y, {**data.meta, "noise": {"kind": "synthetic", "p_noise": args.p_noise}})
    data.meta["seed"] = args.seed
    out = Path(args.out)
    ds.write_csv(data, out, out.with_suffix(".json"))
    print(f"wrote {len(data)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    summary = run(cfg, jobs=args.jobs)
    out = cfg.output_dir()
    for r in summary["runs"]:
        if "error" in r:
            print(f"seed {r['seed']}: ABORTED {r['error']}")
        else:
            f = r["final"]
            print(f"seed {r['seed']}: epochs={r['epochs']} e={r['e']:.6g} q={r['q']:g} "
                  f"eprop_test={f['eprop_test']} bounds={'ok' if r['bounds_passed'] else 'FAIL'}")
    print(f"artifacts in {out}")
    return EXIT_RUNTIME if summary["failed_seeds"] else EXIT_OK


def _num(v) -> str:
    return "-" if v is None else repr(float(v))


def cmd_verify(args) -> int:
    target = Path(args.path)
    root = os.environ.get("APW_OUTPUT_ROOT")
    if root and not target.is_absolute() and not target.exists():
        target = Path(root) / target
    if target.suffix == ".json" and target.is_file():
        cfg = ExperimentConfig.load(target)
        run(cfg)
        target = cfg.output_dir()
    reports = verify(target)
    status = EXIT_OK
    for name, rep in reports.items():
        fails = rep.failures()
        na = sum(1 for c in rep.checks if c.passed is None)
        print(f"{name}: {len(rep.checks)} checks, {len(fails)} failed, {na} not applicable")
        for c in fails:
            print(f"  FAIL {c.name} epoch={c.epoch} lhs={_num(c.lhs)} {c.relation} rhs={_num(c.rhs)} {c.note}")
        if args.verbose:
            for c in rep.checks:
                flag = "n/a" if c.passed is None else ("ok" if c.passed else "FAIL")
                tag = "" if c.asserted else " (informative)"
                print(f"  {flag:<4} {c.name} epoch={c.epoch} lhs={_num(c.lhs)} {c.relation} rhs={_num(c.rhs)}{tag} {c.note}")
        if fails:
            status = EXIT_VERIFY
    return status


def cmd_pd(args) -> int:
    series = load_series(args.checkpoints, args.losses)
    res = analyze(series)
    print(json.dumps({"t_star": res.t_star, "e_estimate": res.e_estimate,
                      "d_profile": [float(v) for v in res.d_profile]}, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import report

    for p in report(args.runs, args.out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apw", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=600)
    g.add_argument("--std", type=float, default=1.5)
    g.add_argument("--low", type=float, default=-10.0)
    g.add_argument("--high", type=float, default=10.0)
    g.add_argument("--features", type=int, default=2)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--p-noise", type=float, default=0.0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run an experiment config over its seeds")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted path)")
    t.add_argument("--variant")
    t.add_argument("--seeds", type=int, nargs="+")
    t.add_argument("--output-dir")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="re-check bounds from run artifacts (or a config run fresh)")
    v.add_argument("path", help="run directory, seed directory, or config JSON")
    v.add_argument("--verbose", action="store_true")
    v.set_defaults(func=cmd_verify)

    p = sub.add_parser("pd", help="detect the phase transition in a checkpoint series")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--losses")
    p.set_defaults(func=cmd_pd)

    r = sub.add_parser("report", help="render figures and a table from run directories")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except APWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
