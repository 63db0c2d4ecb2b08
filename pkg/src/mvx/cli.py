"""Command line: ``mvx run <kind> <model>``, ``mvx verify <model>``, ``mvx distances <a> <b>``."""
from __future__ import annotations

import argparse
import shlex
import sys

import numpy as np

from .catalog import BUILTINS, get_builtin
from .config import KINDS, ConfigError, ExperimentConfig, load_config
from .experiments import run_experiment
from .measures import (
    BinSpec,
    EmpiricalMeasure,
    Euclidean,
    LyapunovCost,
    ProductCost,
    ot_cost,
    w_truncated,
    wasserstein_1d,
    weighted_tv_binned,
)
from .particle import BlowUpError, read_snapshot_csv

# flag dest -> ExperimentConfig attribute
FLAG_ATTRS = {
    "beta": "beta", "rates": "rates", "particles": "N", "dt": "dt", "T": "T", "seed": "seed",
    "switch_mode": "mode", "trunc": "trunc", "out": "out", "rounds": "rounds", "threads": "workers",
    "init": "init", "init_regime": "init_regime", "init2": "init2", "init2_regime": "init2_regime",
    "prefix": "prefix", "probes": "probes",
}


def _sim_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with [model], [sim], [experiment], [output] sections")
    p.add_argument("--beta", type=float, help="coupling strength of example1")
    p.add_argument("--rates", choices=("default", "symmetric", "none"), help="switching generator")
    p.add_argument("--particles", type=int, help="number of particles N")
    p.add_argument("--dt", type=float, help="Euler step")
    p.add_argument("-T", type=float, dest="T", help="horizon")
    p.add_argument("--seed", type=int)
    p.add_argument("--switch-mode", dest="switch_mode", choices=("thinning", "first-order"))
    p.add_argument("--trunc", type=float, help="truncation radius")
    p.add_argument("--out", help="output directory")
    p.add_argument("--prefix", help="output file prefix")
    p.add_argument("--threads", type=int, help="worker threads for the particle update")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("kind", choices=[k for k in KINDS if k != "verify"])
    run.add_argument("model", choices=sorted(BUILTINS))
    _sim_flags(run)
    run.add_argument("--rounds", type=int, help="Picard rounds")
    run.add_argument("--init", help="initial law, e.g. 'uniform(-1, 1)', 'point(2)', 'gaussian(0, 1)'")
    run.add_argument("--init-regime", dest="init_regime", help="1..m, 'uniform' or probabilities 'p1,p2'")
    run.add_argument("--init2", help="initial law of the second ensemble")
    run.add_argument("--init2-regime", dest="init2_regime")

    ver = sub.add_parser("verify", help="audit the Lyapunov hypotheses of a builtin model")
    ver.add_argument("model", choices=sorted(BUILTINS))
    _sim_flags(ver)
    ver.add_argument("--probes", type=int, help="probe grid size")

    dist = sub.add_parser("distances", help="distances between two snapshot CSVs")
    dist.add_argument("a")
    dist.add_argument("b")
    dist.add_argument("--model", choices=sorted(BUILTINS), help="take the coupled Lyapunov function from a model")
    dist.add_argument("--beta", type=float, default=0.5)
    dist.add_argument("--trunc", type=float, help="also report the truncated W2")
    dist.add_argument("--bin-width", type=float, dest="bin_width", help="bin width for the weighted TV estimate")
    dist.add_argument("--seed", type=int, default=0, help="subsampling seed above 512 atoms")
    return parser


def _experiment_config(args, kind: str) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.kind = kind
    cfg.model = args.model
    for dest, attr in FLAG_ATTRS.items():
        value = getattr(args, dest, None)
        if value is not None:
            setattr(cfg, attr, value)
    return cfg.resolved()


def _distances(args) -> int:
    xa, ra = read_snapshot_csv(args.a)
    xb, rb = read_snapshot_csv(args.b)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")
    out = {}
    if xa.shape[1] == 1 and len(xa) == len(xb):
        out["W1"] = wasserstein_1d(xa[:, 0], xb[:, 0], p=1)
        out["W2"] = wasserstein_1d(xa[:, 0], xb[:, 0], p=2)
    else:
        out["W1"] = ot_cost(xa, xb, Euclidean(1), subsample=True, seed=args.seed).value
        out["W2"] = ot_cost(xa, xb, Euclidean(2), subsample=True, seed=args.seed).value
    if args.trunc is not None:
        out["W2_trunc"] = w_truncated(xa, xb, args.trunc, subsample=True, seed=args.seed)
    if args.model:
        params = {"beta": args.beta} if args.model == "example1" else {}
        _, lyap = get_builtin(args.model, **params)
        mu = EmpiricalMeasure.from_samples(xa, ra)
        nu = EmpiricalMeasure.from_samples(xb, rb)
        out["W_Vtilde"] = ot_cost(xa, xb, LyapunovCost(lyap.coupled), subsample=True, seed=args.seed).value
        out["W_d"] = ot_cost(mu, nu, ProductCost(lyap.coupled), subsample=True, seed=args.seed).value
        if args.bin_width:
            both = np.vstack([xa, xb])
            lo = np.floor(both.min(axis=0) / args.bin_width) * args.bin_width
            hi = (np.floor(both.max(axis=0) / args.bin_width) + 1) * args.bin_width
            tv = weighted_tv_binned(
                EmpiricalMeasure.from_samples(xa), EmpiricalMeasure.from_samples(xb),
                lyap.coupled, BinSpec.regular(lo, hi, args.bin_width),
            )
            out["tv_binned"] = tv.value
            out["tv_eps_bin"] = tv.eps_bin
            out["tv_occupied_bins"] = tv.occupied
    for k, v in out.items():
        print(f"{k} = {format(float(v), '.17g') if not isinstance(v, (int, np.integer)) else v}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = "mvx " + " ".join(shlex.quote(a) for a in (sys.argv[1:] if argv is None else argv))
    try:
        if args.command == "distances":
            return _distances(args)
        kind = "verify" if args.command == "verify" else args.kind
        cfg = _experiment_config(args, kind)
        status, _ = run_experiment(cfg, command)
        return status
    except ConfigError as exc:
        print(f"mvx: config error: {exc}", file=sys.stderr)
        return 2
    except BlowUpError as exc:
        print(f"mvx: simulation blew up: {exc} (try a smaller --dt or a --trunc radius)", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"mvx: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
