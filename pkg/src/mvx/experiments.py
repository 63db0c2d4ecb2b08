"""Experiment drivers behind the command line: each writes a CSV and a metadata file."""
from __future__ import annotations

import os
import platform
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy
from scipy import stats as sps

from .catalog import get_builtin
from .config import ExperimentConfig
from .lyapunov import DriftReport, check_contraction, check_drift_H2, moment_bound_check
from .measures import EmpiricalMeasure, ProductCost, ot_cost
from .particle import picard_law_iteration, simulate, snapshot_csv, synchronous_pair_simulate
from .switching import meeting_rate


@dataclass
class RateFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_used: int

    def describe(self) -> str:
        return f"slope {self.slope:.6g} (95% CI [{self.ci_low:.6g}, {self.ci_high:.6g}], {self.n_used} points)"


def fit_log_rate(t, values, se=None, window=None, floor_factor: float = 10.0) -> RateFit:
    """Least-squares slope of ``log(values)`` against ``t`` with a 95% interval.

    Times outside ``window`` and values below ``floor_factor`` standard
    errors (or nonpositive) are dropped before fitting.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = np.isfinite(y) & (y > 0)
    if se is not None:
        keep &= y >= floor_factor * np.asarray(se, dtype=float)
    if window is not None:
        lo, hi = window
        keep &= (t >= lo - 1e-12) & (t <= hi + 1e-12)
    n = int(keep.sum())
    if n < 3:
        raise ValueError(f"only {n} usable points for a rate fit; widen the window or add particles")
    res = sps.linregress(t[keep], np.log(y[keep]))
    half = sps.t.ppf(0.975, n - 2) * res.stderr
    return RateFit(float(res.slope), float(res.intercept), float(res.slope - half), float(res.slope + half), n)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ExperimentResult:
    csv: str
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    extra_files: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _model(cfg: ExperimentConfig):
    return get_builtin(cfg.model, **cfg.model_params())


def _window(cfg: ExperimentConfig, T: float):
    return (cfg.fit_start if cfg.fit_start is not None else 0.0, cfg.fit_end if cfg.fit_end is not None else T)


def _slope_check(fit: RateFit, bound: Optional[float]) -> Optional[Check]:
    if bound is None:
        return None
    return Check("slope", fit.slope <= bound, f"{fit.describe()}; required <= {bound:.6g}")


def run_moment_decay(cfg: ExperimentConfig) -> ExperimentResult:
    spec, lyap = _model(cfg)
    init, _ = cfg.initial_laws()
    series = simulate(spec, lyap, init, cfg.sim_config(snapshots=cfg.snapshot))
    res = ExperimentResult(series.to_csv())
    rate = lyap.rate
    fit = fit_log_rate(series.t, series["EV"], series.stderr("EV"), _window(cfg, cfg.T))
    res.summary.update(rate_bound=rate, slope=fit.slope, slope_ci_low=fit.ci_low, slope_ci_high=fit.ci_high)
    tol = 0.1 if cfg.slope_tolerance is None else cfg.slope_tolerance
    bound = cfg.assert_slope_max if cfg.assert_slope_max is not None else rate * (1.0 - tol)
    res.checks.append(_slope_check(fit, bound))
    if cfg.assert_bound_delta is not None:
        mb = moment_bound_check(series, lyap, cfg.assert_bound_delta)
        res.summary["bound_worst_margin"] = mb.worst_relative_margin
        res.checks.append(Check(
            "moment_bound", mb.passed,
            f"max EV(t)/(exp({rate:.6g} t) EV(0)) - 1 = {mb.worst_relative_margin:.6g}; allowed {cfg.assert_bound_delta}",
        ))
        phi = series["Ephi"]
        worst_phi = float(np.max(phi / (np.exp(rate * series.t) * phi[0])) - 1.0)
        res.summary["phi_bound_worst_margin"] = worst_phi
    if series.exit_time is not None:
        res.summary["exit_time"] = series.exit_time
    if cfg.snapshot and series.snapshots:
        _, x, r = series.snapshots[-1]
        res.extra_files["final.csv"] = snapshot_csv(x, r)
    return res


def _pair_run(cfg: ExperimentConfig):
    spec, lyap = _model(cfg)
    init1, init2 = cfg.initial_laws()
    paired = synchronous_pair_simulate(spec, lyap, init1, init2, cfg.sim_config(snapshots=True))
    return spec, lyap, paired


def _pair_csv(paired) -> str:
    # pair columns plus the second ensemble's columns under a y_ prefix
    other = paired.other
    for name in other.header():
        if name != "t":
            paired.columns[f"y_{name}"] = other.columns[name]
    return paired.to_csv()


def run_contraction(cfg: ExperimentConfig) -> ExperimentResult:
    spec, lyap, paired = _pair_run(cfg)
    res = ExperimentResult(_pair_csv(paired))
    rate = lyap.gamma
    fit = fit_log_rate(paired.t, paired["pair_Vtilde"], paired.stderr("pair_Vtilde"), _window(cfg, cfg.T))
    res.summary.update(gamma=rate, slope=fit.slope, slope_ci_low=fit.ci_low, slope_ci_high=fit.ci_high)
    tol = 0.1 if cfg.slope_tolerance is None else cfg.slope_tolerance
    bound = cfg.assert_slope_max if cfg.assert_slope_max is not None else -rate * (1.0 - tol)
    res.checks.append(_slope_check(fit, bound))
    _final_snapshots(cfg, paired, res)
    return res


def switching_rate_bound(spec, lyap, theta_c=None):
    """``(θ̃, θ_c)`` with ``θ̃ = (θ ∧ θ_c) / 4``; ``θ_c`` from the meeting rate of a constant generator."""
    if theta_c is None and spec.rates.constant:
        theta_c = meeting_rate(spec.rates.matrix)
    if theta_c is None or lyap.theta is None:
        return None, theta_c
    return 0.25 * min(lyap.theta, theta_c), theta_c


def run_contraction_switching(cfg: ExperimentConfig) -> ExperimentResult:
    spec, lyap, paired = _pair_run(cfg)
    res = ExperimentResult(_pair_csv(paired))
    fit = fit_log_rate(paired.t, paired["pair_cost"], paired.stderr("pair_cost"), _window(cfg, cfg.T))
    theta_tilde, theta_c = switching_rate_bound(spec, lyap, cfg.theta_c)
    res.summary.update(slope=fit.slope, slope_ci_low=fit.ci_low, slope_ci_high=fit.ci_high,
                       theta=lyap.theta, theta_c=theta_c, theta_tilde=theta_tilde)
    if cfg.assert_ci_negative:
        res.checks.append(Check("decay", fit.ci_high < 0, f"{fit.describe()}; CI must exclude 0"))
    tol = 0.1 if cfg.slope_tolerance is None else cfg.slope_tolerance
    bound = cfg.assert_slope_max
    if bound is None and theta_tilde is not None:
        bound = -theta_tilde + tol
    check = _slope_check(fit, bound)
    if check is not None:
        res.checks.append(check)
    agree = float(paired["pair_agreement"][-1])
    res.summary["final_agreement"] = agree
    if cfg.assert_agreement is not None:
        res.checks.append(Check("agreement", agree >= cfg.assert_agreement,
                                f"regime agreement {agree:.6g} at t={paired.t[-1]:.6g}; required >= {cfg.assert_agreement}"))
    _final_snapshots(cfg, paired, res)
    return res


def run_invariant(cfg: ExperimentConfig) -> ExperimentResult:
    spec, lyap, paired = _pair_run(cfg)
    cost = ProductCost(lyap.coupled)
    snaps_x = paired.snapshots
    snaps_y = paired.other.snapshots
    terminal = EmpiricalMeasure.from_samples(snaps_x[-1][1], snaps_x[-1][2])
    rows = ["t,W_d,W_d_x_terminal,W_d_y_terminal"]
    t, wd = [], []
    for (tt, x, rx), (_, y, ry) in zip(snaps_x, snaps_y):
        mu = EmpiricalMeasure.from_samples(x, rx)
        nu = EmpiricalMeasure.from_samples(y, ry)
        d = ot_cost(mu, nu, cost, seed=cfg.seed).value
        dx = ot_cost(mu, terminal, cost, seed=cfg.seed).value
        dy = ot_cost(nu, terminal, cost, seed=cfg.seed).value
        rows.append(",".join(format(v, ".17g") for v in (tt, d, dx, dy)))
        t.append(tt)
        wd.append(d)
    res = ExperimentResult("\n".join(rows) + "\n")
    fit = fit_log_rate(t, wd, window=_window(cfg, cfg.T))
    res.summary.update(slope=fit.slope, slope_ci_low=fit.ci_low, slope_ci_high=fit.ci_high, final_W_d=wd[-1])
    if cfg.assert_ci_negative:
        res.checks.append(Check("decay", fit.ci_high < 0, f"W_d {fit.describe()}; CI must exclude 0"))
    if cfg.assert_slope_max is not None:
        res.checks.append(_slope_check(fit, cfg.assert_slope_max))
    res.extra_files["pairs.csv"] = _pair_csv(paired)
    return res


def run_picard(cfg: ExperimentConfig) -> ExperimentResult:
    spec, _ = _model(cfg)
    init, _ = cfg.initial_laws()
    dist = picard_law_iteration(spec, init, cfg.sim_config(), cfg.rounds)
    rows = ["round,sup_W2"] + [f"{r + 1},{format(d, '.17g')}" for r, d in enumerate(dist)]
    res = ExperimentResult("\n".join(rows) + "\n", summary={"distances": " ".join(format(d, ".6g") for d in dist)})
    if cfg.assert_decreasing and len(dist) > 1:
        ok = all(b < a for a, b in zip(dist, dist[1:]))
        res.checks.append(Check("decreasing", ok, "successive law-flow distances " + res.summary["distances"]))
    return res


def verify_reports(spec, lyap, *, probes: int = 1000, seed: int = 0, radius: float = 10.0) -> list:
    """H2, frozen-regime contraction and switching contraction audits on seeded probes."""
    rng = np.random.default_rng(seed)
    d = spec.d
    if d == 1:
        grid = np.linspace(-radius, radius, probes)[:, None]
    else:
        grid = rng.uniform(-radius, radius, size=(probes, d))
    measures = [
        EmpiricalMeasure.from_samples(np.zeros((1, d))),
        EmpiricalMeasure.from_samples(rng.uniform(-1.0, 1.0, size=(200, d))),
        EmpiricalMeasure.from_samples(rng.normal(1.0, 2.0, size=(200, d))),
    ]
    reports = [check_drift_H2(spec, lyap, grid, measures)]
    if lyap.coupled is None:
        return reports
    n = 400
    a = rng.normal(0.0, 1.0, size=(n, d))
    b = rng.normal(1.0, 2.0, size=(n, d))
    couplings = [
        (a, b),
        (np.sort(a, axis=0), np.sort(b, axis=0)),
        (a, a + 0.1 * rng.normal(size=(n, d))),
        (rng.uniform(-3, 3, size=(n, d)), rng.uniform(-3, 3, size=(n, d))),
    ]
    if lyap.gamma is not None:
        rep = check_contraction(spec, lyap, couplings, rate=lyap.gamma, regimes=lyap.gamma_regimes)
        rep.kind = "H5"
        reports.append(rep)
    if lyap.theta is not None and spec.m > 1:
        rep = check_contraction(spec, lyap, couplings, rate=lyap.theta)
        rep.kind = "H6"
        reports.append(rep)
    return reports


def run_verify(cfg: ExperimentConfig) -> ExperimentResult:
    spec, lyap = _model(cfg)
    reports = verify_reports(spec, lyap, probes=cfg.probes, seed=cfg.seed)
    res = ExperimentResult(DriftReport.to_csv(reports))
    for r in reports:
        res.checks.append(Check(r.kind, r.passed, r.to_text()))
    return res


RUNNERS = {
    "moment-decay": run_moment_decay,
    "contraction": run_contraction,
    "contraction-switching": run_contraction_switching,
    "invariant": run_invariant,
    "picard": run_picard,
    "verify": run_verify,
}


def _final_snapshots(cfg, paired, res):
    if cfg.snapshot:
        _, x, r = paired.snapshots[-1]
        _, y, ry = paired.other.snapshots[-1]
        res.extra_files["final.csv"] = snapshot_csv(x, r)
        res.extra_files["final-y.csv"] = snapshot_csv(y, ry)


def metadata_text(cfg: ExperimentConfig, result: ExperimentResult, command: str = "") -> str:
    """Run metadata: provenance in ``[run]``, outcomes in ``[result]``, then the config echo."""
    from importlib import metadata as im

    try:
        version = im.version("artifact")
    except im.PackageNotFoundError:
        version = "unknown"
    lines = [
        "[run]",
        "package = mvx",
        f"version = {version}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"seed = {cfg.seed}",
    ]
    if command:
        lines.append(f"command = {command}")
    lines += ["", "[result]", f"passed = {'yes' if result.passed else 'no'}"]
    for k, v in result.summary.items():
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    for c in result.checks:
        lines.append(f"check_{c.name} = {'pass' if c.passed else 'FAIL'}")
    lines.append("")
    return "\n".join(lines) + "\n" + cfg.to_ini()


def run_experiment(cfg: ExperimentConfig, command: str = "", stream=None) -> tuple:
    """Run, write ``<prefix>.csv`` and ``<prefix>.meta.ini``; return ``(exit_status, result)``.

    Exit status is 0 when every embedded assertion holds and 1 otherwise.
    """
    stream = sys.stdout if stream is None else stream
    cfg = cfg.resolved()
    result = RUNNERS[cfg.kind](cfg)
    result.checks = [c for c in result.checks if c is not None]
    os.makedirs(cfg.out, exist_ok=True)
    prefix = cfg.prefix or f"{cfg.kind}-{cfg.model}"
    base = os.path.join(cfg.out, prefix)
    with open(base + ".csv", "w", newline="") as fh:
        fh.write(result.csv)
    for suffix, text in result.extra_files.items():
        with open(f"{base}-{suffix}", "w", newline="") as fh:
            fh.write(text)
    with open(base + ".meta.ini", "w") as fh:
        fh.write(metadata_text(cfg, result, command))
    print(f"wrote {base}.csv and {base}.meta.ini", file=stream)
    for k, v in result.summary.items():
        print(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}", file=stream)
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}", file=stream)
    return (0 if result.passed else 1), result
