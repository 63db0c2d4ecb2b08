"""Generators applied to Lyapunov functions, and sampled hypothesis audits.

The audits are numerical: they evaluate margins on finite probe sets and
report the worst one. A pass means no violation was found on the probes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .measures import EmpiricalMeasure, LyapunovCost, ot_cost
from .model import CoefficientError, LyapunovSpec, MeasureStats, ModelSpec
from .particle import TimeSeries

TOL_ANALYTIC = 1e-9
TOL_FD_REL = 1e-6


def _finite(name: str, values: np.ndarray, where: str):
    if not np.all(np.isfinite(values)):
        raise CoefficientError(f"non-finite {name} term in {where}")


def _as2d(x, d):
    return np.asarray(x, dtype=float).reshape(-1, d)


def generator_terms(spec: ModelSpec, lyap: LyapunovSpec, t, x, stats: MeasureStats, regimes):
    """Diffusion, drift and switching parts of ``LV`` at a batch of points."""
    x = _as2d(x, spec.d)
    regimes = np.broadcast_to(np.asarray(regimes, dtype=np.int64), (len(x),))
    b = spec.drift(t, x, stats, regimes).reshape(len(x), spec.d)
    s = spec.diffusion(t, x, stats, regimes)
    A = np.einsum("kij,klj->kil", s, s)
    H = lyap.hessian(x, regimes)
    g = lyap.gradient(x, regimes)
    diff_term = 0.5 * np.einsum("kij,kji->k", A, H)
    drift_term = np.einsum("ki,ki->k", b, g)
    Q = spec.rates.evaluate(x)
    v_here = lyap.value(x, regimes)
    switch_term = np.zeros(len(x))
    ar = np.arange(len(x))
    for j in range(1, spec.m + 1):
        other = lyap.value(x, np.full(len(x), j))
        mask = regimes != j
        switch_term += np.where(mask, Q[ar, regimes - 1, j - 1] * (other - v_here), 0.0)
    for name, vals in (("diffusion", diff_term), ("drift", drift_term), ("switching", switch_term)):
        _finite(name, vals, f"LV at t={t}")
    return diff_term, drift_term, switch_term


def generator_values(spec, lyap, t, x, stats, regimes) -> np.ndarray:
    a, b, c = generator_terms(spec, lyap, t, x, stats, regimes)
    return a + b + c


def apply_generator(spec: ModelSpec, lyap: LyapunovSpec, t, x, stats: MeasureStats, i: int) -> float:
    """``LV(x, i) = ½ tr(σσᵀ∇²V) + b·∇V + Σ_{j≠i} q_ij(x)(V(x, j) − V(x, i))``."""
    spec.check_stats(stats)
    return float(generator_values(spec, lyap, t, np.atleast_1d(x), stats, [int(i)])[0])


def coupled_generator_values(spec, lyap, t, x, y, stats_mu, stats_nu, regime) -> np.ndarray:
    """``L̃⁽ⁱ⁾Ṽ(x − y)`` for paired batches with the same regime."""
    x = _as2d(x, spec.d)
    y = _as2d(y, spec.d)
    reg = np.full(len(x), int(regime))
    db = spec.drift(t, x, stats_mu, reg).reshape(len(x), spec.d) - spec.drift(t, y, stats_nu, reg).reshape(
        len(y), spec.d
    )
    ds = spec.diffusion(t, x, stats_mu, reg) - spec.diffusion(t, y, stats_nu, reg)
    z = x - y
    A = np.einsum("kij,klj->kil", ds, ds)
    drift_term = np.einsum("ki,ki->k", db, lyap.coupled_gradient(z))
    diff_term = 0.5 * np.einsum("kij,kji->k", A, lyap.coupled_hessian(z))
    _finite("drift", drift_term, f"coupled generator at t={t}")
    _finite("diffusion", diff_term, f"coupled generator at t={t}")
    return drift_term + diff_term


def apply_coupled_generator(spec, lyap, t, x, y, stats_mu, stats_nu, i) -> float:
    return float(
        coupled_generator_values(spec, lyap, t, np.atleast_1d(x), np.atleast_1d(y), stats_mu, stats_nu, i)[0]
    )


# ---------------------------------------------------------------------------
# reports


@dataclass
class DriftReport:
    """Outcome of a sampled hypothesis audit; ``passed`` iff worst margin <= tolerance."""

    kind: str
    probes: str
    worst_margin: float
    tolerance: float
    passed: bool
    offending: Optional[dict] = None
    form: str = ""
    extras: dict = field(default_factory=dict)

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"[{self.kind}] {status}", f"  probes: {self.probes}"]
        lines.append(f"  worst margin: {self.worst_margin:.6g} (tolerance {self.tolerance:.3g})")
        if self.form:
            lines.append(f"  form: {self.form}")
        if self.offending:
            desc = ", ".join(f"{k}={v}" for k, v in self.offending.items())
            lines.append(f"  worst probe: {desc}")
        for k, v in self.extras.items():
            lines.append(f"  {k}: {v}")
        return "\n".join(lines)

    CSV_FIELDS = ("kind", "passed", "worst_margin", "tolerance", "form", "probes")

    def csv_row(self) -> list:
        return [self.kind, int(self.passed), format(self.worst_margin, ".17g"),
                format(self.tolerance, ".3g"), self.form, self.probes]

    @classmethod
    def to_csv(cls, reports: Sequence["DriftReport"]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cls.CSV_FIELDS)
        for r in reports:
            w.writerow(r.csv_row())
        return buf.getvalue()


def _measure(mu) -> EmpiricalMeasure:
    return mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure.from_samples(mu)


def shell_minima(lyap: LyapunovSpec, probes: np.ndarray, m: int, radii) -> np.ndarray:
    """``min_{|x| >= R, i} V(x, i)`` over probe points for each radius ``R``."""
    norms = np.linalg.norm(probes, axis=1)
    vmin = np.min([lyap.value(probes, np.full(len(probes), i)) for i in range(1, m + 1)], axis=0)
    out = []
    for R in radii:
        sel = norms >= R
        out.append(float(vmin[sel].min()) if sel.any() else np.nan)
    return np.asarray(out)


def drift_margins(spec, lyap, probes, mu, regime, t=0.0):
    """``(LV − λ1 V − λ2 μ(φ), LV)`` at each probe for one measure and regime."""
    probes = _as2d(probes, spec.d)
    mu = _measure(mu)
    stats = spec.stats(mu.atoms, mu.weights)
    mu_phi = float(mu.weights @ np.asarray(lyap.phi(mu.atoms), dtype=float).reshape(len(mu)))
    reg = np.full(len(probes), int(regime))
    LV = generator_values(spec, lyap, t, probes, stats, reg)
    return LV - lyap.lambda1 * lyap.value(probes, reg) - lyap.lambda2 * mu_phi, LV


def check_drift_H2(
    spec: ModelSpec,
    lyap: LyapunovSpec,
    probes,
    measures: Sequence,
    *,
    regimes=None,
    t: float = 0.0,
    radii=None,
) -> DriftReport:
    """Audit ``LV(x, i) <= λ1 V(x, i) + λ2 μ(φ)`` on every probe, regime and measure.

    Also reports whether ``φ <= min_i V`` on the probes and whether the shell
    minima ``inf_{|x| >= R} V`` strictly increase over ``radii``.
    """
    probes = _as2d(probes, spec.d)
    if len(probes) == 0:
        raise ValueError("need at least one probe")
    regimes = list(range(1, spec.m + 1)) if regimes is None else [int(i) for i in regimes]
    worst = -np.inf
    worst_excess = -np.inf
    offending = None
    tol_used = TOL_ANALYTIC
    for k, mu in enumerate(measures):
        for i in regimes:
            margin, LV = drift_margins(spec, lyap, probes, mu, i, t)
            tol = TOL_ANALYTIC if lyap.analytic else TOL_FD_REL * (1.0 + np.abs(LV))
            excess = margin - tol
            j = int(np.argmax(excess))
            if excess[j] > worst_excess:
                worst_excess = float(excess[j])
                worst = float(margin[j])
                tol_used = float(np.broadcast_to(tol, margin.shape)[j])
                offending = {"x": probes[j].tolist(), "regime": i, "measure": k, "LV": float(LV[j])}
    vmin = np.min([lyap.value(probes, np.full(len(probes), i)) for i in range(1, spec.m + 1)], axis=0)
    phi = np.asarray(lyap.phi(probes), dtype=float).reshape(len(probes))
    phi_ok = bool(np.all(phi <= vmin + TOL_ANALYTIC * (1.0 + np.abs(vmin))))
    norms = np.linalg.norm(probes, axis=1)
    if radii is None:
        radii = np.linspace(0.0, norms.max(), 6)[:-1]
    minima = shell_minima(lyap, probes, spec.m, radii)
    coercive = bool(np.all(np.diff(minima) > 0))
    return DriftReport(
        kind="H2",
        probes=f"{len(probes)} points x regimes {regimes} x {len(measures)} measures",
        worst_margin=worst,
        tolerance=tol_used,
        passed=bool(worst_excess <= 0),
        offending=offending,
        extras={
            "lambda1": lyap.lambda1,
            "lambda2": lyap.lambda2,
            "phi_dominated": phi_ok,
            "coercive": coercive,
            "shell_minima": [round(float(v), 6) for v in minima],
        },
    )


def check_contraction(
    spec: ModelSpec,
    lyap: LyapunovSpec,
    couplings: Sequence,
    *,
    rate: Optional[float] = None,
    regimes=None,
    t: float = 0.0,
    gamma2: Optional[float] = None,
) -> DriftReport:
    """Audit ``∫ L̃⁽ⁱ⁾Ṽ(x − y) dπ <= −rate ∫ Ṽ(x − y) dπ`` on sampled couplings.

    Each coupling is a pair of equal-length samples ``(xs, ys)``; its
    marginals supply the measure arguments. The pointwise inequality is
    checked as a stricter diagnostic and ``form`` records which forms held.
    With ``gamma2`` the allowance gains ``gamma2 * W_Ṽ(μ, ν)``.
    """
    if rate is None:
        rate = lyap.theta if spec.m > 1 else lyap.gamma
    if rate is None:
        raise ValueError("no contraction rate given and none set on the LyapunovSpec")
    regimes = list(range(1, spec.m + 1)) if regimes is None else [int(i) for i in regimes]
    tol = TOL_ANALYTIC if lyap.coupled_analytic else None
    worst_int = -np.inf
    worst_int_excess = -np.inf
    worst_pt_excess = -np.inf
    offending = None
    tol_used = TOL_ANALYTIC
    for k, pair in enumerate(couplings):
        xs = _as2d(pair[0], spec.d)
        ys = _as2d(pair[1], spec.d)
        if xs.shape != ys.shape:
            raise ValueError("a coupling needs two samples of equal size")
        smu = spec.stats(xs)
        snu = spec.stats(ys)
        vt = lyap.coupled_value(xs - ys)
        extra = 0.0
        if gamma2 is not None:
            extra = gamma2 * ot_cost(xs, ys, LyapunovCost(lyap.coupled), subsample=True).value
        for i in regimes:
            L = coupled_generator_values(spec, lyap, t, xs, ys, smu, snu, i)
            integral = float(np.mean(L) + rate * np.mean(vt) - extra)
            pointwise = L + rate * vt - extra
            tol_int = tol if tol is not None else TOL_FD_REL * (1.0 + abs(float(np.mean(L))))
            tol_pt = tol if tol is not None else TOL_FD_REL * (1.0 + np.abs(L))
            if integral - tol_int > worst_int_excess:
                worst_int_excess = integral - tol_int
                worst_int = integral
                tol_used = tol_int
                j = int(np.argmax(pointwise))
                offending = {"coupling": k, "regime": i, "worst_pair": [xs[j].tolist(), ys[j].tolist()]}
            worst_pt_excess = max(worst_pt_excess, float(np.max(pointwise - tol_pt)))
    int_ok = worst_int_excess <= 0
    pt_ok = worst_pt_excess <= 0
    form = "pointwise" if pt_ok else ("integral" if int_ok else "none")
    return DriftReport(
        kind="contraction",
        probes=f"{len(couplings)} couplings x regimes {regimes}",
        worst_margin=worst_int,
        tolerance=tol_used,
        passed=bool(int_ok),
        offending=offending,
        form=form,
        extras={"rate": rate, "pointwise_worst_excess": worst_pt_excess, "gamma2": gamma2},
    )


@dataclass
class MomentBoundResult:
    passed: bool
    worst_relative_margin: float
    ratios: np.ndarray
    times: np.ndarray

    def __bool__(self):
        return self.passed


def moment_bound_check(series: TimeSeries, lyap: LyapunovSpec, delta: float = 0.15, rate=None) -> MomentBoundResult:
    """Check ``E V(t) <= exp(rate t) E V(0) (1 + delta)`` at every recorded time.

    ``ratios`` are ``E V(t) / (exp(rate t) E V(0))``; the worst relative margin
    is ``max(ratios) - 1`` and the check passes iff it is ``<= delta``.
    """
    if "EV" not in series.columns:
        raise ValueError("series has no EV column")
    ev = series["EV"]
    if np.any(np.isnan(ev)):
        raise ValueError("series has no EV values (simulated without a LyapunovSpec)")
    t = series.t
    rate = lyap.rate if rate is None else rate
    ratios = ev / (np.exp(rate * t) * ev[0])
    worst = float(np.max(ratios) - 1.0)
    return MomentBoundResult(worst <= delta, worst, ratios, t)


@dataclass
class LyapunovAudit:
    V_nonnegative: bool
    phi_dominated: bool
    coupled_zero_at_origin: bool
    K_estimate: float
    K_ok: bool


def audit_lyapunov_spec(lyap: LyapunovSpec, m: int, points, pairs=None) -> LyapunovAudit:
    """Sample the structural requirements on ``V``, ``φ`` and the coupled function.

    ``K_estimate`` is the largest ``V̂(x − y) / max(V̂(x), V̂(y))`` over ``pairs``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    vals = np.stack([lyap.value(pts, np.full(len(pts), i)) for i in range(1, m + 1)])
    phi = np.asarray(lyap.phi(pts), dtype=float).reshape(len(pts))
    zero_ok = True
    K = np.nan
    K_ok = True
    if lyap.coupled is not None:
        zero_ok = bool(lyap.coupled_value(np.zeros((1, pts.shape[1])))[0] == 0.0)
        if pairs is not None:
            xs, ys = (np.asarray(p, dtype=float).reshape(len(p), -1) for p in pairs)
            num = lyap.coupled_value(xs - ys)
            den = np.maximum(lyap.coupled_value(xs), lyap.coupled_value(ys))
            ok = den > 0
            K = float(np.max(num[ok] / den[ok])) if ok.any() else np.nan
            if lyap.K_hat is not None and np.isfinite(K):
                K_ok = K <= lyap.K_hat * (1 + 1e-12)
    return LyapunovAudit(
        bool(np.all(vals >= 0)),
        bool(np.all(phi <= vals.min(axis=0) + 1e-12)),
        zero_ok,
        K,
        K_ok,
    )


def derivative_discrepancy(lyap: LyapunovSpec, points, regimes) -> tuple:
    """Max relative gap between analytic and finite-difference gradient/Hessian of ``V``."""
    from .model import fd_gradient, fd_hessian

    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    reg = np.broadcast_to(np.asarray(regimes), (len(pts),))
    f = lambda y: lyap.value(y, reg)  # noqa: E731
    g_fd = fd_gradient(f, pts, lyap.fd_scale)
    H_fd = fd_hessian(f, pts, lyap.fd_scale)
    g = np.asarray(lyap.grad_V(pts, reg), dtype=float).reshape(pts.shape)
    H = np.asarray(lyap.hess_V(pts, reg), dtype=float).reshape(H_fd.shape)

    def rel(a, b):
        scale = np.maximum(np.abs(b), 1.0)
        return float(np.max(np.abs(a - b) / scale))

    return rel(g_fd, g), rel(H_fd, H)
