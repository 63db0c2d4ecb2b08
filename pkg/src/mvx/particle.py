"""Mean-field particle approximation with Euler–Maruyama stepping.

The law of ``X_t`` is replaced by the empirical measure of ``N`` particles.
Each step computes the declared functionals once from the pre-step ensemble,
moves every particle with its own Gaussian increment and then updates its
regime with the position frozen at the start of the step.
"""
from __future__ import annotations

import csv
import io
import re
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .measures import Euclidean, EmpiricalMeasure, ot_cost, wasserstein_1d
from .model import LyapunovSpec, MeasureStats, ModelSpec, truncate
from .rng import Purpose, Streams, uniform_source
from .switching import (
    CoupledRateMatrix,
    SwitchMode,
    check_first_order,
    meet_and_merge,
    sample_coupled,
    sample_regimes,
)

__all__ = [
    "BlowUpError",
    "InitialLaw",
    "PairedTimeSeries",
    "ParticleEnsemble",
    "SimConfig",
    "TimeSeries",
    "euler_step",
    "picard_law_iteration",
    "simulate",
    "synchronous_pair_simulate",
    "truncate",
]


class BlowUpError(RuntimeError):
    """A particle position became non-finite."""

    def __init__(self, index: int, t: float, which: str = ""):
        self.index = int(index)
        self.t = float(t)
        tag = f" in ensemble {which}" if which else ""
        super().__init__(f"particle {self.index}{tag} left the finite range at t={self.t:.6g}")


# ---------------------------------------------------------------------------
# initial laws


_LAW_RE = re.compile(r"^\s*(point|uniform|gaussian)\s*\(([^)]*)\)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class InitialLaw:
    """Product law of an initial position and an independent regime label.

    ``kind`` is ``point``, ``uniform`` (box ``[a, b]^d``) or ``gaussian``
    (``mean + sd * Z``); ``regime`` is a fixed label, ``"uniform"`` or a tuple
    of probabilities over ``1..m``.
    """

    kind: str
    params: tuple
    regime: object = 1
    d: int = 1

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        n = len(self.params)
        if kind == "point" and n not in (1, self.d):
            raise ValueError(f"point law needs 1 or {self.d} coordinates")
        if kind in ("uniform", "gaussian") and n != 2:
            raise ValueError(f"{kind} law needs two parameters")
        if kind == "uniform" and self.params[1] < self.params[0]:
            raise ValueError("uniform law needs a <= b")
        if kind == "gaussian" and self.params[1] < 0:
            raise ValueError("gaussian law needs sd >= 0")
        if kind not in ("point", "uniform", "gaussian"):
            raise ValueError(f"unknown initial law {self.kind!r}")

    @classmethod
    def parse(cls, text: str, regime="1", d: int = 1) -> "InitialLaw":
        match = _LAW_RE.match(text)
        if not match:
            raise ValueError(f"cannot parse initial law {text!r}; use point(x), uniform(a, b) or gaussian(m, s)")
        params = tuple(float(p) for p in match.group(2).split(",") if p.strip())
        return cls(match.group(1), params, _parse_regime(regime), d)

    def describe(self) -> str:
        return f"{self.kind}({', '.join(repr(p) for p in self.params)})"

    def describe_regime(self) -> str:
        if isinstance(self.regime, tuple):
            return ",".join(repr(p) for p in self.regime)
        return str(self.regime)

    def __call__(self, n: int, rng: np.random.Generator, m: int = 1):
        if self.kind == "point":
            x = np.broadcast_to(np.asarray(self.params), (n, self.d)).copy()
        elif self.kind == "uniform":
            a, b = self.params
            x = a + (b - a) * rng.random((n, self.d))
        else:
            mean, sd = self.params
            x = mean + sd * rng.standard_normal((n, self.d))
        reg = self.regime
        if isinstance(reg, str):
            regimes = rng.integers(1, m + 1, size=n)
        elif isinstance(reg, tuple):
            p = np.asarray(reg, dtype=float)
            if len(p) != m or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"regime probabilities {reg} do not match m={m}")
            regimes = rng.choice(np.arange(1, m + 1), size=n, p=p)
        else:
            if not 1 <= int(reg) <= m:
                raise ValueError(f"initial regime {reg} outside 1..{m}")
            regimes = np.full(n, int(reg))
        return x, regimes.astype(np.int64)


def _parse_regime(value):
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, tuple):
        return value
    text = str(value).strip().lower()
    if text == "uniform":
        return "uniform"
    if "," in text:
        return tuple(float(p) for p in text.split(","))
    return int(text)


# ---------------------------------------------------------------------------
# ensemble and configuration


@dataclass(frozen=True)
class ParticleEnsemble:
    """``N`` particles at a common time; ``stream_ids`` name each particle's RNG stream."""

    t: float
    x: np.ndarray
    regimes: np.ndarray
    step: int = 0
    stream_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        regimes = np.asarray(self.regimes, dtype=np.int64)
        if len(x) < 1 or regimes.shape != (len(x),):
            raise ValueError("ensemble needs N >= 1 particles with one regime each")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "regimes", regimes)
        if self.stream_ids is None:
            object.__setattr__(self, "stream_ids", np.arange(len(x)))

    @property
    def N(self) -> int:
        return len(self.x)

    def measure(self, with_regimes: bool = False) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_samples(self.x, self.regimes if with_regimes else None)

    @classmethod
    def sample(cls, init: Callable, N: int, spec: ModelSpec, streams: Streams, purpose=Purpose.INIT):
        x, regimes = init(N, streams.generator(purpose), spec.m)
        ens = cls(0.0, np.asarray(x, dtype=float).reshape(N, spec.d), regimes)
        spec.regimes.check(ens.regimes)
        return ens


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    T: float = 1.0
    N: int = 5000
    seed: int = 0
    mode: SwitchMode = SwitchMode.THINNING
    trunc: Optional[float] = None
    record_times: Optional[tuple] = None
    record_every: float = 0.05
    snapshots: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", SwitchMode.parse(self.mode))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if int(self.N) < 1:
            raise ValueError("N must be at least 1")
        if self.trunc is not None and not self.trunc > 0:
            raise ValueError("truncation radius must be positive")
        if int(self.workers) < 1:
            raise ValueError("workers must be at least 1")
        if self.record_times is not None:
            object.__setattr__(self, "record_times", tuple(float(t) for t in self.record_times))
            for t in self.record_times:
                k = t / self.dt
                if t < 0 or t > self.T + 1e-12 or abs(k - round(k)) > 1e-9 * max(1.0, k):
                    raise ValueError(f"recording time {t} is not on the step grid of [0, {self.T}]")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def record_steps(self) -> np.ndarray:
        if self.record_times is not None:
            steps = [int(round(t / self.dt)) for t in self.record_times]
        else:
            stride = max(1, int(round(self.record_every / self.dt)))
            steps = list(range(0, self.n_steps + 1, stride))
            if steps[-1] != self.n_steps:
                steps.append(self.n_steps)
        return np.unique(np.asarray(steps, dtype=np.int64))


# ---------------------------------------------------------------------------
# recorded output


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _mean_se(values: np.ndarray):
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, se


@dataclass
class TimeSeries:
    """Recorded ensemble summaries on the output grid.

    ``columns`` maps CSV column names to per-time values (``t`` first);
    ``se`` holds Monte Carlo standard errors for the averaged columns.
    """

    m: int
    columns: dict = field(default_factory=dict)
    se: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    exit_time: Optional[float] = None

    def __getitem__(self, name) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return self["t"]

    def stderr(self, name) -> np.ndarray:
        return np.asarray(self.se[name], dtype=float)

    def _append(self, name, value, se=None):
        self.columns.setdefault(name, []).append(float(value))
        if se is not None:
            self.se.setdefault(name, []).append(float(se))

    def record(self, t, x, regimes, spec: ModelSpec, lyap: Optional[LyapunovSpec], snapshot: bool):
        self._append("t", t)
        occ = np.bincount(regimes - 1, minlength=self.m) / len(regimes)
        for i in range(self.m):
            self._append(f"regime_occupancy_{i + 1}", occ[i])
        for f in spec.functionals:
            fx = f(x)
            cols = [f"moment_{f.name}"] if fx.shape[1] == 1 else [
                f"moment_{f.name}_{k + 1}" for k in range(fx.shape[1])
            ]
            for k, col in enumerate(cols):
                self._append(col, *_mean_se(fx[:, k]))
        if lyap is not None:
            self._append("EV", *_mean_se(lyap.value(x, regimes)))
            self._append("Ephi", *_mean_se(np.asarray(lyap.phi(x), dtype=float).reshape(len(x))))
        else:
            self._append("EV", np.nan, np.nan)
            self._append("Ephi", np.nan, np.nan)
        if snapshot:
            self.snapshots.append((float(t), x.copy(), regimes.copy()))

    def header(self) -> list:
        return list(self.columns)

    def to_csv(self, path=None) -> str:
        """Write (or return) the CSV text with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.header()
        w.writerow(names)
        for row in zip(*(self.columns[n] for n in names)):
            w.writerow([_fmt(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass
class PairedTimeSeries(TimeSeries):
    """Series of the first ensemble plus ``pair_*`` columns; ``other`` holds the second."""

    other: Optional[TimeSeries] = None

    def record_pair(self, x, y, rx, ry, lyap: Optional[LyapunovSpec]):
        agree = (rx == ry).astype(float)
        self._append("pair_agreement", *_mean_se(agree))
        if lyap is not None and lyap.coupled is not None:
            v = lyap.coupled_value(x - y)
            self._append("pair_Vtilde", *_mean_se(v))
            self._append("pair_cost", *_mean_se(np.sqrt((1.0 - agree) + v)))
        else:
            self._append("pair_Vtilde", np.nan, np.nan)
            self._append("pair_cost", np.nan, np.nan)


def snapshot_csv(x: np.ndarray, regimes: np.ndarray, path=None) -> str:
    """Ensemble snapshot as CSV with columns ``x_1..x_d, regime``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_{k + 1}" for k in range(x.shape[1])] + ["regime"])
    for xi, r in zip(x, regimes):
        w.writerow([_fmt(v) for v in xi] + [int(r)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_snapshot_csv(path):
    """Inverse of :func:`snapshot_csv`; the regime column is optional."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    xcols = [k for k, h in enumerate(header) if h.startswith("x_")]
    if not xcols:
        raise ValueError(f"{path}: no x_<k> columns in header {header}")
    x = np.array([[float(r[k]) for k in xcols] for r in body])
    regimes = None
    if "regime" in header:
        k = header.index("regime")
        regimes = np.array([int(r[k]) for r in body])
    return x, regimes


# ---------------------------------------------------------------------------
# stepping


@contextmanager
def _pool(workers: int):
    if workers <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=workers) as ex:
        yield ex


def _chunks(N: int, workers: int):
    bounds = np.linspace(0, N, workers + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _move(spec: ModelSpec, t, x, x_eval, stats, regimes, xi, dt, pool, workers):
    sqdt = np.sqrt(dt)

    def work(sl):
        xe = x_eval[sl]
        reg = regimes[sl]
        b = spec.drift(t, xe, stats, reg).reshape(len(xe), spec.d)
        s = spec.diffusion(t, xe, stats, reg)
        noise = s[:, :, 0] * xi[sl, 0:1]
        for j in range(1, spec.n):
            noise = noise + s[:, :, j] * xi[sl, j : j + 1]
        return x[sl] + b * dt + noise * sqdt

    if pool is None:
        return work(slice(0, len(x)))
    parts = list(pool.map(work, _chunks(len(x), workers)))
    return np.concatenate(parts, axis=0)


def _check_finite(x_new, t, which=""):
    bad = ~np.all(np.isfinite(x_new), axis=1)
    if bad.any():
        raise BlowUpError(int(np.flatnonzero(bad)[0]), t, which)


def euler_step(
    ens: ParticleEnsemble,
    spec: ModelSpec,
    dt: float,
    mode=SwitchMode.THINNING,
    streams: Optional[Streams] = None,
    *,
    xi: Optional[np.ndarray] = None,
    trunc: Optional[float] = None,
    stats: Optional[MeasureStats] = None,
    workers: int = 1,
    _pool_obj=None,
) -> ParticleEnsemble:
    """One explicit Euler–Maruyama step of the whole ensemble.

    Parameters
    ----------
    streams : Streams, optional
        Source of the step's Gaussian and regime draws (seed 0 if omitted).
    xi : ndarray, optional
        Override for the standard normal increments, shape ``(N, n)``.
    trunc : float, optional
        If set, coefficients see ``phi_N(x)`` and the ``phi_N``-pushforward law.
    stats : MeasureStats, optional
        Use these functional values instead of the ensemble's own (frozen law).
    """
    mode = SwitchMode.parse(mode)
    streams = Streams(0) if streams is None else streams
    x = ens.x
    x_eval = x if trunc is None else truncate(x, trunc)
    if stats is None:
        stats = spec.stats(x_eval)
    if xi is None:
        xi = streams.normal(Purpose.NOISE, ens.step, (ens.N, spec.n))
    else:
        xi = np.asarray(xi, dtype=float).reshape(ens.N, spec.n)
    t_new = (ens.step + 1) * dt
    x_new = _move(spec, ens.t, x, x_eval, stats, ens.regimes, xi, dt, _pool_obj, workers)
    _check_finite(x_new, t_new)
    Q = spec.rates.evaluate(x)
    draw = uniform_source(streams, Purpose.REGIME, ens.step, ens.N)
    regimes = sample_regimes(Q, ens.regimes, dt, mode, draw, spec.rates.bound)
    return ParticleEnsemble(t_new, x_new, regimes, ens.step + 1, ens.stream_ids)


def _check_setup(spec: ModelSpec, cfg: SimConfig, paired: bool = False):
    if cfg.mode is SwitchMode.FIRST_ORDER:
        if paired and not spec.rates.constant:
            check_first_order(2 * spec.rates.bound, spec.m * spec.m, cfg.dt)
        else:
            check_first_order(spec.rates.bound, spec.m, cfg.dt)


def _exited(x, trunc) -> bool:
    return bool(np.any(np.linalg.norm(x, axis=1) > trunc))


def _run(spec, lyap, ens, cfg: SimConfig, streams, stats_flow=None, collect_flow=False, snapshots=None):
    _check_setup(spec, cfg)
    series = TimeSeries(spec.m)
    rec = set(cfg.record_steps().tolist())
    want_snap = cfg.snapshots if snapshots is None else snapshots
    flow = []
    with _pool(cfg.workers) as pool:
        for k in range(cfg.n_steps + 1):
            if k in rec:
                series.record(k * cfg.dt, ens.x, ens.regimes, spec, lyap, want_snap)
            if cfg.trunc is not None and series.exit_time is None and _exited(ens.x, cfg.trunc):
                series.exit_time = k * cfg.dt
            if k == cfg.n_steps:
                break
            frozen = None if stats_flow is None else stats_flow[k]
            if collect_flow:
                x_eval = ens.x if cfg.trunc is None else truncate(ens.x, cfg.trunc)
                flow.append(spec.stats(x_eval))
            ens = euler_step(
                ens, spec, cfg.dt, cfg.mode, streams,
                trunc=cfg.trunc, stats=frozen, workers=cfg.workers, _pool_obj=pool,
            )
    return series, flow, ens


def simulate(spec: ModelSpec, lyap: Optional[LyapunovSpec], init: Callable, cfg: SimConfig) -> TimeSeries:
    """Run the particle system to ``cfg.T`` and record summaries on the grid.

    ``init(n, rng, m)`` returns ``(x, regimes)`` for ``n`` iid initial draws.
    With ``cfg.trunc`` set the truncated dynamics are simulated and
    ``series.exit_time`` is the first recorded step at which some particle lies
    outside the ball.
    """
    streams = Streams(cfg.seed)
    ens = ParticleEnsemble.sample(init, cfg.N, spec, streams)
    series, _, _ = _run(spec, lyap, ens, cfg, streams)
    return series


def synchronous_pair_simulate(
    spec: ModelSpec,
    lyap: Optional[LyapunovSpec],
    init1: Callable,
    init2: Callable,
    cfg: SimConfig,
) -> PairedTimeSeries:
    """Evolve two ensembles with shared Brownian increments, particle by particle.

    Regimes are coupled by meet-and-merge when the generator is constant and
    by the basic coupling of ``Q(x_k)`` and ``Q(y_k)`` otherwise. Each
    ensemble's coefficients read its own empirical functionals.
    """
    _check_setup(spec, cfg, paired=True)
    streams = Streams(cfg.seed)
    X = ParticleEnsemble.sample(init1, cfg.N, spec, streams, Purpose.INIT)
    Y = ParticleEnsemble.sample(init2, cfg.N, spec, streams, Purpose.INIT_PAIR)
    out = PairedTimeSeries(spec.m, other=TimeSeries(spec.m))
    rec = set(cfg.record_steps().tolist())
    coupled = None if spec.rates.constant else CoupledRateMatrix(spec.rates)
    x, y, rx, ry = X.x, Y.x, X.regimes, Y.regimes
    dt = cfg.dt
    with _pool(cfg.workers) as pool:
        for k in range(cfg.n_steps + 1):
            t = k * dt
            if k in rec:
                out.record(t, x, rx, spec, lyap, cfg.snapshots)
                out.other.record(t, y, ry, spec, lyap, cfg.snapshots)
                out.record_pair(x, y, rx, ry, lyap)
            if cfg.trunc is not None and out.exit_time is None and (_exited(x, cfg.trunc) or _exited(y, cfg.trunc)):
                out.exit_time = t
            if k == cfg.n_steps:
                break
            xe = x if cfg.trunc is None else truncate(x, cfg.trunc)
            ye = y if cfg.trunc is None else truncate(y, cfg.trunc)
            xi = streams.normal(Purpose.NOISE, k, (cfg.N, spec.n))
            x_new = _move(spec, t, x, xe, spec.stats(xe), rx, xi, dt, pool, cfg.workers)
            y_new = _move(spec, t, y, ye, spec.stats(ye), ry, xi, dt, pool, cfg.workers)
            _check_finite(x_new, t + dt, "X")
            _check_finite(y_new, t + dt, "Y")
            draw1 = uniform_source(streams, Purpose.REGIME, k, cfg.N)
            if coupled is None:
                draw2 = uniform_source(streams, Purpose.REGIME_PAIR, k, cfg.N)
                rx, ry = meet_and_merge(spec.rates, rx, ry, dt, cfg.mode, draw1, draw2)
            else:
                G = coupled.evaluate(x, y)
                rx, ry = sample_coupled(G, rx, ry, dt, cfg.mode, draw1, coupled.bound)
            x, y = x_new, y_new
    return out


def _law_distance(a: np.ndarray, b: np.ndarray, seed: int) -> float:
    if a.shape[1] == 1:
        return wasserstein_1d(a[:, 0], b[:, 0], p=2)
    return ot_cost(a, b, Euclidean(2), seed=seed).value


def picard_law_iteration(spec: ModelSpec, init: Callable, cfg: SimConfig, rounds: int) -> list:
    """Distances between successive Picard law flows.

    Round 0 is the constant flow at the initial empirical law. Round ``r``
    simulates the SDE with its measure argument frozen to the per-step
    functionals recorded in round ``r - 1`` (same seed every round). Entry
    ``r - 1`` of the result is ``sup_t W_2(mu^{r-1}_t, mu^r_t)`` over the
    recording grid, so ``rounds`` distances are returned.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    streams = Streams(cfg.seed)
    ens0 = ParticleEnsemble.sample(init, cfg.N, spec, streams)
    x_eval = ens0.x if cfg.trunc is None else truncate(ens0.x, cfg.trunc)
    flow = [spec.stats(x_eval)] * cfg.n_steps
    steps = cfg.record_steps()
    prev_laws = [ens0.x] * len(steps)
    cfg_snap = replace(cfg, snapshots=True)
    out = []
    for _ in range(rounds):
        series, flow, _ = _run(spec, None, ens0, cfg_snap, streams, stats_flow=flow, collect_flow=True)
        laws = [snap[1] for snap in series.snapshots]
        out.append(max(_law_distance(a, b, cfg.seed) for a, b in zip(prev_laws, laws)))
        prev_laws = laws
    return out
