"""Model definitions: coefficients, switching generators, Lyapunov data.

Coefficients are vectorised over particles. A drift callback receives
``(t, x, stats, regimes)`` with ``x`` of shape ``(N, d)`` and integer regime
labels in ``1..m`` of shape ``(N,)`` and returns ``(N, d)``; a diffusion
callback returns ``(N, d, n)``. The law enters only through the declared
functionals, whose values are packed in a :class:`MeasureStats`.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12


class CoefficientError(ValueError):
    """A coefficient or Lyapunov callback produced a non-finite value."""


@dataclass(frozen=True)
class RegimeSet:
    m: int

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError(f"need at least one regime, got m={self.m}")

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, self.m + 1)

    def check(self, regimes) -> np.ndarray:
        regimes = np.asarray(regimes)
        if regimes.size and (regimes.min() < 1 or regimes.max() > self.m):
            raise ValueError(f"regime labels must lie in 1..{self.m}")
        return regimes


# ---------------------------------------------------------------------------
# measure functionals


@dataclass(frozen=True)
class Functional:
    """A named map ``f: (N, d) -> (N, p)`` whose mean is exposed to coefficients."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(x), dtype=float)
        return out.reshape(len(x), -1)


def mean_functional() -> Functional:
    return Functional("mean", lambda x: x)


def second_moment_functional() -> Functional:
    return Functional("second_moment", lambda x: np.sum(x * x, axis=1, keepdims=True))


class MeasureStats(Mapping):
    """Values ``∫ f_k dμ`` of an ordered list of functionals.

    Acts as a read-only mapping from functional name to a 1-D array.
    """

    __slots__ = ("_names", "_values")

    def __init__(self, names: Sequence[str], values: Sequence[np.ndarray]):
        vals = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in values)
        if len(names) != len(vals):
            raise ValueError("names and values differ in length")
        for name, v in zip(names, vals):
            if not np.all(np.isfinite(v)):
                raise CoefficientError(f"functional {name!r} has non-finite value {v}")
        self._names = tuple(names)
        self._values = vals

    @classmethod
    def compute(cls, functionals: Sequence[Functional], x: np.ndarray, weights=None):
        x = np.asarray(x, dtype=float)
        values = []
        for f in functionals:
            fx = f(x)
            if weights is None:
                values.append(fx.mean(axis=0))
            else:
                values.append(np.asarray(weights) @ fx)
        return cls([f.name for f in functionals], values)

    def __getitem__(self, name):
        try:
            return self._values[self._names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __iter__(self):
        return iter(self._names)

    def __len__(self):
        return len(self._names)

    def __repr__(self):
        body = ", ".join(f"{n}={v.tolist()}" for n, v in zip(self._names, self._values))
        return f"MeasureStats({body})"

    def __eq__(self, other):
        if not isinstance(other, MeasureStats):
            return NotImplemented
        return self._names == other._names and all(
            np.array_equal(a, b) for a, b in zip(self._values, other._values)
        )

    __hash__ = None

    @property
    def names(self):
        return self._names


# ---------------------------------------------------------------------------
# switching generator


class RateMatrix:
    """Position-dependent generator ``x -> Q(x)`` of an ``m``-state chain.

    Parameters
    ----------
    fn : callable
        Maps positions of shape ``(N, d)`` to rate matrices ``(N, m, m)``.
    m : int
        Number of regimes.
    bound : float
        Uniform bound on ``|q_ij(x)|``, used by the thinning sampler.
    constant : bool
        Whether ``Q`` is independent of ``x``.
    """

    def __init__(self, fn, m: int, bound: float, constant: bool = False):
        self._fn = fn
        self.m = int(m)
        self.bound = float(bound)
        self.constant = bool(constant)
        self.matrix = None
        if self.bound < 0:
            raise ValueError("rate bound must be nonnegative")

    @classmethod
    def from_matrix(cls, Q) -> "RateMatrix":
        Q = np.array(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"rate matrix must be square, got shape {Q.shape}")
        Q.setflags(write=False)
        m = Q.shape[0]

        def fn(x):
            return np.broadcast_to(Q, (len(x), m, m))

        rm = cls(fn, m, float(np.max(np.abs(Q))) if Q.size else 0.0, constant=True)
        rm.matrix = Q
        return rm

    @classmethod
    def zero(cls, m: int) -> "RateMatrix":
        return cls.from_matrix(np.zeros((m, m)))

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return np.asarray(self._fn(x), dtype=float)

    def __call__(self, x) -> np.ndarray:
        """Rate matrix at a single position."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.evaluate(x[None, :])[0]

    def __repr__(self):
        kind = "constant" if self.constant else "x-dependent"
        return f"RateMatrix(m={self.m}, bound={self.bound:g}, {kind})"


@dataclass
class Violation:
    point_index: int
    point: np.ndarray
    clause: str
    detail: str


@dataclass
class ValidationReport:
    passed: bool
    max_magnitude: float
    violations: list = field(default_factory=list)
    per_point_max: Optional[np.ndarray] = None

    def __str__(self):
        head = "q-property: PASS" if self.passed else "q-property: FAIL"
        lines = [f"{head} (max |q_ij| = {self.max_magnitude:.6g})"]
        for v in self.violations[:20]:
            lines.append(f"  point #{v.point_index} x={v.point.tolist()}: {v.clause} ({v.detail})")
        if len(self.violations) > 20:
            lines.append(f"  ... {len(self.violations) - 20} more")
        return "\n".join(lines)


def validate_q_property(rates: RateMatrix, probe_points) -> ValidationReport:
    """Check sign, row-sum and boundedness clauses of the q-property at probes."""
    pts = np.asarray(probe_points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ValueError("probe_points must be nonempty")
    Q = rates.evaluate(pts)
    m = rates.m
    violations = []
    per_point = np.full(len(pts), np.nan)
    off = ~np.eye(m, dtype=bool)
    for k in range(len(pts)):
        q = Q[k]
        if q.shape != (m, m):
            violations.append(Violation(k, pts[k], "shape", f"expected {(m, m)}, got {q.shape}"))
            continue
        bad = ~np.isfinite(q)
        if bad.any():
            where = [tuple(int(a) + 1 for a in ij) for ij in np.argwhere(bad)]
            violations.append(Violation(k, pts[k], "non-finite entry", f"at {where}"))
            continue
        per_point[k] = np.max(np.abs(q))
        neg = off & (q < 0)
        for i, j in np.argwhere(neg):
            violations.append(
                Violation(k, pts[k], "negative off-diagonal", f"q[{i + 1},{j + 1}]={q[i, j]:.6g}")
            )
        sums = q.sum(axis=1)
        for i in np.flatnonzero(np.abs(sums) > ROW_SUM_TOL):
            violations.append(Violation(k, pts[k], "row sum", f"row {i + 1} sums to {sums[i]:.6g}"))
        if per_point[k] > rates.bound:
            violations.append(
                Violation(k, pts[k], "bound", f"max |q_ij|={per_point[k]:.6g} > {rates.bound:.6g}")
            )
    finite = per_point[np.isfinite(per_point)]
    max_mag = float(finite.max()) if finite.size else float("nan")
    return ValidationReport(not violations, max_mag, violations, per_point)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class CoefficientField:
    drift: Callable
    diffusion: Callable
    d: int = 1
    n: int = 1


@dataclass(frozen=True)
class ModelSpec:
    coefficients: CoefficientField
    rates: RateMatrix
    functionals: tuple = ()
    name: str = "model"
    regimes: Optional[RegimeSet] = None

    def __post_init__(self):
        if self.regimes is None:
            object.__setattr__(self, "regimes", RegimeSet(self.rates.m))
        if self.regimes.m != self.rates.m:
            raise ValueError(f"regime count {self.regimes.m} != rate matrix size {self.rates.m}")
        object.__setattr__(self, "functionals", tuple(self.functionals))
        names = [f.name for f in self.functionals]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate functional names in {names}")

    @property
    def d(self) -> int:
        return self.coefficients.d

    @property
    def n(self) -> int:
        return self.coefficients.n

    @property
    def m(self) -> int:
        return self.rates.m

    def stats(self, x, weights=None) -> MeasureStats:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        return MeasureStats.compute(self.functionals, x, weights)

    def stats_from_values(self, **values) -> MeasureStats:
        names = [f.name for f in self.functionals]
        if set(values) != set(names):
            raise ValueError(f"expected values for {names}, got {sorted(values)}")
        return MeasureStats(names, [values[n] for n in names])

    def check_stats(self, stats: MeasureStats):
        if tuple(stats.names) != tuple(f.name for f in self.functionals):
            raise ValueError(
                f"stats {list(stats.names)} do not match declared functionals "
                f"{[f.name for f in self.functionals]}"
            )

    def drift(self, t, x, stats, regimes) -> np.ndarray:
        return np.asarray(self.coefficients.drift(t, x, stats, regimes), dtype=float)

    def diffusion(self, t, x, stats, regimes) -> np.ndarray:
        s = np.asarray(self.coefficients.diffusion(t, x, stats, regimes), dtype=float)
        return s.reshape(len(x), self.d, self.n)


def evaluate_drift_diffusion(spec: ModelSpec, t, x, stats: MeasureStats, i: int):
    """Drift ``(d,)`` and diffusion ``(d, n)`` at a single point and regime."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.d,):
        raise ValueError(f"position must have shape ({spec.d},), got {x.shape}")
    if not 1 <= int(i) <= spec.m:
        raise ValueError(f"regime {i} outside 1..{spec.m}")
    spec.check_stats(stats)
    reg = np.array([int(i)])
    b = spec.drift(t, x[None, :], stats, reg).reshape(spec.d)
    s = spec.diffusion(t, x[None, :], stats, reg)[0]
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
        raise CoefficientError(f"non-finite coefficient at t={t}, x={x.tolist()}, regime={i}")
    return b, s


# ---------------------------------------------------------------------------
# Lyapunov data


def _step(x: np.ndarray, scale: float) -> np.ndarray:
    return scale * (1.0 + np.linalg.norm(x, axis=1))


def fd_gradient(f, x: np.ndarray, scale: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a vectorised scalar function."""
    x = np.asarray(x, dtype=float)
    h = _step(x, scale)
    g = np.empty_like(x)
    for k in range(x.shape[1]):
        xp = x.copy()
        xm = x.copy()
        xp[:, k] += h
        xm[:, k] -= h
        g[:, k] = (f(xp) - f(xm)) / (xp[:, k] - xm[:, k])
    return g


def fd_hessian(f, x: np.ndarray, scale: float = 1e-5, grad=None) -> np.ndarray:
    """Central-difference Hessian.

    With an analytic ``grad`` the gradient is differenced once; otherwise
    the standard second-difference stencils of ``f`` are used.
    """
    x = np.asarray(x, dtype=float)
    N, d = x.shape
    h = _step(x, scale)
    H = np.empty((N, d, d))
    if grad is not None:
        for k in range(d):
            xp = x.copy()
            xm = x.copy()
            xp[:, k] += h
            xm[:, k] -= h
            H[:, :, k] = (grad(xp) - grad(xm)) / (xp[:, k] - xm[:, k])[:, None]
        return 0.5 * (H + H.transpose(0, 2, 1))
    f0 = f(x)
    for k in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[:, k] += h
        xm[:, k] -= h
        hk = 0.5 * (xp[:, k] - xm[:, k])
        H[:, k, k] = (f(xp) - 2.0 * f0 + f(xm)) / hk**2
        for j in range(k):
            pp, pm, mp, mm = (x.copy() for _ in range(4))
            pp[:, k] += h
            pp[:, j] += h
            pm[:, k] += h
            pm[:, j] -= h
            mp[:, k] -= h
            mp[:, j] += h
            mm[:, k] -= h
            mm[:, j] -= h
            H[:, k, j] = H[:, j, k] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h)
    return H


@dataclass(frozen=True)
class LyapunovSpec:
    """Lyapunov function ``V(x, i)``, its lower bound ``phi`` and a coupled function.

    ``V(x, regimes)`` maps ``(N, d)`` positions and ``(N,)`` labels to ``(N,)``;
    ``phi`` and ``coupled`` map ``(N, d)`` to ``(N,)``. Derivative callbacks are
    optional and fall back to central differences with step
    ``fd_scale * (1 + |x|)``. ``gamma`` is the contraction rate with the regime
    frozen (at each label in ``gamma_regimes``, all labels when unset) and
    ``theta`` the rate shared by all regimes.
    """

    V: Callable
    phi: Callable
    coupled: Optional[Callable] = None
    grad_V: Optional[Callable] = None
    hess_V: Optional[Callable] = None
    coupled_grad: Optional[Callable] = None
    coupled_hess: Optional[Callable] = None
    lambda1: float = 0.0
    lambda2: float = 0.0
    gamma: Optional[float] = None
    theta: Optional[float] = None
    K_hat: Optional[float] = None
    fd_scale: float = 1e-5
    gamma_regimes: Optional[tuple] = None

    @property
    def analytic(self) -> bool:
        return self.grad_V is not None and self.hess_V is not None

    @property
    def coupled_analytic(self) -> bool:
        return self.coupled_grad is not None and self.coupled_hess is not None

    @property
    def rate(self) -> float:
        """Exponent ``lambda1 + lambda2`` of the moment bound."""
        return self.lambda1 + self.lambda2

    def value(self, x, regimes) -> np.ndarray:
        return np.asarray(self.V(x, regimes), dtype=float).reshape(len(x))

    def gradient(self, x, regimes) -> np.ndarray:
        if self.grad_V is not None:
            return np.asarray(self.grad_V(x, regimes), dtype=float).reshape(x.shape)
        return fd_gradient(lambda y: self.value(y, regimes), x, self.fd_scale)

    def hessian(self, x, regimes) -> np.ndarray:
        N, d = x.shape
        if self.hess_V is not None:
            return np.asarray(self.hess_V(x, regimes), dtype=float).reshape(N, d, d)
        grad = None if self.grad_V is None else (lambda y: self.gradient(y, regimes))
        return fd_hessian(lambda y: self.value(y, regimes), x, self.fd_scale, grad)

    def _need_coupled(self):
        if self.coupled is None:
            raise ValueError("LyapunovSpec has no coupled function")

    def coupled_value(self, z) -> np.ndarray:
        self._need_coupled()
        return np.asarray(self.coupled(z), dtype=float).reshape(len(z))

    def coupled_gradient(self, z) -> np.ndarray:
        self._need_coupled()
        if self.coupled_grad is not None:
            return np.asarray(self.coupled_grad(z), dtype=float).reshape(z.shape)
        return fd_gradient(self.coupled_value, z, self.fd_scale)

    def coupled_hessian(self, z) -> np.ndarray:
        self._need_coupled()
        N, d = z.shape
        if self.coupled_hess is not None:
            return np.asarray(self.coupled_hess(z), dtype=float).reshape(N, d, d)
        grad = None if self.coupled_grad is None else self.coupled_gradient
        return fd_hessian(self.coupled_value, z, self.fd_scale, grad)


def truncate(x, N_trunc: float) -> np.ndarray:
    """Radial projection ``N x / max(N, |x|)`` onto the closed ball of radius ``N``.

    Accepts a single point ``(d,)`` or a batch ``(K, d)``; scalars are 1-D points.
    """
    if N_trunc <= 0:
        raise ValueError("truncation radius must be positive")
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return truncate(x.reshape(1, 1), N_trunc).reshape(())
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    # slack of a few ulps keeps the map idempotent after rounding
    outside = norms > N_trunc * (1.0 + 4.0 * np.finfo(float).eps)
    return np.where(outside, (x * N_trunc) / np.maximum(norms, N_trunc), x)
