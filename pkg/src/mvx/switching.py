"""Regime samplers and couplings for x-dependent switching generators.

Regime labels are 1-based everywhere in the public API. Product states of a
coupled pair ``(k, l)`` are numbered ``(k - 1) * m + (l - 1)`` (0-based) in
coupled generator matrices.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .model import RateMatrix, validate_q_property
from .rng import generator_source

FIRST_ORDER_SAFETY = 0.5


class SwitchMode(str, Enum):
    FIRST_ORDER = "first-order"
    THINNING = "thinning"

    @classmethod
    def parse(cls, value) -> "SwitchMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ValueError(f"unknown switch mode {value!r}; expected first-order or thinning")


def check_first_order(bound: float, m: int, dt: float):
    """Setup check ``dt * M_q * (m - 1) <= 0.5`` for first-order sampling."""
    load = dt * bound * (m - 1)
    if load > FIRST_ORDER_SAFETY:
        raise ValueError(
            f"first-order switching needs dt*M_q*(m-1) <= {FIRST_ORDER_SAFETY}, "
            f"got {load:.4g} (dt={dt}, M_q={bound}, m={m}); reduce dt or use thinning"
        )


# ---------------------------------------------------------------------------
# Poisson-measure representation


def interval_layout(Q) -> np.ndarray:
    """Right endpoints of the consecutive intervals ``Δ_ij`` for one generator.

    Returns an ``(m, m)`` array ``E`` such that ``Δ_ij = [E[i, j] - q_ij, E[i, j])``
    for ``j != i``; intervals are laid out in lexicographic ``(i, j)`` order
    starting at 0, and diagonal slots have zero length.
    """
    Q = np.asarray(Q, dtype=float)
    off = Q * (1.0 - np.eye(len(Q)))
    return np.cumsum(off.ravel()).reshape(Q.shape)


def _h_batch(Q: np.ndarray, r0: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorised ``h``: target 0-based regimes, unchanged where ``z`` misses."""
    N, m, _ = Q.shape
    off = Q.copy()
    off[:, np.arange(m), np.arange(m)] = 0.0
    ar = np.arange(N)
    row_tot = off.sum(axis=2)
    start = np.cumsum(row_tot, axis=1)[ar, r0] - row_tot[ar, r0]
    edges = start[:, None] + np.cumsum(off[ar, r0, :], axis=1)
    idx = np.count_nonzero(edges <= z[:, None], axis=1)
    hit = (z >= start) & (idx < m)
    return np.where(hit, idx, r0)


def h_function(rates: RateMatrix, x, i: int, z: float) -> int:
    """Jump displacement ``j - i`` if ``z`` falls in ``Δ_ij(x)``, else 0."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    Q = rates(x)[None]
    r0 = np.array([int(i) - 1])
    return int(_h_batch(Q, r0, np.array([float(z)]))[0] - r0[0])


def _poisson_counts(u: np.ndarray, lam: float) -> np.ndarray:
    """Poisson(lam) variates by inversion of uniforms."""
    if lam <= 0.0:
        return np.zeros(u.shape, dtype=np.int64)
    kmax = int(lam + 12.0 * np.sqrt(lam) + 40.0)
    k = np.arange(kmax + 1)
    logpmf = -lam + k * np.log(lam) - np.cumsum(np.log(np.maximum(k, 1)))
    cdf = np.cumsum(np.exp(logpmf))
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def sample_regimes(Q, regimes, dt: float, mode, draw, bound: float) -> np.ndarray:
    """Advance a batch of chains by ``dt`` with the position frozen.

    Parameters
    ----------
    Q : ndarray, shape (N, m, m)
        Generator seen by each chain during the step.
    regimes : ndarray of int, shape (N,)
        Current labels in ``1..m``.
    mode : SwitchMode
        ``FIRST_ORDER`` draws one categorical with ``p_ij = q_ij dt``;
        ``THINNING`` runs a Poisson clock of rate ``m * bound`` and applies
        ``h`` at each epoch.
    draw : callable
        ``draw(slot)`` returns ``N`` fresh uniforms; slot 0 feeds the
        categorical or the epoch count, slot ``1 + e`` the ``e``-th epoch.
    bound : float
        Uniform bound on ``|q_ij|``.
    """
    mode = SwitchMode.parse(mode)
    regimes = np.asarray(regimes, dtype=np.int64)
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return regimes.copy()
    Q = np.asarray(Q, dtype=float)
    N, m, _ = Q.shape
    r0 = regimes - 1
    ar = np.arange(N)
    if mode is SwitchMode.FIRST_ORDER:
        p = Q[ar, r0, :] * dt
        p[ar, r0] = 0.0
        stay = 1.0 - p.sum(axis=1)
        if np.any(p < 0) or np.any(stay < 0):
            raise ValueError(f"first-order switching probabilities left [0, 1] at dt={dt}; dt too large")
        p[ar, r0] = stay
        cum = np.cumsum(p, axis=1)
        u = draw(0)
        idx = np.minimum(np.count_nonzero(cum <= u[:, None], axis=1), m - 1)
        return idx + 1
    lam = m * bound
    counts = _poisson_counts(draw(0), lam * dt)
    cur = r0.copy()
    for e in range(int(counts.max(initial=0))):
        z = draw(1 + e) * lam
        nxt = _h_batch(Q, cur, z)
        cur = np.where(counts > e, nxt, cur)
    return cur + 1


def step_regime(rates: RateMatrix, x, i: int, dt: float, mode, rng: np.random.Generator) -> int:
    """One regime update of a single chain at frozen position ``x``."""
    mode = SwitchMode.parse(mode)
    if mode is SwitchMode.FIRST_ORDER and dt > 0:
        check_first_order(rates.bound, rates.m, dt)
    Q = rates(x)[None]
    return int(sample_regimes(Q, np.array([i]), dt, mode, generator_source(rng, 1), rates.bound)[0])


def transition_frequencies(Q, i: int, dt: float, mode, n_trials: int, rng) -> np.ndarray:
    """Empirical one-step transition frequencies from regime ``i`` for a constant ``Q``."""
    Q = np.asarray(Q, dtype=float)
    m = len(Q)
    bound = float(np.max(np.abs(Q)))
    if SwitchMode.parse(mode) is SwitchMode.FIRST_ORDER:
        check_first_order(bound, m, dt)
    Qb = np.broadcast_to(Q, (n_trials, m, m))
    out = sample_regimes(Qb, np.full(n_trials, i), dt, mode, generator_source(rng, n_trials), bound)
    return np.bincount(out - 1, minlength=m) / n_trials


# ---------------------------------------------------------------------------
# couplings


def pair_state(k: int, l: int, m: int) -> int:
    """0-based index of the product state ``(k, l)`` (1-based labels)."""
    return (k - 1) * m + (l - 1)


def coupled_generator(Q1: np.ndarray, Q2: np.ndarray) -> np.ndarray:
    """Basic coupling of two batches of generators, shape ``(N, m*m, m*m)``.

    With ``a = Q1`` and ``b = Q2`` after zeroing their diagonals, the state
    ``(k, l)`` moves to ``(j, l)`` at rate ``(a_kj - b_lj)^+``, to ``(k, j)`` at
    rate ``(b_lj - a_kj)^+`` and to ``(j, j)`` at rate ``a_kj ∧ b_lj``.
    """
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    N, m, _ = Q1.shape
    diag = np.arange(m)
    a = Q1.copy()
    b = Q2.copy()
    a[:, diag, diag] = 0.0
    b[:, diag, diag] = 0.0
    G = np.zeros((N, m * m, m * m))
    for k in range(m):
        for l in range(m):
            s = k * m + l
            ak = a[:, k, :]
            bl = b[:, l, :]
            for j in range(m):
                if j != k:
                    G[:, s, j * m + l] += np.maximum(ak[:, j] - bl[:, j], 0.0)
                if j != l:
                    G[:, s, k * m + j] += np.maximum(bl[:, j] - ak[:, j], 0.0)
                G[:, s, j * m + j] += np.minimum(ak[:, j], bl[:, j])
            G[:, s, s] = 0.0
            G[:, s, s] = -G[:, s, :].sum(axis=1)
    return G


class CoupledRateMatrix:
    """Basic coupling ``(x1, x2) -> Q~(x1, x2)`` of one or two rate matrices."""

    def __init__(self, rates1: RateMatrix, rates2: RateMatrix | None = None):
        rates2 = rates1 if rates2 is None else rates2
        if rates1.m != rates2.m:
            raise ValueError("coupled generators need the same number of regimes")
        self.rates1 = rates1
        self.rates2 = rates2
        self.m = rates1.m

    @property
    def bound(self) -> float:
        """Bound on the product generator entries (the exit rate of a pair)."""
        return self.rates1.bound + self.rates2.bound

    def evaluate(self, x1, x2) -> np.ndarray:
        return coupled_generator(self.rates1.evaluate(x1), self.rates2.evaluate(x2))

    def __call__(self, x1, x2) -> np.ndarray:
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        return self.evaluate(x1[None], x2[None])[0]


def basic_coupling(rates: RateMatrix, x1, x2, rates2: RateMatrix | None = None) -> np.ndarray:
    """Product-space generator coupling ``Q(x1)`` and ``Q(x2)``.

    Returns an ``(m*m, m*m)`` matrix indexed by :func:`pair_state`.
    Raises ``ValueError`` if either marginal generator violates the q-property.
    """
    rates2 = rates if rates2 is None else rates2
    for r, x in ((rates, x1), (rates2, x2)):
        report = validate_q_property(r, [np.atleast_1d(np.asarray(x, dtype=float))])
        if not report.passed:
            raise ValueError(f"basic_coupling: generator fails the q-property\n{report}")
    return CoupledRateMatrix(rates, rates2)(x1, x2)


def sample_coupled(G, r1, r2, dt: float, mode, draw, bound: float):
    """Advance coupled pairs under product generators ``G`` of shape ``(N, m*m, m*m)``."""
    m = int(round(np.sqrt(G.shape[1])))
    s = (np.asarray(r1) - 1) * m + (np.asarray(r2) - 1) + 1
    out = sample_regimes(G, s, dt, mode, draw, bound) - 1
    return out // m + 1, out % m + 1


def _require_constant(rates: RateMatrix):
    if not rates.constant:
        raise ValueError(
            "meet-and-merge coupling needs an x-independent generator; "
            "use basic_coupling for x-dependent rates"
        )


def meet_and_merge(rates: RateMatrix, r1, r2, dt: float, mode, draw1, draw2):
    """Vectorised meet-and-merge step: independent until equal, then shared moves."""
    _require_constant(rates)
    r1 = np.asarray(r1, dtype=np.int64)
    r2 = np.asarray(r2, dtype=np.int64)
    Q = np.broadcast_to(rates.matrix, (len(r1), rates.m, rates.m))
    n1 = sample_regimes(Q, r1, dt, mode, draw1, rates.bound)
    n2 = sample_regimes(Q, r2, dt, mode, draw2, rates.bound)
    return n1, np.where(r1 == r2, n1, n2)


def meet_and_merge_step(rates_const: RateMatrix, i: int, j: int, dt: float, rng, mode=SwitchMode.THINNING):
    """Single-pair meet-and-merge step for a constant generator."""
    _require_constant(rates_const)
    mode = SwitchMode.parse(mode)
    if mode is SwitchMode.FIRST_ORDER and dt > 0:
        check_first_order(rates_const.bound, rates_const.m, dt)
    n1, n2 = meet_and_merge(
        rates_const, [i], [j], dt, mode, generator_source(rng, 1), generator_source(rng, 1)
    )
    return int(n1[0]), int(n2[0])


def meeting_rate(Q) -> float:
    """Exact exponential decay rate of ``P(tau > t)`` for two independent ``Q``-chains.

    Minus the leading eigenvalue of the product generator killed on the
    diagonal; for two states this is ``q_12 + q_21``.
    """
    Q = np.asarray(Q, dtype=float)
    m = len(Q)
    if m == 1:
        return np.inf
    eye = np.eye(m)
    P = np.kron(Q, eye) + np.kron(eye, Q)
    keep = [k * m + l for k in range(m) for l in range(m) if k != l]
    sub = P[np.ix_(keep, keep)]
    return float(-np.max(np.linalg.eigvals(sub).real))
