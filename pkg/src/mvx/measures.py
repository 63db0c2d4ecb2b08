"""Empirical measures and transport distances between them.

All exact distances reduce to an assignment problem between two equal-size,
equal-weight samples; the one-dimensional Wasserstein distance is computed
independently by quantile coupling and serves as a cross-check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .model import truncate

N_EXACT = 512
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted atoms on ``R^d``, optionally tagged with regime labels."""

    atoms: np.ndarray
    weights: np.ndarray
    regimes: Optional[np.ndarray] = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        w = np.asarray(self.weights, dtype=float)
        if len(atoms) == 0:
            raise ValueError("empirical measure needs at least one atom")
        if w.shape != (len(atoms),):
            raise ValueError(f"weights shape {w.shape} does not match {len(atoms)} atoms")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)
        if self.regimes is not None:
            r = np.asarray(self.regimes, dtype=np.int64)
            if r.shape != (len(atoms),):
                raise ValueError("regimes must have one label per atom")
            object.__setattr__(self, "regimes", r)

    @classmethod
    def from_samples(cls, x, regimes=None, weights=None) -> "EmpiricalMeasure":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if weights is None:
            weights = np.full(len(x), 1.0 / len(x))
        return cls(x, weights, regimes)

    def __len__(self):
        return len(self.atoms)

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def subset(self, idx) -> "EmpiricalMeasure":
        reg = None if self.regimes is None else self.regimes[idx]
        return EmpiricalMeasure.from_samples(self.atoms[idx], reg)


def _as_measure(mu) -> EmpiricalMeasure:
    if isinstance(mu, EmpiricalMeasure):
        return mu
    return EmpiricalMeasure.from_samples(mu)


# ---------------------------------------------------------------------------
# ground costs


class GroundCost:
    """Pairwise cost between atoms; ``root`` is applied to the optimal mean cost."""

    root = 1.0

    def matrix(self, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
        raise NotImplementedError

    def finalize(self, mean_cost: float) -> float:
        return mean_cost if self.root == 1.0 else mean_cost**self.root


def _diff_apply(fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    z = (a[:, None, :] - b[None, :, :]).reshape(-1, a.shape[1])
    return np.asarray(fn(z), dtype=float).reshape(len(a), len(b))


@dataclass(frozen=True)
class Euclidean(GroundCost):
    """``|x - y|^p``; the transport value is ``W_p``."""

    p: int = 2

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError("Euclidean cost supports p in {1, 2}")

    @property
    def root(self):
        return 1.0 / self.p

    def matrix(self, mu, nu):
        if self.p == 2:
            return cdist(mu.atoms, nu.atoms, "sqeuclidean")
        return cdist(mu.atoms, nu.atoms, "euclidean")


@dataclass(frozen=True)
class TruncatedEuclidean(GroundCost):
    """``|phi_N(x) - phi_N(y)|^2``; the transport value is ``W_{2,N}``."""

    radius: float
    root = 0.5

    def matrix(self, mu, nu):
        return cdist(truncate(mu.atoms, self.radius), truncate(nu.atoms, self.radius), "sqeuclidean")


@dataclass(frozen=True)
class LyapunovCost(GroundCost):
    """``V(x - y)`` for a vectorised ``V: (K, d) -> (K,)``; value is ``W_V``."""

    fn: Callable

    def matrix(self, mu, nu):
        return _diff_apply(self.fn, mu.atoms, nu.atoms)


@dataclass(frozen=True)
class ProductCost(GroundCost):
    """``sqrt(1{i != j} + V(x - y))`` on ``R^d x M``; value is ``W_d``."""

    fn: Callable

    def matrix(self, mu, nu):
        if mu.regimes is None or nu.regimes is None:
            raise ValueError("ProductCost needs regime labels on both measures")
        mismatch = (mu.regimes[:, None] != nu.regimes[None, :]).astype(float)
        return np.sqrt(mismatch + _diff_apply(self.fn, mu.atoms, nu.atoms))


# ---------------------------------------------------------------------------
# solvers


class OTResult(NamedTuple):
    value: float
    coupling: np.ndarray

    @property
    def perm(self) -> np.ndarray:
        """``perm[k]`` is the ``nu`` atom matched to ``mu`` atom ``k``."""
        order = np.argsort(self.coupling[:, 0], kind="stable")
        return self.coupling[order, 1]


def _subsample(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(n, size=k, replace=False))


def ot_cost(mu, nu, cost: GroundCost, *, n_exact: int = N_EXACT, subsample: bool = False, seed: int = 0) -> OTResult:
    """Optimal assignment cost between two equal-weight samples.

    Inputs larger than ``n_exact`` atoms are subsampled without replacement
    (seeded by ``seed``) down to ``n_exact``; unequal sizes are only accepted
    with ``subsample=True``, in which case both sides are cut to the smaller
    size. The returned coupling lists matched ``(mu_index, nu_index)`` pairs in
    original indexing.
    """
    mu = _as_measure(mu)
    nu = _as_measure(nu)
    if mu.d != nu.d:
        raise ValueError(f"dimension mismatch: {mu.d} vs {nu.d}")
    if not (mu.uniform and nu.uniform):
        raise ValueError("the assignment solver needs equal-weight samples")
    if len(mu) != len(nu) and not subsample:
        raise ValueError(f"sample sizes differ ({len(mu)} vs {len(nu)}); pass subsample=True")
    n = min(len(mu), len(nu), n_exact)
    rng = np.random.default_rng(seed)
    idx_mu = np.arange(len(mu)) if len(mu) == n else _subsample(len(mu), n, rng)
    idx_nu = np.arange(len(nu)) if len(nu) == n else _subsample(len(nu), n, rng)
    a = mu if len(mu) == n else mu.subset(idx_mu)
    b = nu if len(nu) == n else nu.subset(idx_nu)
    C = cost.matrix(a, b)
    if not np.all(np.isfinite(C)):
        raise ValueError("ground cost produced non-finite entries")
    rows, cols = linear_sum_assignment(C)
    mean_cost = math.fsum(C[rows, cols]) / n
    coupling = np.column_stack([idx_mu[rows], idx_nu[cols]])
    return OTResult(cost.finalize(mean_cost), coupling)


def brute_force_cost(mu, nu, cost: GroundCost) -> float:
    """Minimum over all permutations; only for tiny samples."""
    mu = _as_measure(mu)
    nu = _as_measure(nu)
    C = cost.matrix(mu, nu)
    n = len(C)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    best = float(np.min(C[np.arange(n), perms].sum(axis=1)))
    return cost.finalize(best / n)


def _values_weights(mu):
    if isinstance(mu, EmpiricalMeasure):
        if mu.d != 1:
            raise ValueError(f"wasserstein_1d needs d = 1, got d = {mu.d}")
        return mu.atoms[:, 0], mu.weights
    x = np.asarray(mu, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError(f"wasserstein_1d needs d = 1, got d = {x.shape[1]}")
        x = x[:, 0]
    return x, None


def wasserstein_1d(mu, nu, p: int = 2) -> float:
    """``W_p`` on the line via the monotone (quantile) coupling."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    a, wa = _values_weights(mu)
    b, wb = _values_weights(nu)
    if wa is not None and np.all(wa == wa[0]):
        wa = None
    if wb is not None and np.all(wb == wb[0]):
        wb = None
    if wa is None and wb is None and len(a) == len(b):
        diff = np.abs(np.sort(a) - np.sort(b))
        return (math.fsum(diff**p) / len(a)) ** (1.0 / p)
    if wa is None:
        wa = np.full(len(a), 1.0 / len(a))
    if wb is None:
        wb = np.full(len(b), 1.0 / len(b))
    ia = np.argsort(a, kind="stable")
    ib = np.argsort(b, kind="stable")
    a, wa = a[ia], wa[ia]
    b, wb = b[ib], wb[ib]
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    u = np.unique(np.concatenate([ca, cb]))
    widths = np.diff(np.concatenate([[0.0], u]))
    mid = u - 0.5 * widths
    qa = a[np.minimum(np.searchsorted(ca, mid, side="right"), len(a) - 1)]
    qb = b[np.minimum(np.searchsorted(cb, mid, side="right"), len(b) - 1)]
    return math.fsum(widths * np.abs(qa - qb) ** p) ** (1.0 / p)


def w_truncated(mu, nu, N_trunc: float, **kwargs) -> float:
    """``W_{2,N}``: ``W_2`` after mapping every atom through ``phi_N``."""
    if N_trunc <= 0:
        raise ValueError("truncation radius must be positive")
    return ot_cost(mu, nu, TruncatedEuclidean(float(N_trunc)), **kwargs).value


# ---------------------------------------------------------------------------
# binned weighted total variation


@dataclass(frozen=True)
class BinSpec:
    """Regular grid ``[lower, upper]`` with bin ``width`` per coordinate."""

    lower: tuple
    upper: tuple
    width: tuple

    @classmethod
    def regular(cls, lower, upper, width) -> "BinSpec":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        w = np.broadcast_to(np.asarray(width, dtype=float), lo.shape)
        return cls(tuple(lo), tuple(hi), tuple(w))

    def edges(self):
        out = []
        for lo, hi, w in zip(self.lower, self.upper, self.width):
            n = max(1, int(round((hi - lo) / w)))
            out.append(lo + w * np.arange(n + 1))
        return out


@dataclass
class BinnedTV:
    value: float
    n_bins: int
    occupied: int
    eps_bin: float

    def __float__(self):
        return float(self.value)


def weighted_tv_binned(mu, nu, weight: Callable, bins: BinSpec) -> BinnedTV:
    """Binned estimate of ``sup_{|f| <= weight} |mu(f) - nu(f)|``.

    Returns ``sum_B weight(center_B) |mu(B) - nu(B)|``. When both measures carry
    regime labels the sum also runs over regimes and ``weight`` is called as
    ``weight(centers, regime)``; otherwise as ``weight(centers)``. ``eps_bin`` is
    the largest oscillation of the weight over an occupied bin (corners and
    center sampled).
    """
    mu = _as_measure(mu)
    nu = _as_measure(nu)
    d = mu.d
    if nu.d != d:
        raise ValueError(f"dimension mismatch: {mu.d} vs {nu.d}")
    if d > 3:
        raise ValueError("gridded bins support d <= 3")
    if len(bins.lower) != d:
        raise ValueError(f"bin spec has {len(bins.lower)} dimensions, measures have {d}")
    edges = bins.edges()
    for name, m_ in (("mu", mu), ("nu", nu)):
        lo, hi = m_.atoms.min(axis=0), m_.atoms.max(axis=0)
        if np.any(lo < [e[0] for e in edges]) or np.any(hi > [e[-1] for e in edges]):
            raise ValueError(
                f"atoms of {name} span [{lo.tolist()}, {hi.tolist()}] outside the bin range "
                f"[{[e[0] for e in edges]}, {[e[-1] for e in edges]}]"
            )
    product = mu.regimes is not None and nu.regimes is not None
    labels = np.union1d(mu.regimes, nu.regimes) if product else [None]
    centers_axes = [0.5 * (e[:-1] + e[1:]) for e in edges]
    grid = np.stack(np.meshgrid(*centers_axes, indexing="ij"), axis=-1).reshape(-1, d)
    corner_offsets = np.array(list(itertools.product(*[(-0.5, 0.5)] * d)))
    widths = np.array([e[1] - e[0] for e in edges])

    def w_at(pts, lab):
        out = weight(pts, lab) if product else weight(pts)
        return np.asarray(out, dtype=float).reshape(len(pts))

    total = []
    eps = 0.0
    occupied = 0
    for lab in labels:
        sel_mu = slice(None) if lab is None else mu.regimes == lab
        sel_nu = slice(None) if lab is None else nu.regimes == lab
        hm, _ = np.histogramdd(mu.atoms[sel_mu], bins=edges, weights=mu.weights[sel_mu])
        hn, _ = np.histogramdd(nu.atoms[sel_nu], bins=edges, weights=nu.weights[sel_nu])
        diff = np.abs(hm - hn).reshape(-1)
        occ = ((hm > 0) | (hn > 0)).reshape(-1)
        occupied += int(occ.sum())
        wc = w_at(grid, lab)
        total.append(wc * diff)
        if occ.any():
            pts = grid[occ]
            vals = [w_at(pts + off * widths, lab) for off in corner_offsets] + [wc[occ]]
            vals = np.stack(vals)
            eps = max(eps, float(np.max(vals.max(axis=0) - vals.min(axis=0))))
    value = math.fsum(np.concatenate(total))
    return BinnedTV(value, len(grid) * len(labels), occupied, eps)
