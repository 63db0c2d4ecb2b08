"""Builtin one-dimensional models with their Lyapunov data.

``example1`` has a cubic, mean-reverting regime and a linear regime, both
reading the law through ``∫(x + βy) μ(dy)``; ``example2`` has a position-dependent
two-state generator. ``rates`` selects the switching generator: ``"default"``,
``"symmetric"`` (constant ``[[-1, 1], [1, -1]]``) or ``"none"`` (no switching).
"""
from __future__ import annotations

import numpy as np

from .model import (
    CoefficientField,
    LyapunovSpec,
    ModelSpec,
    RateMatrix,
    mean_functional,
    second_moment_functional,
)

EXAMPLE1_RATES = np.array([[-1.0, 1.0], [2.0, -2.0]])
SYMMETRIC_RATES = np.array([[-1.0, 1.0], [1.0, -1.0]])


def _select_rates(rates, default: RateMatrix) -> RateMatrix:
    if isinstance(rates, RateMatrix):
        return rates
    if rates is None or rates == "default":
        return default
    if rates == "symmetric":
        return RateMatrix.from_matrix(SYMMETRIC_RATES)
    if rates == "none":
        return RateMatrix.zero(2)
    return RateMatrix.from_matrix(rates)


def _by_regime(regimes, first, second):
    return np.where((regimes == 1)[:, None], first, second)


def example1(beta: float = 0.5, rates="default"):
    """Cubic/linear two-regime model with mean-field coupling strength ``beta``."""
    beta = float(beta)

    def drift(t, x, stats, regimes):
        m = stats["mean"][0]
        return _by_regime(regimes, -x * x * x - 2.0 * (x + beta * m), -2.0 * x)

    def diffusion(t, x, stats, regimes):
        m = stats["mean"][0]
        return _by_regime(regimes, x + beta * m, x)[:, :, None]

    spec = ModelSpec(
        CoefficientField(drift, diffusion, d=1, n=1),
        _select_rates(rates, RateMatrix.from_matrix(EXAMPLE1_RATES)),
        (mean_functional(), second_moment_functional()),
        name="example1",
    )
    rate = 2.0 - 2.0 * beta**2
    lyap = LyapunovSpec(
        V=lambda x, i: np.sum(x * x, axis=1),
        phi=lambda x: np.sum(x * x, axis=1),
        coupled=lambda z: np.sum(z * z, axis=1),
        grad_V=lambda x, i: 2.0 * x,
        hess_V=lambda x, i: np.broadcast_to(2.0 * np.eye(x.shape[1]), (len(x), x.shape[1], x.shape[1])),
        coupled_grad=lambda z: 2.0 * z,
        coupled_hess=lambda z: np.broadcast_to(2.0 * np.eye(z.shape[1]), (len(z), z.shape[1], z.shape[1])),
        lambda1=-2.0,
        lambda2=2.0 * beta**2,
        gamma=rate,
        theta=rate,
        K_hat=4.0,
    )
    return spec, lyap


def example2_rates() -> RateMatrix:
    def fn(x):
        up = 1.0 / 3.0 + 0.25 * np.cos(x[:, 0])
        down = 7.0 / 3.0 + 0.5 * np.sin(x[:, 0])
        Q = np.empty((len(x), 2, 2))
        Q[:, 0, 0] = -up
        Q[:, 0, 1] = up
        Q[:, 1, 0] = down
        Q[:, 1, 1] = -down
        return Q

    return RateMatrix(fn, 2, bound=7.0 / 3.0 + 0.5)


def example2(rates="default"):
    """Cubic/linear model whose switching intensities depend on the position."""

    def drift(t, x, stats, regimes):
        return _by_regime(regimes, -x * x * x - x, -0.5 * x)

    def diffusion(t, x, stats, regimes):
        m = stats["mean"][0]
        return _by_regime(regimes, np.full_like(x, m), x + 2.0 * m)[:, :, None]

    spec = ModelSpec(
        CoefficientField(drift, diffusion, d=1, n=1),
        _select_rates(rates, example2_rates()),
        (mean_functional(),),
        name="example2",
    )
    weight = np.array([1.0, 2.0])
    lyap = LyapunovSpec(
        V=lambda x, i: weight[np.asarray(i) - 1] * np.abs(x[:, 0]),
        phi=lambda x: np.abs(x[:, 0]),
        coupled=lambda z: np.abs(z[:, 0]),
        grad_V=lambda x, i: weight[np.asarray(i) - 1][:, None] * np.sign(x),
        hess_V=lambda x, i: np.zeros((len(x), 1, 1)),
        coupled_grad=lambda z: np.sign(z),
        coupled_hess=lambda z: np.zeros((len(z), 1, 1)),
        lambda1=-5.0 / 12.0,
        lambda2=0.0,
        gamma=1.0,
        theta=0.5,
        K_hat=2.0,
        gamma_regimes=(1,),
    )
    return spec, lyap


BUILTINS = {"example1": example1, "example2": example2}


def get_builtin(name: str, **params):
    """Return ``(ModelSpec, LyapunovSpec)`` for a registered builtin."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; builtins are {sorted(BUILTINS)}") from None
    return factory(**params)
