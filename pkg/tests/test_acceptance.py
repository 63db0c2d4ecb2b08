"""End-to-end acceptance checks, one test per criterion."""
import time

import numpy as np
import pytest
from scipy.linalg import expm

from mvx.catalog import example1, example2
from mvx.experiments import fit_log_rate, switching_rate_bound, verify_reports
from mvx.lyapunov import moment_bound_check
from mvx.measures import Euclidean, LyapunovCost, brute_force_cost, ot_cost, wasserstein_1d
from mvx.particle import InitialLaw, SimConfig, picard_law_iteration, simulate, synchronous_pair_simulate
from mvx.switching import coupled_generator, pair_state, transition_frequencies
from mvx.model import RateMatrix, validate_q_property

UNIF = InitialLaw("uniform", (-1.0, 1.0), "uniform")


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def bound_ratios(series, column, rate, times):
    """``E f(X_t) / (e^{rate t} E f(X_0))`` at the requested grid times."""
    idx = [int(np.argmin(np.abs(series.t - t))) for t in times]
    assert np.allclose(series.t[idx], times)
    v = series[column]
    return v[idx] / (np.exp(rate * np.asarray(times)) * v[0])


@pytest.fixture(scope="module")
def run1():
    spec, lyap = example1(beta=0.5)
    with Timer() as tm:
        ser = simulate(spec, lyap, UNIF, SimConfig(dt=1e-3, T=4.0, N=5000, seed=0, record_every=0.05))
    return lyap, ser, tm.elapsed


@pytest.fixture(scope="module")
def run2():
    spec, lyap = example2()
    with Timer() as tm:
        ser = simulate(spec, lyap, UNIF, SimConfig(dt=1e-3, T=3.0, N=5000, seed=0, record_every=0.05))
    return lyap, ser, tm.elapsed


def test_criterion_01_example1_moment_decay(run1):
    lyap, ser, elapsed = run1
    assert lyap.rate == -1.5
    ratios = bound_ratios(ser, "EV", -1.5, [1.0, 2.0, 4.0])
    print("ratios", ratios, "elapsed", elapsed)
    assert np.all(ratios <= 1.15)
    fit = fit_log_rate(ser.t, ser["EV"], ser.stderr("EV"))
    print(fit.describe())
    assert fit.slope <= -1.35
    assert elapsed <= 60


def test_criterion_02_example2_moment_decay(run2):
    lyap, ser, elapsed = run2
    ratios = bound_ratios(ser, "Ephi", -5.0 / 12.0, [1.0, 2.0, 3.0])
    print("ratios", ratios, "elapsed", elapsed)
    assert np.all(ratios <= 1.15)
    assert elapsed <= 60


def test_criterion_03_contraction_without_switching():
    spec, lyap = example1(beta=0.5, rates="none")
    cfg = SimConfig(dt=1e-3, T=3.0, N=5000, seed=0, record_every=0.05)
    with Timer() as tm:
        p = synchronous_pair_simulate(spec, lyap, InitialLaw("point", (2.0,), 1), InitialLaw("point", (-2.0,), 1), cfg)
    fit = fit_log_rate(p.t, p["pair_Vtilde"], p.stderr("pair_Vtilde"), window=(0.0, 3.0))
    print(fit.describe(), "elapsed", tm.elapsed)
    assert fit.slope <= -1.5 + 0.15
    assert tm.elapsed <= 60


def test_criterion_04_contraction_with_switching():
    spec, lyap = example2(rates="symmetric")
    cfg = SimConfig(dt=1e-3, T=3.0, N=5000, seed=0, record_every=0.05)
    with Timer() as tm:
        p = synchronous_pair_simulate(spec, lyap, InitialLaw("point", (1.0,), 1), InitialLaw("point", (-1.0,), 2), cfg)
    fit = fit_log_rate(p.t, p["pair_cost"], p.stderr("pair_cost"))
    theta_tilde, theta_c = switching_rate_bound(spec, lyap)
    agree = p["pair_agreement"][-1]
    print(fit.describe(), "theta_c", theta_c, "theta_tilde", theta_tilde, "agreement", agree, "elapsed", tm.elapsed)
    assert fit.slope < 0 and fit.ci_high < 0
    assert fit.slope <= -theta_tilde + 0.1
    assert p.t[-1] == pytest.approx(3.0) and agree >= 0.99
    assert tm.elapsed <= 90


def test_criterion_05_moment_bound_check(run1, run2):
    for lyap, ser, _ in (run1, run2):
        res = moment_bound_check(ser, lyap, 0.15)
        print("worst relative margin", res.worst_relative_margin)
        assert res.passed


@pytest.mark.parametrize("factory", [example1, example2], ids=["example1", "example2"])
def test_criterion_06_hypothesis_audits(factory):
    spec, lyap = factory()
    reports = verify_reports(spec, lyap, probes=1000)
    kinds = [r.kind for r in reports]
    assert kinds == ["H2", "H5", "H6"]
    for r in reports:
        print(r.to_text())
        assert r.passed
    assert reports[0].probes.startswith("1000 points")


def test_criterion_07_ot_oracle_equivalence():
    rng = np.random.default_rng(2024)
    costs = [Euclidean(2), Euclidean(1), LyapunovCost(lambda z: np.sum(np.abs(z) ** 3, axis=1))]
    with Timer() as tm:
        for _ in range(50):
            a = rng.normal(size=(8, 2))
            b = rng.normal(size=(8, 2)) + rng.normal(size=2)
            for cost in costs:
                assert abs(ot_cost(a, b, cost).value - brute_force_cost(a, b, cost)) <= 1e-10
        for _ in range(50):
            n = int(rng.integers(2, 200))
            a = rng.normal(size=n) * rng.uniform(0.1, 5)
            b = rng.exponential(size=n)
            for p in (1, 2):
                assert abs(ot_cost(a, b, Euclidean(p)).value - wasserstein_1d(a, b, p)) <= 1e-10
    print("elapsed", tm.elapsed)
    assert tm.elapsed <= 30


def _random_generator(rng, m):
    Q = rng.exponential(size=(m, m)) * (rng.uniform(size=(m, m)) < 0.8)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def test_criterion_08_coupling_marginality():
    rng = np.random.default_rng(8)
    for k in range(100):
        m = (2, 3, 5)[k % 3]
        Q1, Q2 = _random_generator(rng, m), _random_generator(rng, m)
        G = coupled_generator(Q1[None], Q2[None])[0]
        for i in range(1, m + 1):
            for l in range(1, m + 1):
                row = G[pair_state(i, l, m)]
                # rate at which the first coordinate moves i -> j, whatever the second does
                for j in range(1, m + 1):
                    if j == i:
                        continue
                    first = sum(row[pair_state(j, jj, m)] for jj in range(1, m + 1))
                    assert first == pytest.approx(Q1[i - 1, j - 1], rel=1e-14, abs=1e-15)
                for j in range(1, m + 1):
                    if j == l:
                        continue
                    second = sum(row[pair_state(ii, j, m)] for ii in range(1, m + 1))
                    assert second == pytest.approx(Q2[l - 1, j - 1], rel=1e-14, abs=1e-15)
        rm = RateMatrix(lambda z, G=G: np.broadcast_to(G, (len(z),) + G.shape), m * m, float(np.max(np.abs(G))))
        assert validate_q_property(rm, np.zeros((1, 1))).passed


def test_criterion_09_switching_sampler():
    rng = np.random.default_rng(9)
    n = 10**6
    with Timer() as tm:
        for _ in range(3):
            Q = _random_generator(rng, 3)
            start = int(rng.integers(1, 4))
            dt = 0.5
            p = expm(dt * Q)[start - 1]
            f = transition_frequencies(Q, start, dt, "thinning", n, rng)
            se = np.sqrt(p * (1 - p) / n)
            print("thinning", f - p, se)
            assert np.all(np.abs(f - p) <= 3 * se)
            dt1 = 0.5 / (float(np.max(np.abs(Q))) * 2)
            dt1 = min(dt1, 0.05)
            p1 = expm(dt1 * Q)[start - 1]
            f1 = transition_frequencies(Q, start, dt1, "first-order", n, rng)
            se1 = np.sqrt(p1 * (1 - p1) / n)
            print("first-order", dt1, f1 - p1, se1)
            assert np.all(np.abs(f1 - p1) <= 5 * dt1**2 + 3 * se1)
    print("elapsed", tm.elapsed)
    assert tm.elapsed <= 60


def _csv(workers=1, trunc=None):
    spec, lyap = example1(beta=0.5)
    cfg = SimConfig(dt=1e-3, T=1.0, N=5000, seed=42, workers=workers, trunc=trunc, record_every=0.05)
    return simulate(spec, lyap, UNIF, cfg).to_csv().encode()


def test_criterion_10_determinism_and_truncation():
    base = _csv()
    assert base == _csv()
    assert base == _csv(workers=4)
    assert base == _csv(trunc=1e6)


def test_criterion_11_picard_iteration():
    spec, _ = example1(beta=0.5)
    d = picard_law_iteration(spec, UNIF, SimConfig(dt=1e-3, T=0.5, N=5000, seed=0, record_every=0.05), rounds=4)
    print("distances", d)
    assert len(d) == 4
    assert all(b < a for a, b in zip(d, d[1:]))
