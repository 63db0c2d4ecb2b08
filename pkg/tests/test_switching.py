import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from mvx.catalog import example2_rates
from mvx.model import RateMatrix, validate_q_property
from mvx.rng import generator_source
from mvx.switching import (
    SwitchMode,
    basic_coupling,
    check_first_order,
    coupled_generator,
    h_function,
    interval_layout,
    meet_and_merge_step,
    meeting_rate,
    pair_state,
    sample_regimes,
    step_regime,
    transition_frequencies,
)


def random_generator(rng, m, scale=1.0):
    Q = rng.uniform(0, scale, size=(m, m))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


@st.composite
def generators(draw, m=None):
    m = draw(st.sampled_from([2, 3, 4])) if m is None else m
    vals = draw(st.lists(st.floats(0, 5), min_size=m * m, max_size=m * m))
    Q = np.array(vals).reshape(m, m)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def test_mode_parse():
    assert SwitchMode.parse("first_order") is SwitchMode.FIRST_ORDER
    assert SwitchMode.parse("THINNING") is SwitchMode.THINNING
    with pytest.raises(ValueError):
        SwitchMode.parse("exact")


def test_interval_layout_is_lexicographic():
    E = interval_layout([[-1, 1], [2, -2]])
    # Δ_12 = [0, 1), Δ_21 = [1, 3)
    assert E[0, 1] == 1.0 and E[1, 0] == 3.0


def test_h_function_example2_at_zero():
    rates = example2_rates()
    x = np.array([0.0])
    # Δ_12(0) = [0, 7/12), Δ_21(0) = [7/12, 7/12 + 7/3)
    assert h_function(rates, x, 1, 0.5) == 1
    assert h_function(rates, x, 1, 0.6) == 0
    assert h_function(rates, x, 2, 0.6) == -1
    assert h_function(rates, x, 2, 0.5) == 0
    assert h_function(rates, x, 2, 7 / 12 + 7 / 3 + 0.01) == 0


def test_step_regime_dt_zero_unchanged():
    rates = RateMatrix.from_matrix([[-5, 5], [5, -5]])
    rng = np.random.default_rng(0)
    for mode in SwitchMode:
        assert step_regime(rates, [0.0], 2, 0.0, mode, rng) == 2


def test_first_order_single_step_from_constant_q():
    # dt = 0.01 from regime 1 with q_12 = 1: P(switch) = 0.01
    freq = transition_frequencies([[-1, 1], [2, -2]], 1, 0.01, "first-order", 400_000, np.random.default_rng(4))
    se = np.sqrt(0.01 * 0.99 / 400_000)
    assert abs(freq[1] - 0.01) < 3 * se


def test_first_order_setup_check():
    with pytest.raises(ValueError, match="reduce dt"):
        check_first_order(10.0, 3, 0.1)
    check_first_order(1.0, 2, 0.5)


def test_thinning_matches_expm_small():
    Q = np.array([[-1.0, 1.0], [2.0, -2.0]])
    n = 200_000
    f = transition_frequencies(Q, 2, 0.5, "thinning", n, np.random.default_rng(8))
    p = expm(0.5 * Q)[1]
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(f - p) <= 3 * se)


def test_sample_regimes_uses_supplied_draws():
    Q = np.broadcast_to(np.array([[-1.0, 1.0], [1.0, -1.0]]), (4, 2, 2))
    a = sample_regimes(Q, np.array([1, 2, 1, 2]), 0.3, "thinning", generator_source(np.random.default_rng(3), 4), 1.0)
    b = sample_regimes(Q, np.array([1, 2, 1, 2]), 0.3, "thinning", generator_source(np.random.default_rng(3), 4), 1.0)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# basic coupling


def test_pair_state_index():
    assert pair_state(1, 1, 3) == 0
    assert pair_state(2, 3, 3) == 5
    assert pair_state(3, 1, 3) == 6


def test_basic_coupling_two_state_example():
    Q = RateMatrix.from_matrix([[-1, 1], [2, -2]])
    G = basic_coupling(Q, [0.0], [0.0])
    # from (1, 2): chains move to (2, 2) at rate 1 and to (1, 1) at rate 2
    s = pair_state(1, 2, 2)
    assert G[s, pair_state(2, 2, 2)] == 1.0
    assert G[s, pair_state(1, 1, 2)] == 2.0
    assert G[s, s] == -3.0
    # diagonal pairs move together
    assert G[pair_state(1, 1, 2), pair_state(2, 2, 2)] == 1.0
    assert G[pair_state(1, 1, 2), pair_state(1, 2, 2)] == 0.0


def marginal_rows(G, m):
    """Rates of the first and second coordinates implied by a product generator."""
    R1 = np.zeros((m, m, m))
    R2 = np.zeros((m, m, m))
    for k in range(m):
        for l in range(m):
            s = pair_state(k + 1, l + 1, m)
            for kk in range(m):
                for ll in range(m):
                    t = pair_state(kk + 1, ll + 1, m)
                    if t == s:
                        continue
                    if kk != k:
                        R1[l, k, kk] += G[s, t]
                    if ll != l:
                        R2[k, l, ll] += G[s, t]
    return R1, R2


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_basic_coupling_marginals_property(data):
    m = data.draw(st.sampled_from([2, 3]))
    Q1 = data.draw(generators(m))
    Q2 = data.draw(generators(m))
    G = coupled_generator(Q1[None], Q2[None])[0]
    R1, R2 = marginal_rows(G, m)
    off = ~np.eye(m, dtype=bool)
    for l in range(m):
        assert np.allclose(R1[l][off], Q1[off], atol=1e-12)
    for k in range(m):
        assert np.allclose(R2[k][off], Q2[off], atol=1e-12)
    assert np.all(G[~np.eye(m * m, dtype=bool)] >= 0)
    assert np.allclose(G.sum(axis=1), 0, atol=1e-12)


def test_basic_coupling_rejects_bad_marginal():
    bad = RateMatrix.from_matrix([[-1, 0.5], [1, -1]])
    with pytest.raises(ValueError, match="q-property"):
        basic_coupling(bad, [0.0], [0.0])


def test_coupled_bound_covers_product_rows():
    rates = example2_rates()
    x = np.linspace(-5, 5, 101)[:, None]
    G = coupled_generator(rates.evaluate(x), rates.evaluate(x[::-1]))
    assert np.max(np.abs(G)) <= 2 * rates.bound
    rm = RateMatrix(lambda z: G[: len(z)], 4, 2 * rates.bound)
    assert validate_q_property(rm, x).passed


# ---------------------------------------------------------------------------
# meet-and-merge


def test_meeting_rate_two_state_closed_form():
    assert meeting_rate([[-1, 1], [2, -2]]) == pytest.approx(3.0, rel=1e-12)
    assert meeting_rate([[-1, 1], [1, -1]]) == pytest.approx(2.0, rel=1e-12)


def test_meet_and_merge_coalesces_and_stays_merged():
    rates = RateMatrix.from_matrix([[-1, 1], [1, -1]])
    rng = np.random.default_rng(5)
    i, j = 1, 2
    met = False
    for _ in range(2000):
        i, j = meet_and_merge_step(rates, i, j, 0.01, rng)
        if i == j:
            met = True
        if met:
            assert i == j
    assert met


def test_meet_and_merge_rejects_x_dependent():
    with pytest.raises(ValueError, match="x-independent"):
        meet_and_merge_step(example2_rates(), 1, 2, 0.01, np.random.default_rng(0))


def test_meeting_time_tail_matches_rate():
    # independent chains until meeting: P(tau > t) = exp(-2 t) from different states
    Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    n, dt, t_end = 40_000, 0.01, 1.0
    rng = np.random.default_rng(9)
    Qb = np.broadcast_to(Q, (n, 2, 2))
    r1 = np.ones(n, dtype=np.int64)
    r2 = np.full(n, 2)
    alive = np.ones(n, dtype=bool)
    for _ in range(int(t_end / dt)):
        r1 = sample_regimes(Qb, r1, dt, "thinning", generator_source(rng, n), 1.0)
        r2 = sample_regimes(Qb, r2, dt, "thinning", generator_source(rng, n), 1.0)
        alive &= r1 != r2
    p = np.exp(-meeting_rate(Q) * t_end)
    se = np.sqrt(p * (1 - p) / n)
    # chains are only compared on the grid, so a meeting between steps can be missed
    assert abs(alive.mean() - p) < 3 * se + 0.02
