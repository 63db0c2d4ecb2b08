import numpy as np
import pytest

from mvx.catalog import example1, example2
from mvx.measures import EmpiricalMeasure, ProductCost, ot_cost
from mvx.model import CoefficientField, ModelSpec, RateMatrix, mean_functional
from mvx.particle import (
    BlowUpError,
    InitialLaw,
    ParticleEnsemble,
    SimConfig,
    euler_step,
    picard_law_iteration,
    read_snapshot_csv,
    simulate,
    snapshot_csv,
    synchronous_pair_simulate,
)
from mvx.rng import Streams


def zero_model(m=1):
    field = CoefficientField(lambda t, x, s, r: np.zeros_like(x), lambda t, x, s, r: np.zeros((len(x), 1, 1)))
    return ModelSpec(field, RateMatrix.zero(m))


def ou_model():
    field = CoefficientField(lambda t, x, s, r: -x, lambda t, x, s, r: np.ones((len(x), 1, 1)))
    return ModelSpec(field, RateMatrix.zero(1))


def test_initial_law_parse():
    law = InitialLaw.parse("uniform(-1, 1)", "uniform")
    assert law.kind == "uniform" and law.params == (-1.0, 1.0) and law.regime == "uniform"
    assert InitialLaw.parse(" point(2) ", "2").regime == 2
    assert InitialLaw.parse("gaussian(0,1)", "0.25,0.75").regime == (0.25, 0.75)
    with pytest.raises(ValueError):
        InitialLaw.parse("cauchy(0, 1)")
    with pytest.raises(ValueError):
        InitialLaw("uniform", (1.0, -1.0))


def test_initial_law_sampling():
    x, r = InitialLaw("uniform", (-1, 1), "uniform")(1000, np.random.default_rng(0), 2)
    assert x.shape == (1000, 1) and np.all(np.abs(x) <= 1)
    assert set(np.unique(r)) == {1, 2}
    with pytest.raises(ValueError):
        InitialLaw("point", (0,), 3)(5, np.random.default_rng(0), 2)


def test_sim_config_grid_alignment():
    with pytest.raises(ValueError, match="step grid"):
        SimConfig(dt=0.1, T=1.0, record_times=(0.25,))
    cfg = SimConfig(dt=0.1, T=1.0, record_every=0.3)
    assert cfg.record_steps().tolist() == [0, 3, 6, 9, 10]


def test_zero_dynamics_only_time_moves():
    spec = zero_model()
    streams = Streams(0)
    ens = ParticleEnsemble(0.0, np.linspace(-1, 1, 5)[:, None], np.ones(5, dtype=np.int64))
    out = euler_step(ens, spec, 0.01, "thinning", streams)
    assert np.array_equal(out.x, ens.x) and np.array_equal(out.regimes, ens.regimes)
    assert out.t == 0.01 and out.step == 1


def test_euler_hand_step_example1_regime2():
    spec, _ = example1(beta=0.0, rates="none")
    ens = ParticleEnsemble(0.0, np.array([[1.0]]), np.array([2]))
    out = euler_step(ens, spec, 0.01, "thinning", Streams(0), xi=np.zeros((1, 1)))
    assert out.x[0, 0] == 0.98
    assert out.regimes[0] == 2


def test_blow_up_names_particle():
    field = CoefficientField(lambda t, x, s, r: x * 1e300, lambda t, x, s, r: np.zeros((len(x), 1, 1)))
    spec = ModelSpec(field, RateMatrix.zero(1))
    ens = ParticleEnsemble(0.0, np.array([[0.0], [1e10], [0.0]]), np.ones(3, dtype=np.int64))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(BlowUpError) as info:
            euler_step(ens, spec, 1.0, "thinning", Streams(0))
    assert info.value.index == 1


def test_ou_stationary_variance():
    cfg = SimConfig(dt=1e-3, T=20.0, N=10_000, seed=1, record_times=(20.0,), snapshots=True)
    ser = simulate(ou_model(), None, InitialLaw("point", (0.0,)), cfg)
    x = ser.snapshots[-1][1][:, 0]
    se = np.sqrt(2 * 0.25 / len(x))
    assert abs(x.var(ddof=1) - 0.5) < 3 * se


def test_csv_columns_and_precision():
    spec, lyap = example1()
    ser = simulate(spec, lyap, InitialLaw("uniform", (-1, 1), "uniform"), SimConfig(T=0.1, N=50))
    text = ser.to_csv()
    header = text.splitlines()[0].split(",")
    assert header == ["t", "regime_occupancy_1", "regime_occupancy_2", "moment_mean",
                      "moment_second_moment", "EV", "Ephi"]
    row = text.splitlines()[1].split(",")
    assert float(row[5]) == ser["EV"][0]


def test_series_without_lyapunov_has_nan_columns():
    spec, _ = example1()
    ser = simulate(spec, None, InitialLaw("point", (1.0,)), SimConfig(T=0.01, N=5))
    assert np.all(np.isnan(ser["EV"]))


def test_snapshot_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 2))
    r = np.array([1, 2, 1, 1, 2, 2, 1])
    snapshot_csv(x, r, tmp_path / "s.csv")
    x2, r2 = read_snapshot_csv(tmp_path / "s.csv")
    assert np.array_equal(x, x2) and np.array_equal(r, r2)


# ---------------------------------------------------------------------------
# determinism and truncation


def _csv(workers=1, trunc=None, seed=3, model=example1):
    spec, lyap = model()
    cfg = SimConfig(T=0.3, N=2000, seed=seed, workers=workers, trunc=trunc)
    return simulate(spec, lyap, InitialLaw("uniform", (-1, 1), "uniform"), cfg).to_csv()


def test_seed_determinism_and_threads():
    a = _csv()
    assert a == _csv()
    assert a == _csv(workers=4)
    assert a != _csv(seed=4)


def test_thread_determinism_state_dependent_rates():
    assert _csv(model=example2) == _csv(workers=3, model=example2)


def test_large_truncation_is_identity():
    assert _csv() == _csv(trunc=1e6)


def test_small_truncation_changes_dynamics_and_flags_exit():
    spec, lyap = example1()
    cfg = SimConfig(T=0.2, N=500, seed=0, trunc=0.5)
    ser = simulate(spec, lyap, InitialLaw("uniform", (-1, 1), "uniform"), cfg)
    assert ser.exit_time == 0.0
    assert ser.to_csv() != _csv_plain(spec, lyap, cfg)


def _csv_plain(spec, lyap, cfg):
    from dataclasses import replace

    return simulate(spec, lyap, InitialLaw("uniform", (-1, 1), "uniform"), replace(cfg, trunc=None)).to_csv()


def test_refinement_self_consistency():
    spec, lyap = example1()
    init = InitialLaw("uniform", (-1, 1), "uniform")
    coarse = simulate(spec, lyap, init, SimConfig(dt=2e-3, T=1.0, N=2500, seed=5))
    fine = simulate(spec, lyap, init, SimConfig(dt=1e-3, T=1.0, N=5000, seed=6))
    gap = abs(coarse["EV"][-1] - fine["EV"][-1])
    se = np.hypot(coarse.stderr("EV")[-1], fine.stderr("EV")[-1])
    assert gap < 2 * se + 1.0 * 2e-3


# ---------------------------------------------------------------------------
# synchronous pairs


def test_identical_pairs_stay_together():
    spec, lyap = example2()
    law = InitialLaw("point", (0.5,), 1)
    p = synchronous_pair_simulate(spec, lyap, law, law, SimConfig(T=0.5, N=200))
    assert np.all(p["pair_Vtilde"] == 0.0)
    assert np.all(p["pair_agreement"] == 1.0)


def test_pair_initial_draws_are_independent():
    spec, lyap = example2()
    law = InitialLaw("uniform", (-1, 1), 1)
    p = synchronous_pair_simulate(spec, lyap, law, law, SimConfig(T=0.01, N=200))
    assert p["pair_Vtilde"][0] > 0


def test_paired_cost_dominates_assignment():
    spec, lyap = example2(rates="symmetric")
    cfg = SimConfig(T=0.5, N=300, snapshots=True, record_every=0.1)
    p = synchronous_pair_simulate(spec, lyap, InitialLaw("gaussian", (1, 0.3), 1),
                                  InitialLaw("gaussian", (-1, 0.3), 2), cfg)
    cost = ProductCost(lyap.coupled)
    for k, ((_, x, rx), (_, y, ry)) in enumerate(zip(p.snapshots, p.other.snapshots)):
        w = ot_cost(EmpiricalMeasure.from_samples(x, rx), EmpiricalMeasure.from_samples(y, ry), cost).value
        assert p["pair_cost"][k] >= w - 1e-12


def test_pairs_with_state_dependent_rates_use_basic_coupling():
    spec, lyap = example2()
    p = synchronous_pair_simulate(spec, lyap, InitialLaw("point", (0.5,), 1), InitialLaw("point", (-0.5,), 2),
                                  SimConfig(T=2.0, N=2000))
    assert p["pair_agreement"][-1] > p["pair_agreement"][0]


# ---------------------------------------------------------------------------
# Picard iteration


def test_picard_without_measure_dependence_is_exact():
    spec = ou_model()
    d = picard_law_iteration(spec, InitialLaw("gaussian", (0, 1)), SimConfig(T=0.2, N=300), rounds=3)
    assert d[1] == 0.0 and d[2] == 0.0


def test_picard_single_round():
    spec, _ = example1()
    d = picard_law_iteration(spec, InitialLaw("uniform", (-1, 1), "uniform"), SimConfig(T=0.1, N=200), rounds=1)
    assert len(d) == 1 and d[0] > 0


def test_picard_reads_frozen_functionals():
    # a mean-reverting-to-the-mean model: round 1 sees the frozen initial mean
    field = CoefficientField(lambda t, x, s, r: s["mean"][0] - x + 0 * x, lambda t, x, s, r: np.zeros((len(x), 1, 1)))
    spec = ModelSpec(field, RateMatrix.zero(1), (mean_functional(),))
    d = picard_law_iteration(spec, InitialLaw("point", (2.0,)), SimConfig(T=0.5, N=10), rounds=2)
    assert d == [0.0, 0.0]
