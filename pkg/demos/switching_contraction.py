"""Two ensembles started in different regimes forget their initial condition."""
from mvx import InitialLaw, SimConfig, example2, synchronous_pair_simulate
from mvx.experiments import fit_log_rate, switching_rate_bound

spec, lyap = example2(rates="symmetric")
pairs = synchronous_pair_simulate(
    spec, lyap, InitialLaw("point", (1.0,), 1), InitialLaw("point", (-1.0,), 2), SimConfig(T=3.0, N=5000, seed=0)
)
for k in range(0, len(pairs.t), 10):
    print(f"t={pairs.t[k]:4.2f}  cost={pairs['pair_cost'][k]:.5f}  agreement={pairs['pair_agreement'][k]:.4f}")
theta_tilde, theta_c = switching_rate_bound(spec, lyap)
fit = fit_log_rate(pairs.t, pairs["pair_cost"], pairs.stderr("pair_cost"))
print(fit.describe(), f"theta_tilde={theta_tilde} (theta_c={theta_c})")
