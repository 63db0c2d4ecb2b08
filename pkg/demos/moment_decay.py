"""Second-moment decay of the first builtin model against its exponential bound."""
import numpy as np

from mvx import InitialLaw, SimConfig, example1, simulate
from mvx.experiments import fit_log_rate

spec, lyap = example1(beta=0.5)
series = simulate(spec, lyap, InitialLaw("uniform", (-1, 1), "uniform"), SimConfig(T=4.0, N=5000, seed=0))

bound = np.exp(lyap.rate * series.t) * series["EV"][0]
for k in range(0, len(series.t), 10):
    print(f"t={series.t[k]:4.2f}  E|X|^2={series['EV'][k]:.5f}  bound={bound[k]:.5f}")
print("fitted", fit_log_rate(series.t, series["EV"], series.stderr("EV")).describe(), "vs rate", lyap.rate)
