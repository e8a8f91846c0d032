"""Closed-form predictions of the river-valley model against Monte-Carlo.

The averaged deviation from the river falls roughly as 1/N once the
checkpoints are far enough apart to be nearly independent, and the
signal-to-noise ratio of sliding merges grows as N (K tau)^2.
"""

import numpy as np

from extramerge.river_valley_sim import default_spec, measure_snr, theorem1_grid

spec = default_spec()

print(" N   T   empirical     exact       bound     z")
for row in theorem1_grid(spec, [1, 4, 16], [1, 25], n_seeds=500, seed=0):
    print(f"{row['N']:2d} {row['T']:3d}  {row['empirical']:.5f}  {row['exact']:.5f}"
          f"  {row['bound']:.5f}  {row['z_score']:+.2f}")

Ns = np.array([1, 2, 4, 8, 16])
rho = [measure_snr(spec, int(N), 50, 4, 300, seed=1)["rho"] for N in Ns]
slope = np.polyfit(np.log(Ns), np.log(rho), 1)[0]
print(f"\nSNR vs N at T=50, K=4: {np.round(rho, 2)}  log-log slope {slope:.2f}")
