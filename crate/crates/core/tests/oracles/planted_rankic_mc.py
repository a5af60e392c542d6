"""Monte-Carlo estimate of the expected mean cross-sectional RankIC when
y = 0.1 * zscore(z) + Normal(0, 0.1) over 20 assets x 500 periods.

Independent of the Rust implementation: numpy draws, scipy Spearman.
The printed value is frozen into tests/acceptance.rs.
"""
import numpy as np
from scipy.stats import spearmanr

N_ASSETS, N_PERIODS, REPLICATES = 20, 500, 200
rng = np.random.default_rng(20240607)
means = []
for _ in range(REPLICATES):
    z = rng.standard_normal((N_PERIODS, N_ASSETS))
    zs = (z - z.mean(axis=1, keepdims=True)) / z.std(axis=1, keepdims=True)
    y = 0.1 * zs + rng.normal(0.0, 0.1, size=z.shape)
    ric = [spearmanr(z[t], y[t]).correlation for t in range(N_PERIODS)]
    means.append(np.mean(ric))
means = np.array(means)
print(f"mean RankIC = {means.mean():.6f}  (replicate sd {means.std():.6f})")
