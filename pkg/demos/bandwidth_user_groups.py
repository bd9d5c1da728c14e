"""The five synthetic user groups, summarized.

Draws bandwidth sessions from each Markov-chain + mean-reverting-noise
preset and prints the three characteristics the presets are designed
around: overall average bandwidth, cross-session diversity, and
within-session variability.

Run: python demos/bandwidth_user_groups.py
"""

import numpy as np

from nonstat_rl.abr import USER_GROUPS, BandwidthGen

rng = np.random.default_rng(0)
print(f"{'group':>6} | {'mean kbps':>9} | {'diversity':>9} | {'indiv std':>9}")
print("-" * 44)
for name, params in USER_GROUPS.items():
    means, stds = [], []
    for _ in range(40):
        trace = BandwidthGen(params, rng).generate(400)
        means.append(trace.mean())
        stds.append(trace.std())
    print(f"{name:>6} | {np.mean(means):9.0f} | {np.std(means):9.0f} "
          f"| {np.median(stds):9.0f}")
print("\ndiversity = std of per-session means; indiv std = median "
      "within-session std.")
