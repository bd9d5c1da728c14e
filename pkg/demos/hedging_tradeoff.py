"""The hedging trade-off, workload by workload.

Sweeps every constant timeout policy over the three synthetic workloads and
prints the post-warmup p95 latency. Each workload prefers a different
timeout, which is exactly what makes the switching scenarios hard for a
single policy.

Run: python demos/hedging_tradeoff.py
"""

from nonstat_rl.stats import nearest_rank
from nonstat_rl.straggler import TIMEOUTS_MS, WORKLOAD_PRESETS, StragglerSim

WINDOWS, WARMUP = 600, 100

print(f"{'workload':>9} | " + " | ".join(f"{t:>7}" for t in TIMEOUTS_MS))
print("-" * 85)
for name in ("A", "B", "C"):
    row = []
    for action in range(len(TIMEOUTS_MS)):
        sim = StragglerSim(WORKLOAD_PRESETS[name], seed=1, safeguard_enabled=True)
        latencies = []
        for i in range(WINDOWS):
            result = sim.step(action)
            if i >= WARMUP:
                latencies.extend(result.stats["latencies"])
        row.append(nearest_rank(latencies, 95))
    best = min(range(len(row)), key=row.__getitem__)
    cells = " | ".join(
        f"{v:>6.0f}{'*' if i == best else ' '}" for i, v in enumerate(row)
    )
    print(f"{name:>9} | {cells}")
print("\n(*) best timeout; p95 latency in ms over the last "
      f"{WINDOWS - WARMUP} windows.")
