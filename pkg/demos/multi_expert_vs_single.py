"""Catastrophic forgetting under cyclic workloads, and the multi-expert fix.

Runs scenario I (A -> B -> C, twice) with a single shared actor-critic and
with one expert per detected environment, then prints the post-convergence
median tail latency per workload next to the pre-trained oracle. Takes a
minute or two.

Run: python demos/multi_expert_vs_single.py [out_dir]
"""

import sys

from nonstat_rl.harness import ExperimentConfig, run_experiment, scenario_cyclic

out_base = sys.argv[1] if len(sys.argv) > 1 else ""
scenario = scenario_cyclic(t_sw=120, keys=("A", "B", "C"), cycles=2)

results = {}
for mode in ("oracle", "single", "multi"):
    cfg = ExperimentConfig(
        scenario=scenario, expert_mode=mode, seed=11,
        out_dir=f"{out_base}/{mode}" if out_base else "",
    )
    summary = run_experiment(cfg)
    results[mode] = {k: v.p50 for k, v in summary.per_workload.items()}
    print(f"{mode:7s} trained ({summary.wall_clock_s:5.1f}s wall)")

print(f"\npost-convergence median p95 latency (ms):")
print(f"{'workload':>9} | {'oracle':>8} | {'multi':>8} | {'single':>8}")
for key in ("A", "B", "C"):
    o, m, s = (results[mode][key] for mode in ("oracle", "multi", "single"))
    print(f"{key:>9} | {o:8.1f} | {m:8.1f} | {s:8.1f}   "
          f"(single is {s / o:.2f}x oracle)")
print("\nThe single model keeps re-tuning to whichever workload is active and"
      "\nforgets the others; one expert per environment stays near the oracle.")
