"""Sweep the eviction policies across capacities on the grouped preset.

Runs lru / lfu / sieve / lfru over a capacity grid at desk scale, then prints
the per-policy comparison against the lru baseline and the best-policy
summary per capacity -- the same tables the `corrcache sweep` command writes.

Run:  python3 demos/demo_policy_sweep.py
"""

from __future__ import annotations

import io

from corrcache.harness import (
    CapacityGrid,
    ExperimentConfig,
    capacity_summary_csv,
    compare_policies,
    comparison_csv,
    run_sweep,
    summarize_capacities,
)
from corrcache.policies import PolicyParams


def main() -> None:
    config = ExperimentConfig(
        trace="preset:grouped-4.1",
        policies=(
            PolicyParams("lru"),
            PolicyParams("lfu"),
            PolicyParams("sieve"),
            PolicyParams("lfru", window=20),
        ),
        capacities=CapacityGrid((0.001, 0.003, 0.01), "volume"),
        seeds=(1, 2),
        horizon=8000.0,
    )
    report = run_sweep(config)
    print(f"{len(report.rows)} sweep cells "
          f"(policy x capacity x seed), config digest {report.digest}\n")

    out = io.StringIO()
    comparison_csv(compare_policies(report, baseline="lru"), out)
    print("comparison against the lru baseline:")
    print(out.getvalue())

    out = io.StringIO()
    capacity_summary_csv(summarize_capacities(report), out)
    print("best policy per capacity:")
    print(out.getvalue(), end="")


if __name__ == "__main__":
    main()
