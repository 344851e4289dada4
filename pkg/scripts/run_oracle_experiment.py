#!/usr/bin/env python3
"""Run a batch of offline dyad simulations and summarise structure metrics.

Mirrors the published 15-simulation setup at desk scale with deterministic
oracle agents instead of a live model. Example:

    python scripts/run_oracle_experiment.py --count 15 --agents oracle:compositional --out runs/batch
"""

import argparse
import sys
from pathlib import Path

from refgame.agents import make_agent
from refgame.backend import EventLog
from refgame.engine import RunConfig, derive_seed, run_simulation
from refgame.persistence import save_simulation


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=15)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--agents", default="oracle:lookup")
    parser.add_argument("--permutations", type=int, default=2000)
    parser.add_argument("--out", default="runs/oracle-batch")
    args = parser.parse_args()

    out = Path(args.out)
    print(f"{'run':12s} {'guessA':>7s} {'perccom r1-r4':>20s} {'topsimZ_A':>10s} {'genscore_A':>10s}")
    for index in range(args.count):
        run_seed = derive_seed(args.seed, f"sim:{index}")
        run_dir = out / f"sim-{index:02d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        event_log = EventLog(run_dir / "events.jsonl")
        agents = tuple(make_agent(args.agents, agent_id) for agent_id in ("A", "B"))
        config = RunConfig(master_seed=run_seed, mantel_permutations=args.permutations)
        result = run_simulation(config, agents, event_log=event_log)
        save_simulation(result, run_dir, event_log=event_log)

        testing_a = next(
            r for r in result.metric_rows if r.block == "testing" and r.agent_id == "A"
        )
        z = f"{testing_a.report.topsim.z_score:.2f}" if testing_a.report.topsim else "degen"
        gen = f"{testing_a.report.gen_score:.3f}" if testing_a.report.gen_score is not None else "-"
        perc = " ".join(f"{v:.2f}" for v in result.communication.perc_com)
        print(f"sim-{index:02d}       {result.guessing['A'].accuracy:7.3f} {perc:>20s} {z:>10s} {gen:>10s}")
    print(f"\nresults in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
