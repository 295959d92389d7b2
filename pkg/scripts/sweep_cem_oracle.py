"""Final evaluated success of CEM on reach with the oracle rewarder, over many seeds.

    python scripts/sweep_cem_oracle.py --seeds 20 --budget 200
"""
import argparse
import time

import numpy as np

from progress_reward.reward_service import OracleBackend, RewardMap, ServiceConfig, serve
from progress_reward.rl_harness import CemConfig, HarnessConfig, PointMassEnv, run_online_rl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="reach", choices=("reach", "push", "pick"))
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--budget", type=int, default=200)
    ap.add_argument("--population", type=int, default=10)
    ap.add_argument("--init-std", type=float, default=2.0)
    ap.add_argument("--extra-noise", type=float, default=1.0)
    args = ap.parse_args()

    env = PointMassEnv(args.task)
    rates = []
    with serve(ServiceConfig(OracleBackend(with_cot=False), RewardMap(psi=0.01))) as h:
        for seed in range(args.seeds):
            t0 = time.perf_counter()
            cem = CemConfig(population=args.population, init_std=args.init_std, extra_noise=args.extra_noise,
                            seed=seed)
            log = run_online_rl(env, h.endpoint, HarnessConfig(cem=cem), budget=args.budget)
            rates.append(log.final_success)
            curve = " ".join(f"{e.success_rate:.2f}" for e in log.evaluations)
            print(f"seed {seed:3d}: final {log.final_success:.2f}  curve [{curve}]  {time.perf_counter() - t0:.1f}s")
    rates = np.array(rates)
    print(f"mean {rates.mean():.3f}; seeds at >= 0.8: {(rates >= 0.8).sum()}/{len(rates)}")


if __name__ == "__main__":
    main()
