"""Place several rewarders on the perceived-vs-true success plane.

Runs CEM against each scripted rewarder on one task and prints the quadrant
of the final evaluation, optionally writing an SVG scatter.

    python scripts/failure_quadrants.py --task pick --seeds 3 --plot quadrants.svg
"""
import argparse

from progress_reward.eval_metrics import classify_quadrant, plot_quadrants
from progress_reward.reward_service import OracleBackend, RewardMap, ScriptSpec, ServiceConfig, make_backend, serve
from progress_reward.labeling import GeometricConfig
from progress_reward.rl_harness import CemConfig, HarnessConfig, PointMassEnv, run_online_rl
from progress_reward.rl_harness.env import TASK_BETA

REWARDERS = {
    "oracle": lambda task: OracleBackend(GeometricConfig(TASK_BETA[task]), with_cot=False),
    "oracle-noisy": lambda task: make_backend("scripted", script=ScriptSpec(mode="oracle", noise_std=15.0,
                                                                            beta=TASK_BETA[task])),
    "proximity-only": lambda task: make_backend("scripted", script=ScriptSpec(mode="proximity-only")),
    "zero": lambda task: make_backend("scripted", script=ScriptSpec(mode="zero")),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="pick", choices=("reach", "push", "pick"))
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--budget", type=int, default=200)
    ap.add_argument("--plot", default=None)
    args = ap.parse_args()

    env = PointMassEnv(args.task)
    reports = {}
    for name, build in REWARDERS.items():
        with serve(ServiceConfig(build(args.task), RewardMap(psi=0.01))) as h:
            for seed in range(args.seeds):
                log = run_online_rl(env, h.endpoint, HarnessConfig(cem=CemConfig(seed=seed)), budget=args.budget)
                rep = classify_quadrant(log.evaluations[-1].logs)
                reports[f"{name}/s{seed}"] = rep
                print(f"{name:15s} seed {seed}: perceived {rep.perceived:5.1f}  true {rep.true_success:.2f}  "
                      f"-> {rep.quadrant}")
    if args.plot:
        plot_quadrants(reports, args.plot)
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
