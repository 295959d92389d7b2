"""Held-out verifiable reward of SFT-only vs SFT+GRPO policies across seeds.

Each seed regenerates experts, synthesizes non-expert data, labels it and
trains the hybrid pipeline with that seed.

    python scripts/compare_sft_grpo.py --seeds 0 1 2 3 4 --workdir /tmp/sft_vs_grpo
"""
import argparse
from pathlib import Path

import numpy as np

from progress_reward.grpo_trainer import TrainConfig
from progress_reward.pipeline import stage_experts, stage_label, stage_synth, stage_train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--task", default="reach", choices=("reach", "push", "pick"))
    ap.add_argument("--experts", type=int, default=50)
    ap.add_argument("--workdir", default="sft_vs_grpo")
    args = ap.parse_args()

    deltas = []
    for seed in args.seeds:
        d = Path(args.workdir) / f"s{seed}"
        d.mkdir(parents=True, exist_ok=True)
        stage_experts(args.task, args.experts, seed, d / "experts.jsonl")
        stage_synth(d / "experts.jsonl", d / "non.jsonl", 4, seed)
        stage_label([d / "experts.jsonl", d / "non.jsonl"], d / "labeled.jsonl")
        s = stage_train(d / "labeled.jsonl", "hybrid", TrainConfig(seed=seed), d / "ckpt")
        delta = s["grpo_heldout_reward"] - s["sft_heldout_reward"]
        deltas.append(delta)
        print(f"seed {seed}: sft {s['sft_heldout_reward']:.4f}  grpo {s['grpo_heldout_reward']:.4f}  "
              f"delta {delta:+.4f}")
    print(f"median delta {np.median(deltas):+.4f}; non-negative on {sum(x >= 0 for x in deltas)}/{len(deltas)}")


if __name__ == "__main__":
    main()
