"""Overfit the siamese generator to one walking sequence and report L1 and pose error.

    python scripts/golden_overfit.py            # the pinned golden run
    python scripts/golden_overfit.py --seed 0   # try another seed
"""

import argparse
import logging

import torch

from skelgen.experiments import GoldenSettings, golden_overfit


def main():
    d = GoldenSettings()
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--frames", type=int, default=d.n_frames)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO)
    torch.set_num_threads(1)
    r = golden_overfit(GoldenSettings(n_frames=args.frames, steps=args.steps, learning_rate=args.lr, seed=args.seed))
    print(f"l1 {r.l1:.4f}  (threshold 0.05)")
    print(f"pose_error_px {r.pose_error:.3f}  (threshold 3)  diverged {r.n_diverged}")
    print(f"seconds {r.seconds:.0f}")


if __name__ == "__main__":
    main()
