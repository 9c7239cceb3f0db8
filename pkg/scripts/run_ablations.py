"""Train the loss and structure ablation matrix and print the metric table.

    python scripts/run_ablations.py --seed 0 --out runs/ablate_s0.txt
"""

import argparse
import logging
from pathlib import Path

import torch

from skelgen.experiments import LOSS_RUNS, STRUCTURE_RUNS, AblationSettings, format_ablation, run_ablations


def main():
    d = AblationSettings()
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--frames", type=int, default=d.n_frames)
    p.add_argument("--runs", default=",".join(LOSS_RUNS + STRUCTURE_RUNS))
    p.add_argument("--data", help="dataset directory to reuse (built if missing)")
    p.add_argument("--out", help="also write the table here")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO)
    torch.set_num_threads(1)
    settings = AblationSettings(n_frames=args.frames, steps=args.steps, seed=args.seed)
    result = run_ablations(settings, names=tuple(args.runs.split(",")), root=args.data)
    text = format_ablation(result)
    print(text, end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)


if __name__ == "__main__":
    main()
