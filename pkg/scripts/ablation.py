"""Train the four attention ablation variants for a few steps each and print a report."""
import argparse

from uformer.experiments import ablation

p = argparse.ArgumentParser()
p.add_argument("--steps", type=int, default=50)
p.add_argument("--seconds", type=float, default=1.0)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

ablation(args.steps, args.seconds, seed=args.seed)
