"""Overfit the default model on one 4 s mixture at 0 dB and report loss drop and SSNR gain."""
import argparse

from uformer.experiments import overfit

p = argparse.ArgumentParser()
p.add_argument("--max-steps", type=int, default=500)
p.add_argument("--check-every", type=int, default=25)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--full", action="store_true", help="keep going after both targets are met")
args = p.parse_args()

res = overfit(args.max_steps, args.check_every, seed=args.seed,
              target_ratio=-1.0 if args.full else 0.1)
print(f"steps {res.steps}  loss {res.initial_loss:.5f} -> {res.final_loss:.5f} "
      f"(drop {100 * (1 - res.loss_ratio):.1f}%)  ssnr {res.ssnr_noisy:+.2f} -> {res.ssnr_enhanced:+.2f} dB "
      f"(gain {res.gain:+.2f})  {res.seconds:.0f} s")
