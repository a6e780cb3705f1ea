"""Print per-module and total parameter counts for the default config and its ablations."""
import dataclasses
from collections import Counter

from uformer.experiments import REFERENCE_PARAMS, VARIANTS
from uformer.model import UFormerConfig, build, count_params

model = build(UFormerConfig())
groups = Counter()
for name, p in model.named_parameters():
    groups[name.split(".")[0]] += p.size
for k, v in groups.items():
    print(f"{k:<12s} {v:>10,d}")
total = count_params(model)
print(f"{'total':<12s} {total:>10,d}  (reference {REFERENCE_PARAMS / 1e6:.2f} M, ratio {total / REFERENCE_PARAMS:.2f})")
for name, flags in VARIANTS.items():
    print(f"{name:<15s} {count_params(build(dataclasses.replace(UFormerConfig(), **flags))):>10,d}")
