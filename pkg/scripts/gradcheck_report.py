"""Finite-difference gradient errors for every primitive and the small model.

    python scripts/gradcheck_report.py --h 1e-5 --seeds 0,1,2
"""
import argparse

from gazegnn.gradcheck import model_gradient_errors, primitive_gradient_errors

ap = argparse.ArgumentParser()
ap.add_argument("--h", type=float, default=1e-5)
ap.add_argument("--seeds", default="0")
a = ap.parse_args()

prim = primitive_gradient_errors(h=a.h)
for name, err in sorted(prim.items(), key=lambda kv: -kv[1]):
    print(f"{name:<20} {err:.2e}")
for seed in (int(s) for s in a.seeds.split(",")):
    errs = model_gradient_errors(seed=seed, h=a.h)
    worst = max(errs, key=errs.get)
    print(f"model seed {seed}: {len(errs)} parameter groups, worst {worst} {errs[worst]:.2e}")
