"""Empirical vs closed-form MSE of the trig, positive and hyperbolic estimators.

Sweeps a grid of norm pairs and angles and prints the z-score of each
empirical MSE against its closed form, plus the worst |z| per variant.
"""

import argparse
import math

from favorlab.features import FeatureMapSpec
from favorlab.kernels import KernelPoint
from favorlab.lab import ReferenceKind, TrialPlan, run_kernel_trials

NORMS = [(0.25, 0.25), (0.5, 0.5), (0.25, 0.75), (0.4, 0.6)]
ANGLES = [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--m", type=int, default=1)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    worst = {}
    print(f"{'variant':>7} {'|x|':>5} {'|y|':>5} {'angle':>6} {'closed':>10} {'empirical':>10} {'z':>6}")
    cell = 0
    for nx, ny in NORMS:
        for angle in ANGLES:
            p = KernelPoint.from_polar(nx, ny, angle, args.d)
            for variant in ("trig", "pos", "hyp"):
                plan = TrialPlan(p, FeatureMapSpec(variant=variant, m=args.m), args.trials,
                                 args.seed, stream_base=cell)
                cell += 1
                r = run_kernel_trials(plan, reference=ReferenceKind.MSE_CLOSED)
                worst[variant] = max(worst.get(variant, 0.0), abs(r.z_score))
                print(f"{variant:>7} {nx:5.2f} {ny:5.2f} {angle:6.3f} {r.reference_value:10.5f} "
                      f"{r.empirical_mse:10.5f} {r.z_score:6.2f}")
    for variant, z in worst.items():
        print(f"worst |z| {variant}: {z:.2f}")


if __name__ == "__main__":
    main()
