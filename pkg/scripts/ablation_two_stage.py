"""Baseline prompt vs. search only vs. search plus refinement, on simulated worlds.

Every refinement round adds a fixed reward bonus in the simulated world, so
the ordering is guaranteed by construction. This checks the plumbing of the
full pipeline, not how much refinement helps on real models.

    python3 scripts/ablation_two_stage.py --trials 50
"""

import argparse
import statistics

from promptsmith.simbench import run_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eso-iterations", type=int, default=2)
    ap.add_argument("--refine-bonus", type=float, default=0.05)
    args = ap.parse_args()

    rows = run_ablation(trials=args.trials, seed=args.seed, eso_iterations=args.eso_iterations,
                        refine_bonus=args.refine_bonus)
    for name in ("baseline", "rws_only", "full"):
        vals = [getattr(r, name) for r in rows]
        print(f"{name:<9} {statistics.fmean(vals):.4f} ± {statistics.pstdev(vals):.4f}")


if __name__ == "__main__":
    main()
