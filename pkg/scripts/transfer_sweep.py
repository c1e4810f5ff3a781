"""How often warm search gets within 0.02 of the oracle, by reference perturbation.

The default perturbation in promptsmith.simbench was chosen from this table.

    python3 scripts/transfer_sweep.py --trials 100 --seeds 0 1 2 3
"""

import argparse

from promptsmith.rws import SearchConfig
from promptsmith.simbench import LandscapeParams, MethodSpec, rho_for, run_comparison


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--scales", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0, 1.5])
    ap.add_argument("--budget", type=int, default=15)
    ap.add_argument("--tol", type=float, default=0.02)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    print(f"{'scale':>6} {'rho':>6} " + " ".join(f"seed{s:>3}" for s in args.seeds) + "   mean regret")
    for scale in args.scales:
        m = MethodSpec("warm_eps_greedy", SearchConfig(budget=args.budget), scale)
        rates, regrets = [], []
        for seed in args.seeds:
            r = run_comparison(LandscapeParams(), [m], args.trials, seed, args.workers)
            rates.append(r.success_rate(m.name, args.tol))
            regrets.append(r.aggregate(args.tol)[0]["regret_mean"])
        cells = " ".join(f"{x:>7.0%}" for x in rates)
        print(f"{scale:>6.2f} {rho_for(scale):>6.3f} {cells}   {sum(regrets) / len(regrets):.4f}")


if __name__ == "__main__":
    main()
