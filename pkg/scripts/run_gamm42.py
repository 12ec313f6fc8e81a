"""Mixed model variant: benchmark plus 40 groups of 10 random effects.

    python scripts/run_gamm42.py [--replicates 20] [--n 400] [--seed 42] [--out results]

The random effect is a ridge-penalized smooth whose smoothing parameter is
selected with the others; fixed-effect MSE is reported per replicate.
"""
import argparse
import logging

from gamdirect.harness import CASES, SimScenario, run_study, summary_text, write_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--cases", nargs="+", default=list(CASES), choices=CASES)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    for case in args.cases:
        sc = SimScenario(kind="gamm42", case=case, n=args.n, replicates=args.replicates,
                         rng_seed=args.seed)
        study = run_study(sc, workers=args.workers)
        write_study(study, args.out)
        print(summary_text(study))


if __name__ == "__main__":
    main()
