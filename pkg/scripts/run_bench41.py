"""Four-family benchmark study.

    python scripts/run_bench41.py [--replicates 50] [--n 400] [--seed 41] [--out results]

Fits every case with its default criterion (AIC for binary and Poisson,
GCV otherwise) and writes one summary and replicate table per case.
"""
import argparse
import logging

from gamdirect.harness import CASES, SimScenario, run_study, summary_text, write_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--seed", type=int, default=41)
    p.add_argument("--cases", nargs="+", default=list(CASES), choices=CASES)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    for case in args.cases:
        sc = SimScenario(kind="bench41", case=case, n=args.n, replicates=args.replicates,
                         rng_seed=args.seed)
        study = run_study(sc, workers=args.workers)
        write_study(study, args.out)
        print(summary_text(study))


if __name__ == "__main__":
    main()
