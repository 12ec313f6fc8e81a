"""Write the small CSV data sets and configs used by the CLI tests.

    python scripts/make_toy_data.py [OUT_DIR]
"""
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from gamdirect.harness import make_rng


def main(out="tests/data"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(20240611)

    n = 200
    x = rng.uniform(size=n)
    pd.DataFrame({"x": x, "y": 1 + 2 * x + 0.3 * rng.normal(size=n)}).to_csv(
        out / "line.csv", index=False)

    x1, x2 = rng.uniform(size=(2, n))
    y = np.sin(2 * np.pi * x1) + (x2 - 0.5) ** 2 + 0.3 * rng.normal(size=n)
    pd.DataFrame({"x1": x1, "x2": x2, "y": y}).to_csv(out / "gauss.csv", index=False)

    n = 300
    x1, x2 = rng.uniform(size=(2, n))
    p = expit(2 * np.sin(np.pi * x1) + 1.5 * x2 - 1.5)
    pd.DataFrame({"x1": x1, "x2": x2, "y": rng.binomial(1, p)}).to_csv(
        out / "binom.csv", index=False)

    n = 300
    x = rng.uniform(size=n)
    g = rng.integers(0, 10, size=n)
    b = rng.normal(0, 0.5, size=10)
    expo = rng.uniform(0.5, 2.0, size=n)
    mu = expo * np.exp(np.cos(2 * np.pi * x) + b[g])
    pd.DataFrame({"x": x, "g": g, "logexpo": np.log(expo), "y": rng.poisson(mu)}).to_csv(
        out / "pois.csv", index=False)


if __name__ == "__main__":
    main(*sys.argv[1:])
