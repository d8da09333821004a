"""Regenerate the bundled 21-region x 80-day sample case file.

The sample is synthetic: region-specific daily cases follow a slow growth
trend with weekly seasonality and log-normal noise, and the recorded overall
cases are pushed through a sparse cyclic SEM so neighbouring regions leak
into each other.  Only the file format matches the public Italian data.

    python scripts/make_region_sample.py src/ndc_bandit/data/italy_regions_sample.csv
"""

import sys

import numpy as np

from ndc_bandit.data_ingest import REGION_ABBREVIATIONS

N_DAYS = 80
SEED = 2020


def main(path: str) -> None:
    rng = np.random.default_rng(SEED)
    names = list(REGION_ABBREVIATIONS)
    n = len(names)
    base = np.exp(rng.normal(np.log(60.0), 0.9, size=n))
    days = np.arange(N_DAYS)
    trend = np.exp(0.012 * days)
    weekly = 1.0 + 0.15 * np.sin(2 * np.pi * days / 7.0)
    z = base[:, None] * trend[None, :] * weekly[None, :] * rng.lognormal(0.0, 0.2, size=(n, N_DAYS))

    a = np.where(rng.random((n, n)) < 0.1, rng.uniform(0.05, 0.25, size=(n, n)), 0.0)
    np.fill_diagonal(a, 0.0)
    rho = np.max(np.abs(np.linalg.eigvals(a)))
    if rho > 0.6:
        a *= 0.6 / rho
    y = np.linalg.solve(np.eye(n) - a, z)
    counts = np.rint(np.maximum(y, 0.0)).astype(int)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("region," + ",".join(f"d{d + 1}" for d in days) + "\n")
        for name, row in zip(names, counts):
            fh.write(name + "," + ",".join(str(v) for v in row) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "italy_regions_sample.csv")
