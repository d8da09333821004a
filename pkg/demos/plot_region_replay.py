"""
Replaying regional case counts
==============================

The bundled sample holds 80 days of case counts for 21 regions.  Region
specific daily cases are drawn from per-region kernel density estimates, the
regions are relabelled cyclically on day 40 and feedback arrives three days
late.  NDC-SEM picks five regions per day.
"""

from collections import Counter

import numpy as np

from ndc_bandit.data_ingest import ReplayConfig, load_region_csv, run_replay, sample_csv_path

series = load_region_csv(sample_csv_path())
print(series.n, "regions,", series.n_days, "days")

cfg = ReplayConfig(horizon=80, s=5, delay_days=3, change_day=40)
res = run_replay(series, cfg, seed=0)
print("cyclic shift k =", res.shift_k)

###############################################################################
# Most frequent selection before and after the change.

pre = sorted(res.names[i] for i in res.modal_set(1, cfg.change_day - 1))
post = sorted(res.names[i] for i in res.modal_set(cfg.change_day, res.horizon))
print("before:", pre)
print("after: ", post)

###############################################################################
# How often each region is picked after the change.

counts = Counter(res.names[i] for d in range(cfg.change_day - 1, res.horizon) for i in np.flatnonzero(res.selected[d]))
print(counts.most_common(8))
print("lambda chosen on the last day:", res.lambdas[-1])
