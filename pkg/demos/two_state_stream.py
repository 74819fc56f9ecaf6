"""Follow one user whose engagement flips between an active and a quiet
regime, and watch the filter discover how many regimes there are.

    python3 demos/two_state_stream.py [seed]
"""

import sys

import numpy as np

from ihmm_stream import HyperParams, filter_stream, stream
from ihmm_stream.simulate import two_state_suite
from ihmm_stream.smoother import filtered_modal_path, matched_accuracy, smooth

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

# 400 ticks of a sticky two-regime logit: offsets +2 / -2, opposite slopes.
sample = two_state_suite(seed, T=400)
print(f"user {sample.user_id}: {sample.y.mean():.2f} contribution rate, "
      f"{np.sum(np.diff(sample.states) != 0)} regime switches")

# The filter starts with one state and may open new ones as the data demand.
hp = HyperParams(d=2, B=1000, a_alpha=1.0, b_alpha=1.0, a_lambda=1.0, b_lambda=8.0,
                 mu_Lambda0=np.array([0.0, 0.0, np.log(4.0), 0.0]),
                 Sigma_Lambda0=np.diag([1.0, 1.0, 0.25, 0.25]))
res = filter_stream(sample.records, hp, stream(seed, "filter"), record=True)

for t in (10, 50, 100, 200, 400):
    hist = np.bincount(res.snapshots[t - 1].L)
    print(f"  t={t:3d}  particles by state count: "
          + ", ".join(f"L={k}: {v}" for k, v in enumerate(hist) if v))

p = sample.y.mean()
base = np.sum(sample.y * np.log(p) + (1 - sample.y) * np.log(1 - p))
total = res.cloud.init_log_predictive + res.log_predictive.sum()
print(f"one-step log predictive {total:.1f} vs constant-rate {base:.1f}")

# Smoothing looks back with the full stream and usually cleans up the path.
sm = smooth(res.snapshots, stream(seed, "smooth"), n_paths=200)
print(f"state accuracy after label matching: filtered "
      f"{matched_accuracy(filtered_modal_path(res.snapshots), sample.states):.3f}, "
      f"smoothed {matched_accuracy(sm.modal_path(), sample.states):.3f}")
