"""Three observations, two states: small enough to enumerate every path.

Compares the exact path posterior with what the particle filter plus
backward smoother and the collapsed Gibbs sampler report.

    python3 demos/exact_oracle.py
"""

import numpy as np

from ihmm_stream import HyperParams, filter_stream, stream
from ihmm_stream.gibbs import (bundled_instance, collapsed_gibbs, empirical_distribution,
                               exact_posterior, site_marginals, total_variation)
from ihmm_stream.smoother import smooth
from ihmm_stream.types import ObservationRecord

inst = bundled_instance()
print(f"y = {inst.y}, beta = {inst.beta}, alpha = {inst.alpha}")

exact = exact_posterior(inst, "canonical")
for path, p in sorted(exact.items(), key=lambda kv: -kv[1]):
    print(f"  path {path}: {p:.4f}")

hp = HyperParams(d=1, B=20_000, alpha_fixed=inst.alpha, beta_fixed=np.array(inst.beta),
                 mu_Lambda0=inst.Lambda(), Sigma_Lambda0=np.zeros((2, 2)))
obs = [ObservationRecord("u", t + 1, inst.y[t], np.array(inst.x[t])) for t in range(inst.T)]
res = filter_stream(obs, hp, stream(0, "filter"), record=True)
sm = smooth(res.snapshots, stream(0, "smooth"))
print("P(state 1) per site")
print("  exact   ", site_marginals(exact, inst.T, inst.K)[:, 1].round(4))
print("  smoother", sm.marginals(inst.K)[:, 1].round(4))

labeled = exact_posterior(inst, "labeled")
g = collapsed_gibbs(inst, 20_000, stream(0, "gibbs"))
print(f"Gibbs vs exact (labelled paths): TV = {total_variation(labeled, empirical_distribution(g.paths)):.4f}")
