"""A small community: two user segments, one binary demographic that shifts
the baseline propensity, and periodic cross-user refits.

    python3 demos/population_barrier.py
"""

import numpy as np

from ihmm_stream import HyperParams
from ihmm_stream.engine import Engine
from ihmm_stream.hierarchy import BarrierSchedule
from ihmm_stream.simulate import DemographicsSpec, SegmentSpec, gen_population

d = 2
means = np.array([[1.0, 0.0, -3.0, -3.0],
                  [-1.5, 0.0, -3.0, -3.0]])
segments = SegmentSpec([0.5, 0.5], means, np.tile(np.eye(2 * d) * 0.01, (2, 1, 1)))
Delta = np.zeros((2 * d, 1))
Delta[0, 0] = 0.75                     # the demographic raises the intercept

data = gen_population(12, segments, DemographicsSpec(1, "binary"), 17, Delta=Delta,
                      state_shift=[[1.0, 0, 0, 0], [-1.0, 0, 0, 0]], T=150)
print(f"{len(data.users())} users, {len(data.records)} events")

hp = HyperParams(d=d, d_D=1, B=200, K_trunc=10, seed=17,
                 mu_Lambda0=np.array([0.0, 0.0, np.log(4.0), 0.0]),
                 Sigma_Lambda0=np.diag([1.0, 1.0, 0.25, 0.25]),
                 b_lambda=4.0)
eng = Engine(hp, barrier=BarrierSchedule(30), demographics=data.demographics)
eng.run(data.records).finish()

for b in eng.barrier_log:
    print(f"barrier at tick {b['tick']:3d}: {b['pairs']:2d} (user, state) pairs, "
          f"{b['clusters']} clusters, ELBO {b['elbo']:.2f}")

rep = eng.report()
print(f"Delta intercept estimate {rep['delta_mean'][0][0]:+.2f} "
      f"(sd {rep['delta_std'][0][0]:.2f}, true {Delta[0, 0]:+.2f})")
for uid, u in rep["users"].items():
    seg = data.truth[uid]["segment"]
    print(f"  {uid} segment {seg} D={data.demographics[uid][0]:.0f}  modal L={u['modal_L']}  "
          f"log predictive {u['log_predictive_total']:.1f}")
