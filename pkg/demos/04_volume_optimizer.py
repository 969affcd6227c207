"""Choosing how much to share.

Sharing more lowers the round count but costs multicast time and makes the
receivers' local epochs longer.  The optimiser balances the two; on a
two-cluster instance its answer is checked against an exhaustive grid.
"""

import numpy as np

from clusterfel import jfvo, roundsfit, wireless
from clusterfel.structures import ClusterAssignment

rng = np.random.default_rng(1)
clients = [(100, np.full(4, 0.25)), (80, np.eye(4)[1]), (90, np.eye(4)[2]),
           (110, np.array([0.3, 0.2, 0.25, 0.25])), (70, np.eye(4)[3])]
assignment = ClusterAssignment((0, 3), {0: (1, 2), 3: (4,)})
snap = wireless.LinkSnapshot(np.full(5, 0.01), rng.uniform(0.005, 0.02, 5), rng.uniform(1e-4, 1e-3, 5))
ctx = jfvo.wireless_context(clients, np.full(4, 0.25), assignment, roundsfit.RoundModel((0.5, -1.83, 1.7), (0, 2)),
                            wireless.ComputeParams(), snap, {0: 5e7, 3: 3e7})

res = jfvo.jfvo(ctx)
print("objective per outer iteration:", [round(v, 4) for v in res.outer_trace])
print("volumes:", res.plan.volumes, "feasible:", res.feasible)
N, best = jfvo.grid_oracle(ctx, 1.0)
print(f"grid optimum {best:.4f} at {N.tolist()}, optimiser {res.objective:.4f}")
for k, f in res.plan.frequencies.items():
    print(f"client {k}: {f / 1e6:.1f} MHz")
