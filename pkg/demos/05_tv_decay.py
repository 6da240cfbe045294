"""
Forgetting the initial condition
================================

Two ensembles started from opposite sides of a harmonic well are compared by
the total variation distance of their (q, p) histograms.  The distance stays
at one while the ensembles do not overlap, then decays exponentially until it
reaches the sampling noise floor.
"""

import sys

import numpy as np

from nhb.diagnostics import tv_decay
from nhb.dynamics import IntegratorConfig, simulate
from nhb.model import State, SystemParams, make_potential

pot = make_potential({"kind": "harmonic"})
params = SystemParams()
chains = 5000 if len(sys.argv) < 2 else int(sys.argv[1])
cfg = IntegratorConfig(dt=1e-2, n_steps=1000, seed=11)

runs = []
for q0, ids in ((-3.0, np.arange(chains)), (3.0, np.arange(chains, 2 * chains))):
    x0 = State(np.full((chains, 1), q0), np.zeros((chains, 1)), np.zeros(chains))
    runs.append(simulate(x0, cfg, pot, params, thinning=5, chain_ids=ids))

tv = tv_decay(*runs)
i0, i1 = tv.window
print(f"fit window t in [{tv.times[i0]:.2f}, {tv.times[i1 - 1]:.2f}]: rate {tv.rate:.4f}, R^2 {tv.r2:.4f}")
for k in range(0, tv.times.size, 10):
    bar = "#" * int(50 * tv.tv[k])
    print(f"t = {tv.times[k]:5.2f} TV {tv.tv[k]:.4f} floor {tv.floor[k]:.4f} {bar}")
