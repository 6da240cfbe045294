"""
Certifying the drift condition
==============================

The cutoff scales p*, U*, xi* of the Lyapunov function are not known in
advance.  Starting from small seeds, the escalation doubles the scales that
the violating states implicate, until the drift bound L W <= -alpha W holds on
a whole energy shell outside a compact set.
"""

import json

from nhb.certify import escalate
from nhb.model import SystemParams, make_potential

pot = make_potential({"kind": "double_well", "c1": 0.25, "c2": 0.5})
params = SystemParams()

lp, rep = escalate(pot, params, alpha=1.0, beta0=0.2, eps0=0.06, n_samples=20000, n_explore=20000,
                   log=lambda e: print(json.dumps(e)))

print(f"\n{rep.message}: scales p* = {lp.p_star:g}, U* = {lp.U_star:g}, xi* = {lp.xi_star:g}")
print(f"compact set H < {rep.compact_R:.6g}; shell [{rep.shell[0]:.6g}, {rep.shell[1]:.6g}]")
print(f"{rep.n_outside} shell samples, worst drift {rep.max_drift_outside:.4f} (bound -alpha = -1)")
print(f"log K = {rep.logK:.6g} (sandwich bound {rep.logK_bound:.6g})")
print("samples per region:", rep.region_counts)
