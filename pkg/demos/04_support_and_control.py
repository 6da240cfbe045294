"""
Which states can the dynamics reach?
====================================

The thermostat variable cannot drop faster than kN kB T / a, and moving the
particles costs kinetic energy, so xi at time t is bounded below by the
distance travelled.  Every state above that bound is reached by some smooth
control; this script builds such controls and checks them by integration.
"""

import numpy as np

from nhb.control import SupportQuery, build_control_path, min_xi, support_member, verify_control
from nhb.dynamics import IntegratorConfig, simulate
from nhb.errors import InfeasibleTargetError
from nhb.model import State, SystemParams, make_potential

pot = make_potential({"kind": "harmonic"})
params = SystemParams()
x = State([0.2], [0.5], 0.1)
t = 1.0
q2, p2 = [0.8], [-0.3]

lowest = min_xi(x, t, q2, params, pot)
print(f"least reachable xi at q' = {q2[0]} after t = {t}: {lowest:.6f}")

# on the boundary, just inside it, and far inside (which needs a dwell)
for excess in (0.0, 0.3, 5.0):
    target = State(q2, p2, lowest + excess)
    path = build_control_path(x, t, target, pot, params)
    rep = verify_control(path, x, pot, params)
    print(f"xi' = lowest + {excess:<4g} {path.mode:>8} path (delta = {path.delta:.3g}), "
          f"endpoint error {rep.max_error:.1e}")

try:
    build_control_path(x, t, State(q2, p2, lowest - 1e-3), pot, params)
except InfeasibleTargetError as exc:
    print(f"below the bound: {exc}")

# simulated states always lie in the support of their start
tr = simulate(State.repeat(x, 200), IntegratorConfig(dt=0.01, n_steps=100, seed=3), pot, params)
end = tr.final_state()
inside = [support_member(SupportQuery(x, t, State(end.q[c], end.p[c], end.xi[c])), pot, params, rtol=1e-12)
          for c in range(200)]
print(f"{sum(inside)} of 200 simulated endpoints lie in the support")
print(f"smallest margin above the bound: "
      f"{min(float(end.xi[c]) - min_xi(x, t, end.q[c], params, pot) for c in range(200)):.4f}")
