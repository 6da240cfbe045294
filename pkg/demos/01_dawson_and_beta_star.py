"""
Dawson's integral and the admissible range of beta0
===================================================

The exponential weight W = exp(beta0 H + psi) only works for beta0 below a
threshold fixed by the maximum of Dawson's integral D.  This script tabulates
D, locates its maximum and prints the threshold for a few temperatures.
"""

import numpy as np

from nhb.model import SystemParams
from nhb.specfun import F_unit, beta_star, dawson, dawson_max

# D is odd, rises to a single maximum and then decays like 1/(2z)
z = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 5.0, 10.0, 100.0])
print(f"{'z':>8} {'D(z)':>20} {'2 z D(z)':>12} {'F_unit(z)':>20}")
for zi, d, f in zip(z, dawson(z), F_unit(z)):
    print(f"{zi:>8.3g} {d:>20.16f} {2 * zi * d:>12.8f} {f:>20.16f}")

dm = dawson_max()
print(f"\nmaximiser z* = {dm.z_star:.16f}, D_max = {dm.d_max:.16f}")

# the threshold scales like 1/(kB T)
for T in (0.5, 1.0, 2.0):
    print(f"kB T = {T:<4g} beta* = {beta_star(SystemParams(T=T)):.12f}")

# F_unit is the antiderivative of D; it grows like log(z)/2 for large z
zz = np.array([10.0, 100.0, 1000.0])
print("\nF_unit(z) - log(z)/2:", F_unit(zz) - 0.5 * np.log(zz))
