"""
The two-dimensional closure map
===============================

In 2D the Bingham fourth moment S1111 is a function of the single eigenvalue
mu1 of D/c.  This demo fits the Chebyshev interpolant, looks at how fast its
coefficients fall off, and checks it against a direct solve.
"""
import time

import numpy as np

from bingham_closure import chebmap, solve

# Fitting is cheap: one Newton solve per node and a DCT.
t0 = time.perf_counter()
cmap = chebmap.fit_map_2d(99)
print(f"degree 99 fit in {time.perf_counter() - t0:.2f} s")

# The coefficients decay geometrically until they hit rounding.
c = np.abs(cmap.coeffs)
for m in (0, 10, 20, 40, 60, 80, 95):
    print(f"|c_{m:<2d}| = {c[m]:.2e}")

# Compare with a direct solve at a few points, including near perfect alignment.
for mu1 in (0.5, 0.6, 0.8, 0.95, 0.999):
    lam = solve.solve_lambda_2d(mu1) if mu1 > 0.5 else 0.0
    direct = solve.s1111_from_lambda_2d(lam)
    print(f"mu1 = {mu1:<6} lambda = {lam:10.4f}  map = {float(cmap(mu1)):.15f}  direct = {direct:.15f}")

# The map ends are fixed by symmetry: 3/8 at isotropy and 1 at perfect alignment.
print("S1111(1/2) =", float(cmap(0.5)), " S1111(1) =", float(cmap(1.0)))

# How many angular nodes does the distribution need near alignment?
for mu1 in (0.9, 0.99, 0.999):
    print(f"quadrature estimate at mu1 = {mu1}: N = {solve.quadrature_estimate(mu1, float(cmap(mu1))):.0f}")
