"""
Evaluating the three-dimensional closure
========================================

The 3D map takes the two largest eigenvalues of D/c, sends the eigenvalue
triangle to a square and evaluates a bivariate Chebyshev series.  Here we
check the corners, recover the Bingham parameters from the moments, and
contract the closure with a strain rate in an arbitrary frame.
"""
import numpy as np
from scipy.spatial.transform import Rotation

from bingham_closure import chebmap, frame, solve

cmap = chebmap.default_map(3, 80)

# Corners of the eigenvalue triangle have closed forms.
for name, mu in (("isotropic", (1 / 3, 1 / 3)), ("planar", (0.5, 0.5)), ("aligned", (1.0, 0.0))):
    print(f"{name:>9}: (S1111, S1122, S2222) = {np.round(cmap(*mu), 12)}")

# An interior point against the Newton solve plus product quadrature.
mu1, mu2 = 0.62, 0.27
params = solve.solve_lambda_3d((mu1, mu2))
m = solve.sphere_moments(params)
print("lambda (relative to the third axis):", params.lambdas)
print("map   :", np.array(cmap(mu1, mu2)))
print("direct:", np.array([m.s1111, m.s1122, m.s2222]))

# Going backwards: the fourth moments determine the Bingham matrix.
mus = np.array([mu1, mu2, 1 - mu1 - mu2])
s = frame.evaluate_map(cmap, mus)
print("recovered trace-free lambda:", frame.recover_lambdas(mus, s)[0])

# S:E for a rotated nematic state.  Rotating the inputs rotates the output.
rng = np.random.default_rng(0)
R = Rotation.random(random_state=rng).as_matrix()
D = R @ np.diag(mus) @ R.T
E = rng.standard_normal((3, 3))
E = E + E.T
SdotT, fr, _ = frame.closure_eval(D, 1.0, 0.0, E, cmap)
print("S:E =\n", np.round(SdotT, 10))
Q = Rotation.random(random_state=rng).as_matrix()
turned, _, _ = frame.closure_eval(Q @ D @ Q.T, 1.0, 0.0, Q @ E @ Q.T, cmap)
print("frame independence error:", np.max(np.abs(turned - Q @ SdotT @ Q.T)))
