"""How fast do the damped Grushin fields approach their nilpotent limit?

For X1 = d1, X2 = (x1 + x1^2) d2 at the origin the rescaled fields differ from
the hat fields by a term of order eps. Damping that difference with a cutoff
at sR radius |eps|^-gamma trades some of it away; the sup-norm error then
decays like |eps|^(1 - 2 gamma). Fitting the log-log slope over four decades
shows the predicted rate for a few gammas.
"""

import numpy as np

from srheat import load_corpus
from srheat.nilpotent import damping_rate_fit

spec = load_corpus("grushin_pert")
S = spec.nilpotent()
X2 = S.pushed_fields[1]
eps_grid = np.logspace(-5, -1, 9)

print(f"{'gamma':>6} {'fitted':>8} {'1-2*gamma':>10}")
for gamma in (0.1, 0.2, 0.3, 0.4):
    slope, rms, sups = damping_rate_fit(X2, S, gamma, eps_grid)
    print(f"{gamma:6.2f} {slope:8.4f} {1 - 2 * gamma:10.4f}")

# Without the cutoff, X^eps - Xhat = eps x1^2 d2 is unbounded on the plane, so
# there is no uniform rate at all. The cutoff confines the difference to the
# ball of sR radius ~|eps|^-gamma, where x1^2 <= |eps|^-2gamma: that is where
# the exponent 1 - 2 gamma comes from.
