"""Lorenz for r in [20, 28]: one box traps every flow and the attractor continues.

The box is a common sublevel set of a quadratic Lyapunov function, so the
combinatorial check only has to confirm what the estimate promises. This
takes a few minutes at 64^3. With much coarser parameter steps the
neighborhood from one value stops isolating at the next and the
continuation is reported broken.
"""

import numpy as np

from conleyflow.analysis import MapCache, Settings, lorenz_setup, seed_attractor, track_continuation, uniform_dissipativity
from conleyflow.dynamics import builtin_lorenz, lorenz_r

flow = builtin_lorenz()
lams = [float(x) for x in np.linspace(0.0, 1.0, 9)]
grid, regions = lorenz_setup(flow, lams, 64)
settings = Settings(tau=0.1)
cache = MapCache(flow, grid)

verdict = uniform_dissipativity(flow, lams, grid, settings=settings, regions=regions, cache=cache)
print(f"uniformly dissipative: {verdict.uniform}, box {verdict.box}")

seed = seed_attractor(flow, lams[0], grid, region=regions(lams[0]), settings=settings, cache=cache)
for rec in track_continuation(flow, lams, seed, grid, settings=settings, cache=cache):
    print(f"r={lorenz_r(flow, rec.lam):g}: {len(rec.cells)} cells, index {rec.index.homological}")
