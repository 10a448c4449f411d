"""Polarity: ever larger bounded orbits as lambda shrinks.

For each threshold L the test looks for an orbit that stays beyond L in
backward time and still ends up near the origin. Every witness carries its
trajectory and can be replayed.
"""

from conleyflow.analysis import polarity_test
from conleyflow.cubegrid import CubicalGrid
from conleyflow.dynamics import builtin_spiral, get_builtin

grid = CubicalGrid.cube(20.0, 2, 128)
P = polarity_test(builtin_spiral(), [0.0, 1 / 16, 1 / 8, 1 / 4], [3.0, 6.0, 9.0], grid)
print(f"spiral: polar={P.polar}, lambda_hat0={P.lam_hat0}")
for lam, L, found in P.table:
    print(f"  lambda={lam:<7g} L={L:<4g} witness={found}")
for w in P.witnesses:
    print(f"  witness lambda={w.lam:g} L={w.L:g} replays: {w.verify()}")

frozen = polarity_test(get_builtin("frozen_sink"), [0.25, 0.5, 1.0], [0.3, 0.6], CubicalGrid.cube(1.0, 2, 32))
print(f"frozen sink: polar={frozen.polar}")
