"""Cubical homology and Conley indices on small hand-checkable examples."""

import numpy as np

from conleyflow.cubegrid import CellSet, CubicalGrid, invariant_part, outer_approximation
from conleyflow.dynamics import get_builtin
from conleyflow.homology import GradedGroup, check_exact_sequence, conley_index, homology, relative_homology
from conleyflow.selftest import annulus, hollow_cube, saddle_pair

print("annulus:", homology(annulus()))
print("hollow cube:", homology(hollow_cube()))
print("square rel. left and right strips:", relative_homology(saddle_pair()))

g = CubicalGrid.cube(1.0, 2, 32)
f = get_builtin("saddle")
fwd = outer_approximation(f, 0.0, g, 0.5)
rev = outer_approximation(f.reversed(), 0.0, g, 0.5)
K = invariant_part(fwd, CellSet.from_centers(g, lambda c: np.all(np.abs(c) < 0.5, axis=1)))
ci = conley_index(fwd, rev, K)
print(f"saddle: {len(K)} cells, CH = {ci.cohomological}, duality {ci.duality_ok}")

Z = GradedGroup((1, 0, 0))
print("exact (Z, Z, 0):", check_exact_sequence(Z, Z, GradedGroup((0, 0, 0))).ok)
print("exact (Z, Z^2, 0):", check_exact_sequence(Z, GradedGroup((2, 0, 0)), GradedGroup((0, 0, 0))).ok)
