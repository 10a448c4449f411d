"""Find the ring that separates the origin's basin from the rest of the plane.

For the spiral family the origin attracts everything when lambda = 0. For
lambda > 0 a semi-stable circle of radius 1/lambda appears and the basin of
the origin becomes the open disk it bounds. The pipeline recovers that circle
as a cell set, measures it and checks its homology and index.
"""

from conleyflow.analysis import Settings, separator_pipeline
from conleyflow.cubegrid import CubicalGrid
from conleyflow.dynamics import builtin_spiral

grid = CubicalGrid.cube(6.0, 2, 256)
settings = Settings(ladder=(2.0, 16.0, 128.0), ladder_scaling="inverse_lambda", signature_samples=32)
verdict = separator_pipeline(builtin_spiral(), [0.5, 0.25], grid, settings=settings)

for rep in verdict.reports:
    sig = rep.signature
    print(f"lambda={rep.lam}: K has {len(rep.K.cells)} cells, ring has {len(rep.C.cells)} cells")
    print(f"  diameter {rep.C.diameter:.4f} (circle of radius 1/lambda has {2 / rep.lam:.1f})")
    print(f"  ring homology {sig.homology}, index trivial {rep.index_trivial}")
    print(f"  orbits enter the ring's neighborhood within {sig.entry_time_outside} (outside) "
          f"and {sig.entry_time_inside} (inside, backward)")
print(f"polar={verdict.polar} coercive={verdict.coercive}")
