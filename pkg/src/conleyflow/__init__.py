"""Conley-index tools for parameter families of flows.

The building blocks live in submodules: ``dynamics`` (vector fields and
integration), ``cubegrid`` (cubical grids, cell sets, combinatorial maps),
``homology`` (cubical homology and Conley indices) and ``analysis``
(family-level verdicts). ``cli`` wires them into the command line tool.
"""

from .analysis import (
    FamilyVerdict,
    InvariantSetRecord,
    MapCache,
    Settings,
    coercivity_signature,
    extract_separator,
    find_global_attractor,
    polarity_test,
    separator_pipeline,
    track_continuation,
    uniform_dissipativity,
)
from .cubegrid import CellSet, CubicalGrid, MultivaluedMap, invariant_part, outer_approximation
from .dynamics import EscapePolicy, ParametrizedFlow, builtin_lorenz, builtin_spiral, integrate
from .homology import GradedGroup, conley_index, homology

__version__ = "0.1.0"
