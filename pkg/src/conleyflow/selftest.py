"""Embedded oracle suites behind ``conleyflow selftest``.

Each suite compares a fast routine with a reference from ``oracles`` or
with values reduced by hand. All randomness uses fixed seeds, so the table
printed is the same on every run.
"""

from __future__ import annotations

import numpy as np

from . import oracles
from .cubegrid import CellSet, CubicalGrid, IndexPair, MultivaluedMap, components, invariant_part
from .dynamics import builtin_spiral, integrate
from .homology import GradedGroup, check_exact_sequence, homology, relative_homology, smith_diagonal


def random_map(rng: np.random.Generator, grid: CubicalGrid, max_image: int = 3) -> tuple[MultivaluedMap, list]:
    n = grid.ncells
    images = []
    for _ in range(n):
        k = int(rng.integers(0, max_image + 1))
        images.append(sorted(set(int(x) for x in rng.integers(0, n, size=k))))
    escaping = rng.random(n) < 0.1
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum([len(im) for im in images], out=indptr[1:])
    indices = np.array([c for im in images for c in im], dtype=np.int64)
    fmap = MultivaluedMap(
        grid, indptr, indices, escaping, np.zeros(n, dtype=bool), np.ones(n, dtype=bool)
    )
    return fmap, images


def suite_invariant(cases: int = 200, seed: int = 1) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        shape = tuple(int(x) for x in rng.integers(1, 6, size=2))
        grid = CubicalGrid((0.0, 0.0), (1.0, 1.0), shape)
        fmap, images = random_map(rng, grid)
        S = CellSet(grid, rng.random(grid.ncells) < 0.7)
        want = oracles.brute_invariant(images, fmap.escaping, S.indices.tolist())
        if set(invariant_part(fmap, S).indices.tolist()) != want:
            return False
    return True


def suite_components(cases: int = 200, seed: int = 2) -> bool:
    rng = np.random.default_rng(seed)
    grid = CubicalGrid((0.0, 0.0), (1.0, 1.0), (8, 8))
    for _ in range(cases):
        mask = rng.random(64) < rng.uniform(0.2, 0.8)
        got = [set(c.indices.tolist()) for c in components(CellSet(grid, mask))]
        if got != oracles.flood_components(mask.reshape(8, 8)):
            return False
    return True


# hand-reduced fixtures: (description, builder, expected homology)


def _grid2(n: int = 10) -> CubicalGrid:
    return CubicalGrid((0.0, 0.0), (float(n), float(n)), (n, n))


def square() -> CellSet:
    g = _grid2()
    return CellSet.from_centers(g, lambda c: np.all((c > 2) & (c < 8), axis=1))


def annulus() -> CellSet:
    g = _grid2()
    inner = CellSet.from_centers(g, lambda c: np.all((c > 4) & (c < 6), axis=1))
    return square() - inner


def annulus_pair() -> IndexPair:
    """Annulus relative to its inner boundary ring: all groups vanish."""
    N = annulus()
    g = N.grid
    ring = N & CellSet.from_centers(g, lambda c: np.all((c > 3) & (c < 7), axis=1))
    return IndexPair(N, ring, CellSet.empty(g))


def disk_pair() -> IndexPair:
    """A filled square with empty exit set: the homology of a point."""
    N = square()
    return IndexPair(N, CellSet.empty(N.grid), CellSet.empty(N.grid))


def saddle_pair() -> IndexPair:
    """Square relative to its left and right strips: Z in degree 1."""
    N = square()
    g = N.grid
    strips = N & CellSet.from_centers(g, lambda c: (c[:, 0] < 3) | (c[:, 0] > 7))
    return IndexPair(N, strips, CellSet.empty(g))


def hollow_cube() -> CellSet:
    g = CubicalGrid((0.0,) * 3, (3.0,) * 3, (3, 3, 3))
    return CellSet.full(g) - CellSet.from_indices(g, [13])


HAND_CASES = [
    ("filled square", lambda: homology(square()), GradedGroup((1, 0, 0))),
    ("annulus", lambda: homology(annulus()), GradedGroup((1, 1, 0))),
    ("annulus rel. inner ring", lambda: relative_homology(annulus_pair()), GradedGroup((0, 0, 0))),
    ("disk pair", lambda: relative_homology(disk_pair()), GradedGroup((1, 0, 0))),
    ("saddle pair", lambda: relative_homology(saddle_pair()), GradedGroup((0, 1, 0))),
    ("hollow cube shell", lambda: homology(hollow_cube()), GradedGroup((1, 0, 1, 0))),
]


def suite_hand_homology() -> bool:
    for _, build, want in HAND_CASES:
        got = build()
        top = max(got.top, want.top)
        if got.padded(top) != want.padded(top):
            return False
    return True


SNF_CASES = [
    ([[2, 4, 4], [-6, 6, 12], [10, -4, -16]], [2, 6, 12]),
    ([[1, 2], [3, 4]], [1, 2]),
    ([[0, 0], [0, 0]], []),
    ([[6]], [6]),
]


def suite_snf() -> bool:
    return all(smith_diagonal(m) == d for m, d in SNF_CASES)


def suite_exact_sequence() -> bool:
    Z0 = GradedGroup((1, 0, 0))
    zero = GradedGroup((0, 0, 0))
    good = check_exact_sequence(Z0, Z0, zero).ok
    bad = not check_exact_sequence(zero, Z0, zero).ok
    ring = check_exact_sequence(GradedGroup((1, 0, 0)), GradedGroup((1, 1, 0)), GradedGroup((0, 1, 0))).ok
    return good and bad and ring


def suite_integrator() -> bool:
    f = builtin_spiral()
    tr = integrate(f, 0.0, [1.0, 0.0], 3.0)
    ref = oracles.rk4(f.rhs, 0.0, [1.0, 0.0], 3.0, 1e-3)
    exact = np.exp(-3.0) * np.array([np.cos(3.0), np.sin(3.0)])
    return bool(np.allclose(tr.final, ref, atol=1e-7) and np.allclose(tr.final, exact, atol=1e-7))


SUITES = [
    ("invariant part vs brute force", 200, suite_invariant),
    ("components vs flood fill", 200, suite_components),
    ("homology of hand-reduced sets and pairs", len(HAND_CASES), suite_hand_homology),
    ("Smith normal form diagonals", len(SNF_CASES), suite_snf),
    ("exact sequence rank check", 3, suite_exact_sequence),
    ("integrator vs RK4 and closed form", 1, suite_integrator),
]


def run_selftest() -> tuple[str, bool]:
    lines = [f"{'suite':<42} {'cases':>5}  result"]
    ok = True
    for name, cases, fn in SUITES:
        try:
            passed = bool(fn())
        except Exception as exc:  # a crash is a failed oracle, reported in the table
            passed = False
            name = f"{name} ({type(exc).__name__})"
        ok &= passed
        lines.append(f"{name:<42} {cases:>5}  {'pass' if passed else 'FAIL'}")
    lines.append(f"{'overall':<42} {'':>5}  {'pass' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n", ok
