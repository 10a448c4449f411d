import math
from functools import reduce

import numpy as np
import pytest

from conleyflow import oracles
from conleyflow.cubegrid import (
    CellSet,
    CubicalGrid,
    EmptySet,
    IndexPair,
    NotIsolated,
    invariant_part,
    outer_approximation,
)
from conleyflow.dynamics import EscapePolicy, builtin_spiral, get_builtin
from conleyflow.homology import (
    CubicalComplex,
    GradedGroup,
    InvalidPair,
    chain_homology,
    check_exact_sequence,
    conley_index,
    homology,
    relative_homology,
    smith_diagonal,
)
from conleyflow.selftest import HAND_CASES, annulus, annulus_pair, hollow_cube, saddle_pair, square

Z = GradedGroup((1, 0, 0))
ZERO = GradedGroup((0, 0, 0))


def same(a: GradedGroup, b: GradedGroup) -> bool:
    top = max(a.top, b.top)
    return a.padded(top) == b.padded(top)


def dense_boundaries(cx: CubicalComplex):
    return [cx.boundary_matrix(k).toarray() for k in range(cx.dim + 1)]


@pytest.mark.parametrize("name,build,want", HAND_CASES, ids=[c[0] for c in HAND_CASES])
def test_hand_reduced(name, build, want):
    assert same(build(), want)


def test_one_cell_is_a_point():
    g = CubicalGrid.cube(1.0, 2, 4)
    assert same(homology(CellSet.from_indices(g, [5])), Z)


def test_hollow_cube_face_count_and_euler():
    cx = CubicalComplex.from_pair(hollow_cube())
    # 27 cubes less the centre one
    assert cx.counts()[3] == 26
    assert cx.euler_characteristic() == 2


def test_empty_set():
    with pytest.raises(EmptySet):
        homology(CellSet.empty(CubicalGrid.cube(1.0, 2, 4)))


def test_exit_outside_N_is_invalid():
    g = CubicalGrid.cube(1.0, 2, 4)
    N = CellSet.from_indices(g, [0, 1])
    with pytest.raises(InvalidPair):
        relative_homology(IndexPair(N, CellSet.from_indices(g, [2]), CellSet.empty(g)))


FIXTURES = {
    "square": lambda: (square(), None),
    "annulus": lambda: (annulus(), None),
    "annulus pair": lambda: (annulus_pair().N, annulus_pair().exit),
    "saddle pair": lambda: (saddle_pair().N, saddle_pair().exit),
    "hollow cube": lambda: (hollow_cube(), None),
}


@pytest.mark.parametrize("name", FIXTURES)
def test_boundary_of_boundary_vanishes(name):
    cx = CubicalComplex.from_pair(*FIXTURES[name]())
    for k in range(1, cx.dim):
        assert (cx.boundary_matrix(k) @ cx.boundary_matrix(k + 1)).count_nonzero() == 0


@pytest.mark.parametrize("name", FIXTURES)
def test_euler_characteristic(name):
    cx = CubicalComplex.from_pair(*FIXTURES[name]())
    h = chain_homology(cx)
    assert sum((-1) ** k * r for k, r in enumerate(h.ranks)) == cx.euler_characteristic()


@pytest.mark.parametrize("name", FIXTURES)
def test_rational_betti_oracle(name):
    cx = CubicalComplex.from_pair(*FIXTURES[name]())
    want = oracles.rational_betti(dense_boundaries(cx), cx.counts())
    assert list(chain_homology(cx).padded(len(want) - 1).ranks) == want


@pytest.mark.parametrize("name", FIXTURES)
def test_refinement_invariance(name):
    N, E = FIXTURES[name]()
    before = relative_homology(IndexPair(N, E if E is not None else CellSet.empty(N.grid), CellSet.empty(N.grid)))
    N2 = N.refine(2)
    E2 = E.refine(2) if E is not None else CellSet.empty(N2.grid)
    assert same(relative_homology(IndexPair(N2, E2, CellSet.empty(N2.grid))), before)


def test_random_sets_match_rational_oracle():
    rng = np.random.default_rng(21)
    g = CubicalGrid.cube(1.0, 2, 6)
    for _ in range(40):
        N = CellSet(g, rng.random(g.ncells) < 0.55)
        if N.is_empty:
            continue
        E = N & CellSet(g, rng.random(g.ncells) < 0.3)
        cx = CubicalComplex.from_pair(N, E)
        want = oracles.rational_betti(dense_boundaries(cx), cx.counts())
        assert list(chain_homology(cx).padded(len(want) - 1).ranks) == want


class TestSmith:
    @pytest.mark.parametrize(
        "m,d",
        [
            ([[2, 4, 4], [-6, 6, 12], [10, -4, -16]], [2, 6, 12]),
            ([[1, 2], [3, 4]], [1, 2]),
            ([[0, 0], [0, 0]], []),
            ([[6]], [6]),
            ([[2, 0], [0, 3]], [1, 6]),
            ([[4, 0, 0], [0, 6, 0], [0, 0, 10]], [2, 2, 60]),
        ],
    )
    def test_known(self, m, d):
        assert smith_diagonal(m) == d

    def test_big_entries_do_not_overflow(self):
        big = 2**70
        assert smith_diagonal([[big, 0], [0, big * 3]]) == [big, 3 * big]

    def test_invariants_on_random_matrices(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            r, c = rng.integers(1, 6, size=2)
            m = rng.integers(-4, 5, size=(r, c))
            d = smith_diagonal(m.tolist())
            assert len(d) == np.linalg.matrix_rank(m)
            assert all(x > 0 for x in d)
            assert all(b % a == 0 for a, b in zip(d, d[1:]))
            if d:
                assert d[0] == reduce(math.gcd, (abs(int(x)) for x in m.ravel()))
            if r == c and d and len(d) == r:
                assert math.prod(d) == abs(round(np.linalg.det(m)))


class TestGradedGroup:
    def test_universal_coefficients(self):
        h = GradedGroup((1, 2, 0), ((), (2, 4), (3,)))
        c = h.cohomology()
        assert c.ranks == h.ranks
        assert c.torsion == ((), (), (2, 4))

    def test_invalid_torsion(self):
        with pytest.raises(ValueError):
            GradedGroup((0, 0), ((), (4, 6)))
        with pytest.raises(ValueError):
            GradedGroup((0,), ((1,),))

    def test_json_round_trip(self):
        h = GradedGroup((1, 0, 2), ((), (3,), ()))
        assert GradedGroup.from_json(h.to_json()) == h
        assert list(h.to_json()[1]) == ["dim", "rank", "torsion"]

    def test_str(self):
        assert str(GradedGroup((1, 1, 0))) == "H0=Z, H1=Z"
        assert str(ZERO) == "0"


class TestExactSequence:
    def test_attractor_and_total_agree(self):
        assert check_exact_sequence(Z, Z, ZERO).ok

    def test_all_zero(self):
        assert check_exact_sequence(ZERO, ZERO, ZERO).ok

    def test_corrupted_triple_fails_in_degree_zero(self):
        v = check_exact_sequence(Z, GradedGroup((2, 0, 0)), ZERO)
        assert not v.ok and v.failing_degree == 0

    def test_split_triple_passes(self):
        # 0 -> Z -> Z^2 -> Z -> 0 is exact
        assert check_exact_sequence(Z, GradedGroup((2, 0, 0)), Z).ok

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            a, s, r = (GradedGroup(tuple(rng.integers(0, 4, size=3))) for _ in range(3))
            seq = []
            for k in range(3):
                seq += [r.rank(k), s.rank(k), a.rank(k)]
            assert check_exact_sequence(a, s, r).ok == oracles.exact_by_search(seq)


@pytest.fixture(scope="module")
def ring_maps():
    g = CubicalGrid.cube(3.0, 2, 128)
    pol = EscapePolicy.for_box(g.lo, g.hi)
    f = builtin_spiral()
    fwd = outer_approximation(f, 0.5, g, 0.5, policy=pol)
    rev = outer_approximation(f.reversed(), 0.5, g, 0.5, policy=pol)
    band = CellSet.from_centers(g, lambda c: (np.linalg.norm(c, axis=1) >= 1) & (np.linalg.norm(c, axis=1) <= 3))
    return fwd, rev, invariant_part(fwd, band)


class TestConleyIndex:
    def test_global_attractor(self):
        g = CubicalGrid.cube(3.0, 2, 128)
        f = builtin_spiral()
        fwd = outer_approximation(f, 0.0, g, 0.5)
        A = invariant_part(fwd, CellSet.full(g))
        ci = conley_index(fwd, None, A, region=CellSet.full(g))
        assert same(ci.cohomological, Z)
        assert ci.reverse is None and ci.duality_ok is None

    def test_ring_is_trivial_both_ways(self, ring_maps):
        fwd, rev, K = ring_maps
        ci = conley_index(fwd, rev, K, width=4)
        assert ci.is_trivial and ci.reverse.is_trivial
        assert ci.duality_ok
        assert ci.reverse.direction == "reverse"

    def test_ring_has_circle_homology(self, ring_maps):
        assert same(homology(ring_maps[2]), GradedGroup((1, 1, 0)))

    def test_reverse_failure_is_labeled(self, ring_maps):
        fwd, rev, K = ring_maps
        with pytest.raises(NotIsolated, match="^reverse:"):
            conley_index(fwd, rev, K, width=2)

    def test_saddle(self):
        g = CubicalGrid.cube(1.0, 2, 32)
        f = get_builtin("saddle")
        fwd = outer_approximation(f, 0.0, g, 0.5)
        rev = outer_approximation(f.reversed(), 0.0, g, 0.5)
        K = invariant_part(fwd, CellSet.from_centers(g, lambda c: np.all(np.abs(c) < 0.5, axis=1)))
        ci = conley_index(fwd, rev, K)
        assert same(ci.cohomological, GradedGroup((0, 1, 0)))
        assert same(ci.reverse.homological, GradedGroup((0, 1, 0)))
        assert ci.duality_ok

    def test_universal_coefficients_link(self, ring_maps):
        fwd, rev, K = ring_maps
        ci = conley_index(fwd, rev, K, width=4)
        for k in range(3):
            assert ci.cohomological.rank(k) == ci.homological.rank(k)
            assert ci.cohomological.tors(k) == ci.homological.tors(k - 1)
