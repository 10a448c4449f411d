import json

import numpy as np
import pytest

from conleyflow.analysis import (
    ContinuationBroken,
    FamilyVerdict,
    InvariantSetRecord,
    LambdaReport,
    NotTrapping,
    Settings,
    ball_region,
    coercivity_signature,
    complement_sides,
    extract_separator,
    find_global_attractor,
    polarity_test,
    separator_pipeline,
    track_continuation,
    uniform_dissipativity,
)
from conleyflow.cubegrid import CellSet, CubicalGrid, components, invariant_part, outer_approximation
from conleyflow.dynamics import builtin_spiral, flow_from_text, get_builtin, integrate
from conleyflow.homology import GradedGroup

Z = GradedGroup((1, 0, 0))


def same(a, b):
    top = max(a.top, b.top)
    return a.padded(top) == b.padded(top)


@pytest.fixture(scope="module")
def spiral3():
    g = CubicalGrid.cube(3.0, 2, 128)
    return builtin_spiral(), g, find_global_attractor(builtin_spiral(), 0.0, g)


@pytest.fixture(scope="module")
def spiral256():
    g = CubicalGrid.cube(6.0, 2, 256)
    s = Settings(ladder=(2.0, 16.0, 128.0), ladder_scaling="inverse_lambda", signature_samples=32)
    return separator_pipeline(builtin_spiral(), [0.5, 0.25], g, settings=s), g


@pytest.fixture(scope="module")
def polar_sweep():
    g = CubicalGrid.cube(20.0, 2, 128)
    return polarity_test(builtin_spiral(), [0.0, 1 / 16, 1 / 8, 1 / 4], [3.0, 6.0, 9.0], g)


class TestGlobalAttractor:
    def test_spiral_at_zero(self, spiral3):
        _, g, A = spiral3
        assert same(A.index.cohomological, Z)
        assert A.basin == CellSet.full(g)
        assert np.linalg.norm(A.cells.centers(), axis=1).max() < 0.3

    def test_linear_sink(self):
        g = CubicalGrid.cube(1.0, 2, 32)
        A = find_global_attractor(get_builtin("sink"), 0.0, g)
        assert np.linalg.norm(A.cells.centers(), axis=1).max() < 0.45
        assert same(A.index.cohomological, Z)

    def test_saddle_box_is_not_trapping(self):
        g = CubicalGrid.cube(1.0, 2, 16)
        with pytest.raises(NotTrapping) as info:
            find_global_attractor(get_builtin("saddle"), 0.0, g)
        assert len(info.value.cells) > 0
        assert "offending cells" in str(info.value)


class TestUniformDissipativity:
    def test_square_box_fails_where_orbits_graze_its_edge(self):
        f = builtin_spiral()
        g = CubicalGrid.cube(15.0, 2, 128)
        v = uniform_dissipativity(f, [0.1, 0.25, 0.5, 1.0], g)
        assert not v.uniform and v.box is None
        assert [ok for _, ok, _ in v.per_lambda] == [False, True, True, True]
        # the flow itself leaves the square: not a discretization artifact
        tr = integrate(f, 0.1, [-15.0, 13.3], 0.5)
        assert tr.final[0] < -15.0

    @pytest.mark.parametrize("lams", [[0.1, 0.25, 0.5, 1.0], [0.01, 0.05, 0.1]])
    def test_inscribed_disk_traps(self, lams):
        # dr/dt <= 0 everywhere, so every centered disk is forward invariant
        g = CubicalGrid.cube(15.0, 2, 256)
        disk = ball_region(g)
        v = uniform_dissipativity(builtin_spiral(), lams, g, regions=lambda lam: disk)
        assert v.uniform
        assert v.box == ((-15.0, -15.0), (15.0, 15.0))
        assert len(v.records) == len(lams)

    def test_ball_region(self):
        g = CubicalGrid.cube(2.0, 2, 4)
        assert len(ball_region(g, 0.1)) == 4
        assert ball_region(g) == ball_region(g, 2.0)
        with pytest.raises(ValueError):
            ball_region(g, 0.0)


class TestContinuation:
    def test_origin_persists_with_constant_index(self, spiral3):
        f, g, seed = spiral3
        recs = track_continuation(f, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5], seed, g)
        assert [r.lam for r in recs] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        for r in recs:
            assert same(r.index.homological, Z)
            assert np.linalg.norm(r.cells.centers(), axis=1).max() < 0.5

    def test_frozen_family(self):
        f = get_builtin("frozen_sink")
        g = CubicalGrid.cube(1.0, 2, 32)
        seed = find_global_attractor(f, 0.0, g)
        recs = track_continuation(f, [0.0, 0.5, 1.0], seed, g)
        assert len({r.cells for r in recs}) == 1

    def test_jumping_equilibrium_breaks(self):
        f = flow_from_text("-(x1 - 2*lambda)\n-x2\n")
        g = CubicalGrid((-1.0, -1.0), (3.0, 1.0), (32, 16))
        seed = find_global_attractor(f, 0.0, g)
        with pytest.raises(ContinuationBroken) as info:
            track_continuation(f, [0.0, 1.0], seed, g)
        assert info.value.lam == 1.0
        assert [r.lam for r in info.value.records] == [0.0]


class TestSeparator:
    def test_empty_when_attractor_is_global(self, spiral3):
        f, g, A = spiral3
        K = InvariantSetRecord(0.0, "continued_attractor", A.cells, A.index)
        C = extract_separator(f, 0.0, K, g)
        assert C.cells.is_empty
        assert A.basin == CellSet.full(g)

    @pytest.mark.parametrize("lam", [0.5, 0.25])
    def test_ring_diameter(self, spiral256, lam):
        V, g = spiral256
        rep = next(r for r in V.reports if r.lam == lam)
        h = float(g.cell_size[0])
        assert abs(rep.C.diameter - 2 / lam) <= 2 * h

    def test_family_verdict(self, spiral256):
        V, g = spiral256
        assert V.polar and V.applicable and V.coercive
        assert not V.uniform_dissipative
        for rep in V.reports:
            assert rep.index_trivial
            assert rep.C.index.duality_ok
            assert rep.exact.ok
            assert rep.signature.passed
            assert same(rep.signature.homology, GradedGroup((1, 1, 0)))
        d = [r.C.diameter for r in V.reports]
        assert d[0] > d[1]
        h = float(g.cell_size[0])
        assert all(r.C.diameter >= 2 / r.lam - 2 * h for r in V.reports)

    def test_json_and_csv(self, spiral256):
        V, _ = spiral256
        doc = json.loads(json.dumps(V.to_json()))
        assert doc["coercive"] is True
        assert len(V.csv_rows()) == 2 and len(V.csv_rows()[0]) == 9


class TestCoercivity:
    def test_two_rings_do_not_separate(self):
        g = CubicalGrid.cube(6.0, 2, 128)
        r = lambda c: np.linalg.norm(c, axis=1)  # noqa: E731
        rings = CellSet.from_centers(g, lambda c: (np.abs(r(c - [-3, 0]) - 1.5) < 0.1) | (np.abs(r(c - [3, 0]) - 1.5) < 0.1))
        K = CellSet.from_centers(g, lambda c: r(c - [-3, 0]) < 0.2)
        C = InvariantSetRecord(0.5, "separating_set", rings)
        sig = coercivity_signature(builtin_spiral(), C, InvariantSetRecord(0.5, "continued_attractor", K), g)
        assert len(components(CellSet.full(g) - rings)) == 3
        assert not sig.separates
        assert sig.bounded_components == 2 and sig.unbounded_components == 1
        assert not sig.passed

    def test_figure_eight_is_not_a_circle(self):
        # double-well energy level through the saddle: two lobes, H1 of rank 2
        f = get_builtin("double_well")
        g = CubicalGrid.cube(2.0, 2, 128)
        M = outer_approximation(f, 0.0, g, 0.5)
        near = lambda p: CellSet.from_centers(g, lambda c: np.linalg.norm(c - p, axis=1) < 0.1)  # noqa: E731
        Ks = invariant_part(M, (near([1.0, 0.0]) | near([-1.0, 0.0])).dilate(3))
        C = invariant_part(M, CellSet.full(g) - Ks.dilate(2))
        sig = coercivity_signature(
            f,
            InvariantSetRecord(0.0, "separating_set", C),
            InvariantSetRecord(0.0, "continued_attractor", Ks),
            g,
        )
        assert sig.homology.rank(1) == 2
        assert not sig.sphere_homology
        assert sig.bounded_components == 2 and not sig.separates

    def test_empty_separator_rejected(self, spiral3):
        f, g, A = spiral3
        with pytest.raises(ValueError):
            coercivity_signature(
                f, InvariantSetRecord(0.0, "separating_set", CellSet.empty(g)),
                InvariantSetRecord(0.0, "continued_attractor", A.cells), g,
            )

    def test_complement_sides(self):
        g = CubicalGrid.cube(3.0, 2, 30)
        ring = CellSet.from_centers(g, lambda c: np.abs(np.linalg.norm(c, axis=1) - 1.5) < 0.15)
        bounded, unbounded = complement_sides(ring)
        assert len(bounded) == 1 and len(unbounded) == 1


class TestPolarity:
    def test_spiral_sweep_is_polar(self, polar_sweep):
        assert polar_sweep.polar
        assert polar_sweep.lam_hat0 is not None

    def test_witnesses_replay(self, polar_sweep):
        assert polar_sweep.witnesses
        for w in polar_sweep.witnesses:
            assert w.verify()
            tr = w.trajectory
            tail = tr.times < w.t_lam
            assert np.all(tr.norms()[tail] > w.L)
            assert np.all(np.abs(tr.states) <= 20.0)

    def test_no_witness_beyond_the_ring(self):
        g = CubicalGrid.cube(12.0, 2, 128)
        P = polarity_test(builtin_spiral(), [0.5], [10.0], g)
        assert not P.polar
        assert P.table == ((0.5, 10.0, False),)

    def test_frozen_sink_is_not_polar(self):
        g = CubicalGrid.cube(1.0, 2, 32)
        P = polarity_test(get_builtin("frozen_sink"), [0.25, 0.5, 1.0], [0.3, 0.6], g)
        assert not P.polar and not P.witnesses

    def test_threshold_must_fit_in_box(self):
        with pytest.raises(ValueError):
            polarity_test(builtin_spiral(), [0.5], [100.0], CubicalGrid.cube(3.0, 2, 16))


class TestPipeline:
    def test_empty_grid(self):
        V = separator_pipeline(builtin_spiral(), [], CubicalGrid.cube(3.0, 2, 16))
        assert V.reports == () and not V.polar and not V.coercive

    def test_lorenz_is_not_polar(self, lorenz64):
        V, _, _ = lorenz64
        assert V.uniform_dissipative
        assert not V.polar and not V.applicable and not V.coercive
        assert "not polar; separator analysis not applicable" in V.notes

    def test_coercive_needs_signatures(self):
        rep = LambdaReport(0.5)
        with pytest.raises(ValueError):
            FamilyVerdict((0.5,), (rep,), None, {}, None, None, True, True)

    def test_parameter_outside_range(self):
        with pytest.raises(ValueError):
            separator_pipeline(builtin_spiral(), [2.0], CubicalGrid.cube(3.0, 2, 16))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"tau": 0.0},
        {"samples_per_axis": 1},
        {"bloat": -1},
        {"collar": 0},
        {"ladder_scaling": "log"},
        {"ladder": (1.0, -2.0)},
        {"signature_shell": 0},
        {"signature_dt": 0.0},
    ],
)
def test_settings_validation(kwargs):
    with pytest.raises(ValueError):
        Settings(**kwargs)
