"""One test per acceptance criterion; each prints a PASS or FAIL line."""

import textwrap
import time

import numpy as np
import pytest

from conleyflow.analysis import (
    Settings,
    find_global_attractor,
    lorenz_setup,
    separator_pipeline,
)
from conleyflow.cli import cmd_sweep, load_config
from conleyflow.cubegrid import CubicalGrid
from conleyflow.dynamics import builtin_lorenz, builtin_spiral
from conleyflow.homology import GradedGroup, check_exact_sequence
from conleyflow.selftest import suite_components, suite_hand_homology, suite_invariant

Z = GradedGroup((1, 0, 0))
CIRCLE = GradedGroup((1, 1, 0))


def same(a, b):
    top = max(a.top, b.top)
    return a.padded(top) == b.padded(top)


def report_for(verdict, lam):
    return next(r for r in verdict.reports if r.lam == lam)


def test_ring_reproduction(spiral512, record):
    V, grid, elapsed = spiral512
    tol = 2 * float(grid.cell_size[0])
    per_lambda = elapsed / len(V.reports)
    parts, ok = [], per_lambda < 60.0
    for lam in (0.5, 0.25):
        rep = report_for(V, lam)
        K_near_origin = float(np.linalg.norm(rep.K.cells.centers(), axis=1).max()) < 4 * tol
        d = rep.C.diameter
        ok &= K_near_origin and not rep.C.cells.is_empty and abs(d - 2 / lam) <= tol
        parts.append(f"lambda={lam}: diameter {d:.4f} vs {2 / lam:.1f} +- {tol:.4f}")
    parts.append(f"{per_lambda:.1f}s per lambda")
    assert record(1, "ring separator on [-6,6]^2 at 512^2", ok, "; ".join(parts))


def test_separator_index_is_trivial(spiral512, record):
    V, _, _ = spiral512
    ok, parts = True, []
    for lam in (0.5, 0.25):
        idx = report_for(V, lam).C.index
        good = (
            idx is not None and idx.is_trivial and idx.reverse is not None
            and idx.reverse.is_trivial and idx.duality_ok is True
        )
        ok &= good
        parts.append(f"lambda={lam}: forward {idx.homological if idx else '?'}, "
                     f"reverse {idx.reverse.homological if idx and idx.reverse else '?'}")
    assert record(2, "separator index trivial in both directions", ok, "; ".join(parts))


def test_circle_signature(spiral512, record):
    V, _, _ = spiral512
    ok, parts = True, []
    for lam in (0.5, 0.25):
        sig = report_for(V, lam).signature
        good = (
            same(sig.homology, CIRCLE)
            and sig.bounded_components == 1 and sig.unbounded_components == 1
            and sig.separates and sig.attracts_outside_repels_inside
            and sig.samples_outside >= 100 and sig.samples_inside >= 100
            and sig.entry_time_outside is not None and sig.entry_time_inside is not None
        )
        ok &= good
        parts.append(
            f"lambda={lam}: {sig.homology}, {sig.samples_outside}+{sig.samples_inside} samples, "
            f"entry times {sig.entry_time_outside}/{sig.entry_time_inside}"
        )
    assert record(3, "circle signature and sampled attraction", ok, "; ".join(parts))


def test_global_attractor_index(record):
    g = CubicalGrid.cube(6.0, 2, 128)
    A = find_global_attractor(builtin_spiral(), 0.0, g)
    spiral_ok = same(A.index.cohomological, Z)
    f = builtin_lorenz()
    t0 = time.perf_counter()
    grid, regions = lorenz_setup(f, [1.0], 64)
    L = find_global_attractor(f, 1.0, grid, region=regions(1.0), settings=Settings(tau=0.1))
    elapsed = time.perf_counter() - t0
    lorenz_ok = same(L.index.cohomological, Z) and elapsed < 300.0
    detail = f"spiral {A.index.cohomological}; lorenz r=28 {L.index.cohomological} in {elapsed:.0f}s"
    assert record(4, "global attractor index CH0=Z", spiral_ok and lorenz_ok, detail)


def test_lorenz_uniformly_dissipative(lorenz64, record):
    V, _, elapsed = lorenz64
    ranks = {str(r.K.index.homological) for r in V.reports if r.K is not None and r.K.index is not None}
    ok = (
        V.uniform is not None and V.uniform.uniform and V.uniform.box is not None
        and not V.continuation["broken"] and len(V.reports) == 9
        and all(r.K is not None for r in V.reports) and ranks == {"H0=Z"}
    )
    detail = f"box {V.uniform.box is not None}, continuation indices {sorted(ranks)}, {elapsed:.0f}s"
    assert record(5, "lorenz r in [20,28] uniformly dissipative", ok, detail)


def test_polar_family_fails_uniformity(record):
    g = CubicalGrid.cube(20.0, 2, 256)
    V = separator_pipeline(builtin_spiral(), [0.0, 1 / 16, 1 / 8, 1 / 4], g, L_list=[3.0, 6.0, 9.0])
    modes = []
    if not V.uniform.uniform:
        modes.append("no common trapping box")
    if V.global_continuation.broken:
        modes.append(f"global continuation breaks at lambda={V.global_continuation.lam:g}")
    ok = V.polar and bool(modes) and not (V.uniform.uniform and V.polar)
    detail = f"polar={V.polar}, lambda_hat0={V.polarity.lam_hat0}; " + "; ".join(modes)
    assert record(6, "polar sweep exhibits a failure mode", ok, detail)


@pytest.mark.parametrize(
    "name,run",
    [
        ("invariant part vs brute force", lambda: suite_invariant(1000, seed=11)),
        ("components vs flood fill", lambda: suite_components(1000, seed=12)),
        ("hand-reduced homology", suite_hand_homology),
    ],
)
def test_oracle_equivalence(name, run, record):
    t0 = time.perf_counter()
    ok = run()
    elapsed = time.perf_counter() - t0
    assert record(7, f"oracle suite: {name}", ok and elapsed < 30.0, f"{elapsed:.1f}s")


def test_exact_sequence(spiral512, record):
    V, _, _ = spiral512
    rep = report_for(V, 0.5)
    good = rep.exact is not None and rep.exact.ok
    triple = (rep.K.index.cohomological, rep.A.index.cohomological, rep.C.index.cohomological)
    corrupted = check_exact_sequence(Z, GradedGroup((2, 0, 0)), GradedGroup((0, 0, 0)))
    ok = good and check_exact_sequence(*triple).ok and not corrupted.ok
    detail = f"({', '.join(str(t) for t in triple)}) ok={good}; corrupted fails at degree {corrupted.failing_degree}"
    assert record(8, "attractor-repeller exact sequence", ok, detail)


DETERMINISM_CONFIG = """
    [system]
    name = spiral
    [parameters]
    lambdas = 0.0, 0.25, 0.5
    [grid]
    lo = -6
    hi = 6
    divisions = 64
    [analysis]
    thresholds = 3
    signature_samples = 16
    [output]
    formats = json
"""


def test_sweep_is_deterministic(tmp_path, record):
    p = tmp_path / "run.ini"
    p.write_text(textwrap.dedent(DETERMINISM_CONFIG))
    outs = []
    for threads in (1, 4, 1):
        out = tmp_path / f"t{threads}_{len(outs)}"
        assert cmd_sweep(load_config(p, out), threads=threads, no_svg=True, quiet=True) == 0
        outs.append((out / "verdict.json").read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    assert record(9, "sweep verdict byte-identical across thread counts", ok, f"{len(outs[0])} bytes")
