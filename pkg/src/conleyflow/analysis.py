"""Family-level verdicts built on the combinatorial machinery.

Every verdict here is finite: parameter quantifiers run over the user's
grid of parameter values, "bounded" means inside the analysis box, and
"near infinity" means past the escape radius.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .cubegrid import (
    CellSet,
    CubicalGrid,
    GridMismatch,
    MultivaluedMap,
    NotIsolated,
    components,
    diameter,
    invariant_part,
    is_isolating,
    outer_approximation,
)
from .dynamics import (
    EscapePolicy,
    ParametrizedFlow,
    Trajectory,
    flow_map,
    integrate,
    sparrow_box,
    sparrow_cell_min,
    sparrow_trapping_level,
)
from .homology import (
    ConleyIndex,
    ExactSequenceVerdict,
    GradedGroup,
    check_exact_sequence,
    conley_index,
    homology,
)

__all__ = [
    "NotTrapping",
    "ContinuationBroken",
    "Settings",
    "MapCache",
    "InvariantSetRecord",
    "DissipativityVerdict",
    "GlobalContinuation",
    "CoercivitySignature",
    "PolarityWitness",
    "PolarityVerdict",
    "FamilyVerdict",
    "find_global_attractor",
    "seed_attractor",
    "uniform_dissipativity",
    "track_continuation",
    "global_continuation",
    "extract_separator",
    "coercivity_signature",
    "polarity_test",
    "separator_pipeline",
    "lorenz_setup",
    "ball_region",
    "complement_sides",
]

ROLES = (
    "global_attractor_candidate",
    "continued_attractor",
    "separating_set",
    "ambient_attractor",
)

RegionFn = Callable[[float], Optional[CellSet]]


class NotTrapping(RuntimeError):
    """Some cells of the region map outside it, so it is not trapping."""

    def __init__(self, lam: float, cells: CellSet):
        self.lam = lam
        self.cells = cells
        shown = ", ".join(str(int(c)) for c in cells.indices[:8])
        more = "" if len(cells) <= 8 else f", ... ({len(cells)} total)"
        super().__init__(f"lambda={lam:g}: region is not trapping; offending cells {shown}{more}")


class ContinuationBroken(RuntimeError):
    def __init__(self, lam: float, reason: str, records: Sequence["InvariantSetRecord"] = ()):
        self.lam = lam
        self.reason = reason
        self.records = tuple(records)
        super().__init__(f"continuation broken at lambda={lam:g}: {reason}")


@dataclass(frozen=True)
class Settings:
    """Numerical knobs shared by every analysis step.

    ``ladder`` lists flow times for sharpening separators: the map is
    recomputed with each time on the current candidate set and the invariant
    part taken again. With ``ladder_scaling="inverse_lambda"`` the times are
    divided by the parameter value, matching flows that slow down like 1/lam.
    """

    tau: float = 0.5
    samples_per_axis: int = 2
    bloat: int = 1
    tol: float = 1e-8
    collar: int = 2
    index_width: int = 2
    ladder: tuple[float, ...] = ()
    ladder_scaling: str = "none"
    ladder_samples: int = 3
    ladder_bloat: int = 0
    ladder_tol: float = 1e-6
    signature_samples: int = 128
    signature_dt: float = 0.5
    signature_horizon: float = 4000.0
    signature_shell: int = 16
    witness_horizon: float = 50.0
    witness_candidates: int = 8
    refine_limit: int = 1 << 20

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.samples_per_axis < 2 or self.ladder_samples < 2:
            raise ValueError("samples_per_axis must be >= 2")
        if self.bloat < 0 or self.ladder_bloat < 0:
            raise ValueError("bloat must be nonnegative")
        if self.collar < 1 or self.index_width < 1:
            raise ValueError("collar and index_width must be >= 1")
        if self.ladder_scaling not in ("none", "inverse_lambda"):
            raise ValueError("ladder_scaling must be 'none' or 'inverse_lambda'")
        if any(not t > 0 for t in self.ladder):
            raise ValueError("ladder times must be positive")
        if self.signature_shell < 1:
            raise ValueError("signature_shell must be >= 1")
        if self.signature_samples < 1:
            raise ValueError("signature_samples must be >= 1")
        if not (self.signature_dt > 0 and self.signature_horizon > 0 and self.witness_horizon > 0):
            raise ValueError("time steps and horizons must be positive")

    def ladder_times(self, lam: float) -> list[float]:
        if self.ladder_scaling == "inverse_lambda":
            if lam <= 0:
                return []
            return [t / lam for t in self.ladder]
        return list(self.ladder)

    def to_json(self) -> dict:
        out = asdict(self)
        out["ladder"] = list(self.ladder)
        return out


class MapCache:
    """Memoized outer approximations for one flow on one grid.

    Safe to share between threads; a map requested twice concurrently may be
    computed twice, but both copies are identical.
    """

    def __init__(self, flow: ParametrizedFlow, grid: CubicalGrid, policy: Optional[EscapePolicy] = None):
        self.flow = flow
        self.grid = grid
        self.policy = policy if policy is not None else EscapePolicy.for_box(grid.lo, grid.hi)
        self._reverse = flow.reversed()
        self._maps: dict = {}
        self._lock = threading.Lock()

    def get(
        self,
        lam: float,
        tau: float,
        samples: int,
        bloat: int,
        tol: float,
        domain: Optional[CellSet] = None,
        reverse: bool = False,
        grid: Optional[CubicalGrid] = None,
    ) -> MultivaluedMap:
        grid = self.grid if grid is None else grid
        key = (
            float(lam), float(tau), samples, bloat, tol, reverse, grid,
            None if domain is None else domain.digest(),
        )
        with self._lock:
            hit = self._maps.get(key)
        if hit is not None:
            return hit
        fmap = outer_approximation(
            self._reverse if reverse else self.flow,
            lam,
            grid,
            tau,
            samples_per_axis=samples,
            bloat=bloat,
            policy=self.policy,
            tol=tol,
            domain=domain,
        )
        with self._lock:
            self._maps.setdefault(key, fmap)
        return fmap

    def coarse(self, lam: float, settings: "Settings", reverse: bool = False,
               domain: Optional[CellSet] = None, grid: Optional[CubicalGrid] = None) -> MultivaluedMap:
        return self.get(lam, settings.tau, settings.samples_per_axis, settings.bloat,
                        settings.tol, domain=domain, reverse=reverse, grid=grid)


def _cache(flow, grid, policy, cache) -> MapCache:
    if cache is None:
        return MapCache(flow, grid, policy)
    if cache.flow is not flow or cache.grid != grid:
        raise ValueError("cache belongs to a different flow or grid")
    return cache


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class InvariantSetRecord:
    lam: float
    role: str
    cells: CellSet
    index: Optional[ConleyIndex] = None
    diameter: Optional[float] = None
    basin: Optional[CellSet] = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.cells.is_empty and self.role != "separating_set":
            raise ValueError(f"{self.role} must not be empty")
        if self.basin is not None and not self.cells.issubset(self.basin):
            raise ValueError("basin must contain the invariant set")

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "role": self.role,
            "cells": len(self.cells),
            "digest": self.cells.digest(),
            "index": None if self.index is None else self.index.to_json(),
            "diameter": self.diameter,
            "basin_cells": None if self.basin is None else len(self.basin),
            "notes": list(self.notes),
        }


def _region(regions: Optional[RegionFn], lam: float, grid: CubicalGrid) -> CellSet:
    reg = regions(lam) if regions is not None else None
    if reg is None:
        return CellSet.full(grid)
    if reg.grid != grid:
        raise GridMismatch("region lives on a different grid")
    return reg


def ball_region(grid: CubicalGrid, radius: Optional[float] = None) -> CellSet:
    """Cells meeting the closed ball of ``radius`` about the origin.

    The radius defaults to the largest ball inside the box. For rotating
    flows a square box can fail to trap while the round region does.
    """
    lo, hi = np.array(grid.lo), np.array(grid.hi)
    if radius is None:
        radius = float(np.min(np.minimum(-lo, hi)))
    if not radius > 0:
        raise ValueError("the ball needs a positive radius inside the box")
    m = grid.multi_index(np.arange(grid.ncells))
    clo = lo + m * grid.cell_size
    nearest = np.clip(0.0, clo, clo + grid.cell_size)
    return CellSet(grid, np.linalg.norm(nearest, axis=1) <= radius)


def _check_lams(flow: ParametrizedFlow, lams: Sequence[float]) -> list[float]:
    lo, hi = flow.param_range
    out = sorted({float(x) for x in lams})
    bad = [x for x in out if not lo <= x <= hi]
    if bad:
        raise ValueError(f"parameter values {bad} outside {flow.param_range}")
    return out


# ---------------------------------------------------------------- dissipativity


def find_global_attractor(
    flow: ParametrizedFlow,
    lam: float,
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    region: Optional[CellSet] = None,
    settings: Optional[Settings] = None,
    cache: Optional[MapCache] = None,
) -> InvariantSetRecord:
    """Invariant part of a trapping region, with its Conley index.

    The region defaults to the whole box. It is trapping when no cell of it
    escapes and every image stays inside; otherwise NotTrapping lists the
    offending cells.
    """
    settings = settings or Settings()
    cache = _cache(flow, grid, policy, cache)
    region = CellSet.full(grid) if region is None else region
    fmap = cache.coarse(lam, settings)
    bad = _leaving(fmap, region)
    if bad:
        raise NotTrapping(lam, bad)
    A = invariant_part(fmap, region)
    index = None
    notes: list[str] = []
    try:
        index = conley_index(fmap, None, A, region=region)
    except NotIsolated as exc:
        notes.append(f"index not computed: {exc}")
    return InvariantSetRecord(lam, "global_attractor_candidate", A, index, basin=region, notes=tuple(notes))


def _leaving(fmap: MultivaluedMap, region: CellSet) -> CellSet:
    idx = region.indices
    sub = fmap.matrix[idx]
    out = np.asarray(sub @ (~region.mask).astype(np.int64)).ravel() > 0
    out |= fmap.escaping[idx] | fmap.failed[idx]
    mask = np.zeros(fmap.grid.ncells, dtype=bool)
    mask[idx[out]] = True
    return CellSet(fmap.grid, mask)


def seed_attractor(
    flow: ParametrizedFlow,
    lam: float,
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    region: Optional[CellSet] = None,
    settings: Optional[Settings] = None,
    cache: Optional[MapCache] = None,
) -> InvariantSetRecord:
    """Global attractor at one parameter value, to start a continuation.

    Uses find_global_attractor when the region is trapping. Otherwise falls
    back to the invariant part of the region, provided it keeps away from the
    region's boundary layer, and records that the box was not trapping.
    """
    settings = settings or Settings()
    cache = _cache(flow, grid, policy, cache)
    try:
        return find_global_attractor(flow, lam, grid, policy, region, settings, cache)
    except NotTrapping as exc:
        note = f"region not trapping ({len(exc.cells)} cells leave); using its invariant part"
    region = CellSet.full(grid) if region is None else region
    fmap = cache.coarse(lam, settings)
    ok, A = is_isolating(fmap, region)
    if A.is_empty or not ok:
        raise NotIsolated(f"lambda={lam:g}: no isolated invariant set inside the region")
    index = conley_index(fmap, None, A, width=settings.collar)
    return InvariantSetRecord(lam, "global_attractor_candidate", A, index, notes=(note,))


@dataclass(frozen=True)
class DissipativityVerdict:
    uniform: bool
    box: Optional[tuple[tuple[float, ...], tuple[float, ...]]]
    per_lambda: tuple[tuple[float, bool, int], ...]
    records: tuple[InvariantSetRecord, ...]

    def __bool__(self) -> bool:
        return self.uniform

    def to_json(self) -> dict:
        return {
            "value": self.uniform,
            "witness_box": None if self.box is None else {"lo": list(self.box[0]), "hi": list(self.box[1])},
            "per_lambda": [
                {"lambda": lam, "trapping": ok, "offending_cells": n} for lam, ok, n in self.per_lambda
            ],
        }


def uniform_dissipativity(
    flow: ParametrizedFlow,
    lam_grid: Sequence[float],
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    regions: Optional[RegionFn] = None,
    settings: Optional[Settings] = None,
    cache: Optional[MapCache] = None,
) -> DissipativityVerdict:
    """Is one box trapping for every parameter value in the grid?

    ``regions`` optionally picks, per parameter value, a trapping region
    inside the box (for Lorenz, a sublevel set of the Lyapunov function);
    the witness is still the single box holding all of them.
    """
    lams = _check_lams(flow, lam_grid)
    settings = settings or Settings()
    cache = _cache(flow, grid, policy, cache)
    per = []
    recs = []
    for lam in lams:
        try:
            rec = find_global_attractor(flow, lam, grid, policy, _region(regions, lam, grid), settings, cache)
        except NotTrapping as exc:
            per.append((lam, False, len(exc.cells)))
        else:
            per.append((lam, True, 0))
            recs.append(rec)
    uniform = bool(lams) and all(ok for _, ok, _ in per)
    box = (tuple(grid.lo), tuple(grid.hi)) if uniform else None
    return DissipativityVerdict(uniform, box, tuple(per), tuple(recs))


# ---------------------------------------------------------------- continuation


def _same_index(a: Optional[ConleyIndex], b: Optional[ConleyIndex]) -> bool:
    if a is None or b is None:
        return False
    top = max(a.homological.top, b.homological.top)
    return a.homological.padded(top) == b.homological.padded(top)


def _continue_one(
    cache: MapCache, settings: Settings, lam: float, N: CellSet
) -> tuple[CellSet, ConleyIndex]:
    fmap = cache.coarse(lam, settings, grid=N.grid)
    ok, K = is_isolating(fmap, N)
    if not ok:
        raise NotIsolated("previous neighborhood no longer isolates")
    if K.is_empty:
        raise NotIsolated("invariant part vanished")
    return K, conley_index(fmap, None, K, region=N)


def track_continuation(
    flow: ParametrizedFlow,
    lam_grid: Sequence[float],
    seed: InvariantSetRecord,
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    settings: Optional[Settings] = None,
    cache: Optional[MapCache] = None,
) -> list[InvariantSetRecord]:
    """Follow an isolated invariant set through the parameter grid.

    Starting from the seed, each step reuses the previous collar as the
    isolating neighborhood, takes its invariant part, checks that the
    Conley index is unchanged and builds a fresh collar. When isolation
    fails, one pass on a twice finer grid is tried before giving up.
    Records come back sorted by parameter value.
    """
    settings = settings or Settings()
    cache = _cache(flow, grid, policy, cache)
    lams = _check_lams(flow, list(lam_grid) + [seed.lam])
    if seed.cells.grid != grid:
        raise GridMismatch("seed lives on a different grid")
    seed_index = seed.index
    if seed_index is None:
        fmap = cache.coarse(seed.lam, settings)
        seed_index = conley_index(fmap, None, seed.cells, width=settings.collar)
    start = replace(seed, role="continued_attractor", index=seed_index, basin=None)
    out = [start]
    up = [x for x in lams if x > seed.lam]
    down = [x for x in reversed(lams) if x < seed.lam]
    for branch in (up, down):
        N = seed.cells.dilate(settings.collar)
        for lam in branch:
            notes: tuple[str, ...] = ()
            try:
                K, idx = _continue_one(cache, settings, lam, N)
            except NotIsolated as exc:
                fine = N.grid.refine(2)
                if fine.ncells > settings.refine_limit:
                    raise ContinuationBroken(lam, str(exc), sorted(out, key=lambda r: r.lam)) from exc
                try:
                    K, idx = _continue_one(cache, settings, lam, N.refine(2))
                except NotIsolated as exc2:
                    raise ContinuationBroken(
                        lam, f"{exc}; refined grid: {exc2}", sorted(out, key=lambda r: r.lam)
                    ) from exc2
                notes = ("isolated after 2x refinement",)
            if not _same_index(idx, seed_index):
                raise ContinuationBroken(
                    lam,
                    f"Conley index changed from {seed_index.homological} to {idx.homological}",
                    sorted(out, key=lambda r: r.lam),
                )
            out.append(InvariantSetRecord(lam, "continued_attractor", K, idx, notes=notes))
            N = K.dilate(settings.collar)
    return sorted(out, key=lambda r: r.lam)


@dataclass(frozen=True)
class GlobalContinuation:
    broken: bool
    lam: Optional[float]
    reason: str
    records: tuple[InvariantSetRecord, ...] = ()

    def to_json(self) -> dict:
        return {"broken": self.broken, "lambda": self.lam, "reason": self.reason}


def global_continuation(
    flow: ParametrizedFlow,
    lam_grid: Sequence[float],
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    regions: Optional[RegionFn] = None,
    settings: Optional[Settings] = None,
    cache: Optional[MapCache] = None,
    continued: Optional[Sequence[InvariantSetRecord]] = None,
) -> GlobalContinuation:
    """Does the continuation of the global attractor stay global?

    The global attractor at the smallest parameter value is continued along
    the grid; at every step it is compared with the maximal invariant set of
    the region. The continuation breaks at the first value where the two
    differ, or where isolation is lost.
    """
    settings = settings or Settings()
    cache = _cache(flow, grid, policy, cache)
    lams = _check_lams(flow, lam_grid)
    if not lams:
        return GlobalContinuation(False, None, "empty parameter grid")
    if continued is None:
        seed = seed_attractor(flow, lams[0], grid, policy, _region(regions, lams[0], grid), settings, cache)
        try:
            continued = track_continuation(flow, lams, seed, grid, policy, settings, cache)
        except ContinuationBroken as exc:
            return GlobalContinuation(True, exc.lam, exc.reason, exc.records)
    by_lam = {r.lam: r for r in continued}
    for lam in lams:
        rec = by_lam.get(lam)
        if rec is None:
            return GlobalContinuation(True, lam, "continuation did not reach this value", tuple(continued))
        region = _region(regions, lam, grid)
        fmap = cache.coarse(lam, settings)
        A = invariant_part(fmap, region)
        K = rec.cells if rec.cells.grid == grid else None
        if K is None or K != A:
            reason = (
                f"continued attractor has {len(rec.cells)} cells but the region's "
                f"maximal invariant set has {len(A)}"
            )
            return GlobalContinuation(True, lam, reason, tuple(continued))
    return GlobalContinuation(False, None, "continued attractor stays global", tuple(continued))


# ---------------------------------------------------------------- separators


def complement_sides(C: CellSet, within: Optional[CellSet] = None) -> tuple[list[CellSet], list[CellSet]]:
    """Components of the complement of C, split into bounded and unbounded.

    A component is unbounded when it reaches the boundary layer of the box
    (or of ``within``): at box scale that is the only way to tell.
    """
    grid = C.grid
    ambient = CellSet.full(grid) if within is None else within
    edge = CellSet.full(grid).boundary_layer() | ambient.boundary_layer()
    bounded, unbounded = [], []
    for comp in components(ambient - C):
        (bounded if comp.isdisjoint(edge) else unbounded).append(comp)
    return bounded, unbounded


def _filled(C: CellSet, ambient: CellSet) -> CellSet:
    bounded, _ = complement_sides(C, ambient)
    out = C
    for comp in bounded:
        out = out | comp
    return out


def _closed_map(cache: "MapCache", lam: float, tau: float, stage: dict, domain: CellSet,
                ambient: CellSet, reverse: bool = False, rounds: int = 8) -> MultivaluedMap:
    """Map on ``domain`` grown until the images of computed cells stay inside it."""
    for _ in range(rounds):
        fmap = cache.get(lam, tau, domain=domain, reverse=reverse, **stage)
        grow = (fmap.image_of(domain) & ambient) - domain
        if grow.is_empty:
            break
        domain = domain | grow
    return fmap


def extract_separator(
    flow: ParametrizedFlow,
    lam: float,
    K: InvariantSetRecord,
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    settings: Optional[Settings] = None,
    cache: Optional[MapCache] = None,
    region: Optional[CellSet] = None,
) -> InvariantSetRecord:
    """Largest invariant set of the box (or region) away from K's collar.

    An empty result means nothing bounded and invariant lives outside K at
    this resolution. With a ladder configured, the set is sharpened by
    recomputing the map with longer flow times on the shrinking candidate;
    a stage is kept only if it leaves the set nonempty and does not change
    the number of complement components. The Conley index is computed with
    the first ladder map (or the base map without a ladder), forward and
    reversed.
    """
    settings = settings or Settings()
    cache = _cache(flow, grid, policy, cache)
    if K.cells.grid != grid:
        raise GridMismatch("K lives on a different grid")
    ambient = CellSet.full(grid) if region is None else region
    base = cache.coarse(lam, settings)
    C = invariant_part(base, ambient - K.cells.dilate(settings.collar))
    notes = [f"collar={settings.collar}"]
    if C.is_empty:
        return InvariantSetRecord(lam, "separating_set", C, notes=tuple(notes))

    times = settings.ladder_times(lam)
    index_map, index_set = base, C
    if times:
        stage = dict(samples=settings.ladder_samples, bloat=settings.ladder_bloat, tol=settings.ladder_tol)
        count = len(components(ambient - C))
        for i, t in enumerate(times):
            if i == 0:
                fmap = _closed_map(cache, lam, t, stage, _filled(C, ambient), ambient)
            else:
                fmap = cache.get(lam, t, domain=C, **stage)
            nxt = invariant_part(fmap, C)
            if nxt.is_empty or len(components(ambient - nxt)) != count:
                notes.append(f"ladder stopped before tau={t:g}")
                break
            if i == 0:
                index_map, index_set = fmap, nxt
            C = nxt
            notes.append(f"ladder tau={t:g}: {len(C)} cells")

    index = None
    w = settings.index_width
    try:
        stage = dict(samples=index_map.meta["samples_per_axis"], bloat=index_map.bloat, tol=index_map.meta["tol"])
        rev = _closed_map(cache, lam, index_map.tau, stage, index_set.dilate(w + 2) & ambient, ambient, reverse=True)
        index = conley_index(index_map, rev, index_set, width=w)
    except NotIsolated as exc:
        notes.append(f"index not computed: {exc}")
    return InvariantSetRecord(lam, "separating_set", C, index, diameter(C), notes=tuple(notes))


# ---------------------------------------------------------------- coercivity


@dataclass(frozen=True)
class CoercivitySignature:
    separates: bool
    sphere_homology: bool
    attracts_outside_repels_inside: bool
    diameter: float
    homology: GradedGroup
    bounded_components: int
    unbounded_components: int
    entry_time_outside: Optional[float]
    entry_time_inside: Optional[float]
    samples_outside: int
    samples_inside: int
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.separates and self.sphere_homology and self.attracts_outside_repels_inside

    def to_json(self) -> dict:
        return {
            "separates": self.separates,
            "sphere_homology": self.sphere_homology,
            "attracts_outside_repels_inside": self.attracts_outside_repels_inside,
            "diameter": self.diameter,
            "homology": self.homology.to_json(),
            "bounded_components": self.bounded_components,
            "unbounded_components": self.unbounded_components,
            "entry_time_outside": self.entry_time_outside,
            "entry_time_inside": self.entry_time_inside,
            "samples_outside": self.samples_outside,
            "samples_inside": self.samples_inside,
            "notes": list(self.notes),
        }


def _spread(S: CellSet, count: int) -> np.ndarray:
    idx = S.indices
    if idx.size <= count:
        return idx
    pick = np.unique(np.round(np.linspace(0, idx.size - 1, count)).astype(np.int64))
    return idx[pick]


def _entry_time(
    flow: ParametrizedFlow,
    lam: float,
    points: np.ndarray,
    target: CellSet,
    dt: float,
    horizon: float,
    tol: float,
    radius: float,
) -> tuple[Optional[float], str]:
    """Common time after which every sample sits in ``target`` for good.

    Samples are advanced in steps of ``dt``. Once all of them are in the
    target, the run continues for as long again to confirm they stay.
    Escaping or leaving the box is a failure.
    """
    grid = target.grid
    x = np.array(points, dtype=float)
    entered = np.full(x.shape[0], np.nan)
    t = 0.0
    settle = None
    while t < horizon:
        x, esc, bad = flow_map(flow, lam, x, dt, tol=tol, escape_radius=radius)
        t += dt
        if np.any(esc | bad):
            return None, f"{int(np.sum(esc | bad))} samples escaped or failed by t={t:g}"
        cell = grid.cell_of_points(x)
        if np.any(cell < 0):
            return None, f"{int(np.sum(cell < 0))} samples left the box by t={t:g}"
        inside = target.mask[cell]
        entered[~inside] = np.nan
        entered[inside & np.isnan(entered)] = t
        if np.all(inside):
            last = float(np.max(entered))
            if settle is None or settle < last:
                settle = 2 * last
            if t >= settle:
                return last, "ok"
    return None, f"not all samples settled within t={horizon:g}"


def coercivity_signature(
    flow: ParametrizedFlow,
    C: InvariantSetRecord,
    K: InvariantSetRecord,
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    settings: Optional[Settings] = None,
    region: Optional[CellSet] = None,
) -> CoercivitySignature:
    """Check that C looks like a sphere separating K from infinity.

    i)   the complement has one bounded component, holding K, and one
         unbounded component;
    ii)  C has the homology of a sphere of dimension n-1;
    iii) samples of the unbounded side flow into a collar of C and stay,
         samples of the bounded side (off K) flow to K without meeting the
         collar and flow into the collar backwards, all within a common
         time reported per side;
    iv)  the diameter, compared across a sweep by the caller.
    """
    if C.cells.is_empty:
        raise ValueError("the separator is empty")
    settings = settings or Settings()
    policy = policy or EscapePolicy.for_box(grid.lo, grid.hi)
    lam = C.lam
    n = grid.dim
    cells = C.cells
    notes: list[str] = []

    bounded, unbounded = complement_sides(cells, region)
    separates = (
        len(bounded) == 1
        and len(unbounded) == 1
        and K.cells.issubset(bounded[0])
    )
    if not separates:
        notes.append(f"complement: {len(bounded)} bounded, {len(unbounded)} unbounded components")

    h = homology(cells)
    top = max(h.top, n - 1)
    sphere = h.padded(top) == GradedGroup.sphere(n - 1, top)

    collar = cells.dilate(settings.collar)
    k_collar = K.cells.dilate(settings.collar)
    t_out = t_in = None
    n_out = n_in = 0
    dynamic = False
    if unbounded and bounded:
        # far out the box itself need not be forward invariant, so the
        # outside samples come from a shell around C
        shell = cells.dilate(settings.collar + settings.signature_shell)
        outside = CellSet.empty(grid)
        for comp in unbounded:
            outside = outside | (comp & shell)
        outside = outside - collar
        inside = bounded[0] - collar - k_collar
        pts_out = grid.centers(_spread(outside, settings.signature_samples))
        pts_in = grid.centers(_spread(inside, settings.signature_samples))
        n_out, n_in = len(pts_out), len(pts_in)
        args = (settings.signature_dt, settings.signature_horizon, settings.tol, policy.radius)
        ok = n_out > 0 and n_in > 0
        if ok:
            t_out, why = _entry_time(flow, lam, pts_out, collar, *args)
            ok = t_out is not None
            if not ok:
                notes.append(f"outside forward: {why}")
        if ok:
            t_fwd, why = _entry_time(flow, lam, pts_in, k_collar, *args)
            ok = t_fwd is not None
            if not ok:
                notes.append(f"inside forward: {why}")
        if ok:
            t_in, why = _entry_time(flow.reversed(), lam, pts_in, collar, *args)
            ok = t_in is not None
            if not ok:
                notes.append(f"inside backward: {why}")
        dynamic = ok
    return CoercivitySignature(
        separates,
        sphere,
        dynamic,
        diameter(cells),
        h,
        len(bounded),
        len(unbounded),
        t_out,
        t_in,
        n_out,
        n_in,
        tuple(notes),
    )


# ---------------------------------------------------------------- polarity


@dataclass(frozen=True, eq=False)
class PolarityWitness:
    """A bounded trajectory whose backward tail stays beyond norm L."""

    lam: float
    L: float
    trajectory: Trajectory
    t_lam: float

    def verify(self) -> bool:
        """Replay the defining property from the stored samples."""
        tr = self.trajectory
        norms = tr.norms()
        tail = tr.times < self.t_lam
        return bool(
            self.t_lam < 0
            and np.any(tail)
            and np.all(norms[tail] > self.L)
            and np.all(np.isfinite(tr.states))
            and not tr.escaped
        )

    def to_json(self) -> dict:
        tr = self.trajectory
        norms = tr.norms()
        back = tr.times < 0
        return {
            "lambda": self.lam,
            "L": self.L,
            "t_lambda": self.t_lam,
            "start": [float(v) for v in tr.states[int(np.argmin(np.abs(tr.times)))]],
            "samples": int(tr.times.size),
            "max_norm": float(norms.max()),
            "min_backward_norm": float(norms[back].min()) if np.any(back) else None,
        }


def _witness(
    flow: ParametrizedFlow, lam: float, L: float, x0: np.ndarray, grid: CubicalGrid,
    policy: EscapePolicy, settings: Settings,
) -> Optional[PolarityWitness]:
    H = settings.witness_horizon
    lo, hi = np.array(grid.lo), np.array(grid.hi)
    try:
        back = integrate(flow, lam, x0, -H, policy, tol=settings.tol)
        fwd = integrate(flow, lam, x0, H, policy, tol=settings.tol)
    except (ArithmeticError, RuntimeError):
        return None
    if back.escaped or fwd.escaped:
        return None
    times = np.concatenate([back.times[::-1], fwd.times[1:]])
    states = np.concatenate([back.states[::-1], fwd.states[1:]])
    if np.any(states < lo) or np.any(states > hi):
        return None
    tr = Trajectory(times, states)
    norms = tr.norms()
    # earliest backward sample inside the L-ball; everything before it is outside
    low = np.flatnonzero((norms <= L) & (times <= 0))
    if low.size:
        t_lam = float(times[low[0]])
    else:
        t_lam = float(back.times[1]) if back.times.size > 1 else 0.0
    w = PolarityWitness(lam, L, tr, t_lam)
    return w if w.verify() else None


@dataclass(frozen=True)
class PolarityVerdict:
    polar: bool
    lam_hat0: Optional[float]
    thresholds: tuple[tuple[float, Optional[float]], ...]
    table: tuple[tuple[float, float, bool], ...]
    witnesses: tuple[PolarityWitness, ...]

    def __bool__(self) -> bool:
        return self.polar

    def has_witness(self, lam: float) -> bool:
        return any(found for x, _, found in self.table if x == lam)

    def to_json(self) -> dict:
        return {
            "value": self.polar,
            "lambda_hat0": self.lam_hat0,
            "thresholds": [{"L": L, "lambda_hat": lh} for L, lh in self.thresholds],
            "table": [{"lambda": lam, "L": L, "witness": f} for lam, L, f in self.table],
            "witnesses": [w.to_json() for w in self.witnesses],
        }


def _continued_records(
    flow, lams, grid, policy, regions, settings, cache
) -> tuple[list[InvariantSetRecord], Optional[ContinuationBroken]]:
    lam0 = flow.param_range[0]
    try:
        seed = seed_attractor(flow, lam0, grid, policy, _region(regions, lam0, grid), settings, cache)
    except NotIsolated as exc:
        return [], ContinuationBroken(lam0, f"no seed attractor: {exc}")
    try:
        return track_continuation(flow, lams, seed, grid, policy, settings, cache), None
    except ContinuationBroken as exc:
        return list(exc.records), exc


def polarity_test(
    flow: ParametrizedFlow,
    lam_grid: Sequence[float],
    L_list: Sequence[float],
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    settings: Optional[Settings] = None,
    cache: Optional[MapCache] = None,
    continued: Optional[Sequence[InvariantSetRecord]] = None,
    regions: Optional[RegionFn] = None,
) -> PolarityVerdict:
    """Search for arbitrarily large bounded trajectories as lam decreases.

    For each positive lam, the invariant part of the box outside K's collar
    is scanned for cells beyond norm L (innermost first); a cell yields a
    witness when its orbit stays in the box both ways and its backward tail
    stays beyond L. For a threshold L, lam_hat(L) is the largest grid value
    such that every positive grid value up to it has a witness. The family
    is polar when every L has a lam_hat. lam_hat0 is the largest value up
    to which the invariant set outside K is nonempty.
    """
    settings = settings or Settings()
    cache = _cache(flow, grid, policy, cache)
    Ls = sorted(float(L) for L in L_list)
    if Ls and not grid.circumradius > Ls[-1]:
        raise ValueError("the box circumradius must exceed every threshold L")
    lams = [x for x in _check_lams(flow, lam_grid) if x > 0]
    if continued is None:
        continued, _ = _continued_records(flow, lams, grid, policy, regions, settings, cache)
    by_lam = {r.lam: r for r in continued}
    table = []
    witnesses = []
    nonempty = {}
    for lam in lams:
        rec = by_lam.get(lam)
        if rec is None or rec.cells.grid != grid:
            nonempty[lam] = False
            table += [(lam, L, False) for L in Ls]
            continue
        ambient = _region(regions, lam, grid)
        fmap = cache.coarse(lam, settings)
        C = invariant_part(fmap, ambient - rec.cells.dilate(settings.collar))
        nonempty[lam] = not C.is_empty
        centers = C.centers()
        norms = np.linalg.norm(centers, axis=1) if len(C) else np.zeros(0)
        order = np.argsort(norms, kind="stable")
        for L in Ls:
            found = None
            cand = order[norms[order] > L + grid.cell_diagonal][: settings.witness_candidates]
            for i in cand:
                found = _witness(flow, lam, L, centers[i], grid, cache.policy, settings)
                if found is not None:
                    break
            table.append((lam, L, found is not None))
            if found is not None:
                witnesses.append(found)

    def prefix(ok: Callable[[float], bool]) -> Optional[float]:
        best = None
        for lam in lams:
            if not ok(lam):
                break
            best = lam
        return best

    found_at = {(lam, L) for lam, L, f in table if f}
    thresholds = tuple((L, prefix(lambda lam, L=L: (lam, L) in found_at)) for L in Ls)
    polar = bool(lams) and bool(Ls) and all(lh is not None for _, lh in thresholds)
    return PolarityVerdict(polar, prefix(lambda lam: nonempty[lam]), thresholds, tuple(table), tuple(witnesses))


# ---------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class LambdaReport:
    lam: float
    K: Optional[InvariantSetRecord] = None
    A: Optional[InvariantSetRecord] = None
    C: Optional[InvariantSetRecord] = None
    signature: Optional[CoercivitySignature] = None
    exact: Optional[ExactSequenceVerdict] = None
    polar: bool = False

    @property
    def index_trivial(self) -> Optional[bool]:
        if self.C is None or self.C.index is None:
            return None
        idx = self.C.index
        return idx.is_trivial and (idx.reverse is None or idx.reverse.is_trivial)

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "K": None if self.K is None else self.K.to_json(),
            "A": None if self.A is None else self.A.to_json(),
            "C": None if self.C is None else self.C.to_json(),
            "index_trivial": self.index_trivial,
            "signature": None if self.signature is None else self.signature.to_json(),
            "exact_sequence": None if self.exact is None else {
                "ok": self.exact.ok,
                "failing_degree": self.exact.failing_degree,
                "images": [list(x) for x in self.exact.labels],
            },
            "polar": self.polar,
        }

    def csv_row(self) -> list:
        sig = self.signature
        C = self.C
        return [
            self.lam,
            None if self.K is None else len(self.K.cells),
            None if C is None else len(C.cells),
            None if C is None else C.diameter,
            self.index_trivial,
            None if sig is None else sig.separates,
            None if sig is None else sig.sphere_homology,
            None if sig is None else sig.passed,
            self.polar,
        ]


CSV_HEADER = ("lambda", "k_cells", "c_cells", "diameter", "index_trivial",
              "separates", "sphere_homology", "coercive", "polar")


@dataclass(frozen=True)
class FamilyVerdict:
    lam_grid: tuple[float, ...]
    reports: tuple[LambdaReport, ...]
    uniform: Optional[DissipativityVerdict]
    continuation: dict
    global_continuation: Optional[GlobalContinuation]
    polarity: Optional[PolarityVerdict]
    applicable: bool
    coercive: bool
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.coercive:
            for rep in self.reports:
                if rep.lam > 0 and (rep.signature is None or not rep.signature.passed):
                    raise ValueError(f"coercive verdict without a valid signature at lambda={rep.lam:g}")

    @property
    def uniform_dissipative(self) -> bool:
        return bool(self.uniform)

    @property
    def polar(self) -> bool:
        return bool(self.polarity)

    def to_json(self) -> dict:
        return {
            "lambda_grid": list(self.lam_grid),
            "uniform_dissipative": None if self.uniform is None else self.uniform.to_json(),
            "continuation": self.continuation,
            "global_continuation": None if self.global_continuation is None else self.global_continuation.to_json(),
            "polar": None if self.polarity is None else self.polarity.to_json(),
            "applicable": self.applicable,
            "coercive": self.coercive,
            "per_lambda": [r.to_json() for r in self.reports],
            "notes": list(self.notes),
        }

    def csv_rows(self) -> list[list]:
        return [r.csv_row() for r in self.reports]


def _ambient_record(cache, settings, lam, region, trapped: dict) -> Optional[InvariantSetRecord]:
    if lam in trapped:
        rec = trapped[lam]
        return replace(rec, role="ambient_attractor")
    fmap = cache.coarse(lam, settings)
    A = invariant_part(fmap, region)
    if A.is_empty:
        return None
    try:
        idx = conley_index(fmap, None, A, width=settings.collar)
    except NotIsolated:
        idx = None
    return InvariantSetRecord(lam, "ambient_attractor", A, idx, notes=("region not trapping",))


def separator_pipeline(
    flow: ParametrizedFlow,
    lam_grid: Sequence[float],
    grid: CubicalGrid,
    policy: Optional[EscapePolicy] = None,
    settings: Optional[Settings] = None,
    L_list: Optional[Sequence[float]] = None,
    regions: Optional[RegionFn] = None,
    threads: int = 1,
    cache: Optional[MapCache] = None,
) -> FamilyVerdict:
    """Full family analysis around the separating set C_lam.

    Runs uniform dissipativity, the continuation of the global attractor
    from the start of the parameter range, the global-continuation check and
    the polarity test. For a polar family, every positive lam then gets its
    separator with Conley index, the rank check of the exact sequence for
    (K, A, C) and the coercivity signature. The family counts as coercive
    when every signature passes and the diameters shrink as lam grows.
    Per-lam work runs on up to ``threads`` threads; the verdict does not
    depend on the count.
    """
    settings = settings or Settings()
    lams = _check_lams(flow, lam_grid)
    if not lams:
        return FamilyVerdict((), (), None, {}, None, None, False, False, ("empty parameter grid",))
    cache = _cache(flow, grid, policy, cache)
    notes: list[str] = []
    uniform = uniform_dissipativity(flow, lams, grid, policy, regions, settings, cache)
    continued, broken = _continued_records(flow, lams, grid, policy, regions, settings, cache)
    continuation = {
        "seed_lambda": flow.param_range[0],
        "broken": broken is not None,
        "lambda": None if broken is None else broken.lam,
        "reason": "index constant along the grid" if broken is None else broken.reason,
    }
    if broken is not None:
        gc = GlobalContinuation(True, broken.lam, broken.reason, tuple(continued))
    else:
        gc = global_continuation(flow, lams, grid, policy, regions, settings, cache, continued)
    if L_list is None:
        inr = float(np.min((np.array(grid.hi) - np.array(grid.lo)) / 2))
        L_list = (inr / 8, inr / 4)
    polarity = polarity_test(flow, lams, L_list, grid, policy, settings, cache, continued, regions)
    if uniform.uniform and polarity.polar:
        notes.append("uniformly dissipative and polar at once: resolution too coarse")

    trapped = {r.lam: r for r in uniform.records}
    by_lam = {r.lam: r for r in continued}

    def one(lam: float) -> LambdaReport:
        region = _region(regions, lam, grid)
        K = by_lam.get(lam)
        if K is not None and K.cells.grid != grid:
            # continued on a refined grid; the separator lives on the base grid
            K = replace(K, cells=K.cells.project(grid), basin=None)
        A = _ambient_record(cache, settings, lam, region, trapped)
        rep = LambdaReport(lam, K, A, polar=polarity.has_witness(lam))
        if not polarity.polar or lam <= 0 or K is None:
            return rep
        C = extract_separator(flow, lam, K, grid, policy, settings, cache, region)
        sig = exact = None
        if not C.cells.is_empty:
            sig = coercivity_signature(flow, C, K, grid, cache.policy, settings, region)
            if C.index is not None and K.index is not None and A is not None and A.index is not None:
                exact = check_exact_sequence(
                    K.index.cohomological, A.index.cohomological, C.index.cohomological
                )
        return replace(rep, C=C, signature=sig, exact=exact)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, lams))
    else:
        reports = [one(lam) for lam in lams]

    applicable = polarity.polar
    coercive = False
    if not applicable:
        notes.append("not polar; separator analysis not applicable")
    else:
        tested = [r for r in reports if r.lam > 0]
        ok = bool(tested) and all(r.signature is not None and r.signature.passed for r in tested)
        diams = [r.C.diameter for r in tested if r.C is not None]
        shrinking = len(diams) == len(tested) and all(a > b for a, b in zip(diams, diams[1:]))
        if ok and not shrinking:
            notes.append("separator diameters do not shrink as lambda grows")
        coercive = ok and shrinking
        for r in tested:
            if r.C is None or r.C.cells.is_empty:
                notes.append(f"lambda={r.lam:g}: no separating set found")
            elif r.index_trivial is False:
                notes.append(f"lambda={r.lam:g}: separator index is not trivial")
            elif r.exact is not None and not r.exact.ok:
                notes.append(f"lambda={r.lam:g}: exact sequence fails in degree {r.exact.failing_degree}")
    return FamilyVerdict(
        tuple(lams), tuple(reports), uniform, continuation, gc, polarity, applicable, coercive, tuple(notes)
    )


# ---------------------------------------------------------------- Lorenz


def lorenz_setup(
    flow: ParametrizedFlow,
    lam_values: Sequence[float],
    divisions: int | Sequence[int] = 64,
    margin: float = 2.5,
    pad: float = 1.1,
) -> tuple[CubicalGrid, RegionFn]:
    """One box for the whole family plus a trapping region per parameter.

    The region for a given r is the set of cells meeting the sublevel set
    {V_r <= c} of Sparrow's function, where c is ``margin`` times the largest
    over the family of the levels past which V_r decreases. The box is the
    bounding box of the padded sublevel sets over all r.
    """
    from .dynamics import lorenz_r

    sigma = flow.meta["sigma"]
    b = flow.meta["b"]
    lams = sorted({float(x) for x in lam_values})
    if not lams:
        raise ValueError("no parameter values")
    # one common level: relative to the cell size, larger sublevel sets trap more robustly
    level = margin * max(sparrow_trapping_level(sigma, b, lorenz_r(flow, lam)) for lam in lams)
    levels = {lam: level for lam in lams}
    los, his = [], []
    for lam in lams:
        lo, hi = sparrow_box(sigma, b, lorenz_r(flow, lam), levels[lam] * pad)
        los.append(lo)
        his.append(hi)
    if isinstance(divisions, int):
        divisions = (divisions,) * 3
    grid = CubicalGrid(tuple(np.min(los, axis=0)), tuple(np.max(his, axis=0)), tuple(divisions))
    m = grid.multi_index(np.arange(grid.ncells))
    clo = np.array(grid.lo) + m * grid.cell_size
    chi = clo + grid.cell_size
    memo: dict = {}

    def regions(lam: float) -> Optional[CellSet]:
        lam = float(lam)
        if lam not in memo:
            memo[lam] = CellSet(grid, sparrow_cell_min(clo, chi, lorenz_r(flow, lam), sigma) <= level)
        return memo[lam]

    return grid, regions
