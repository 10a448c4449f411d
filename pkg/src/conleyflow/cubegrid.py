"""Uniform cubical grids, cell sets and combinatorial flow maps.

Cells are indexed in C order over ``divisions`` (axis 0 varies slowest).
Everything here iterates in ascending cell index, so results are
reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .dynamics import EscapePolicy, ParametrizedFlow, flow_map

__all__ = [
    "GridMismatch",
    "NotIsolated",
    "EmptySet",
    "CubicalGrid",
    "CellSet",
    "MultivaluedMap",
    "IndexPair",
    "outer_approximation",
    "invariant_part",
    "is_isolating",
    "index_pair",
    "forward_reach",
    "backward_reach",
    "components",
    "diameter",
    "save_cellset",
    "load_cellset",
    "export_centers_csv",
]


class GridMismatch(ValueError):
    pass


class NotIsolated(RuntimeError):
    pass


class EmptySet(ValueError):
    pass


@dataclass(frozen=True)
class CubicalGrid:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    divisions: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        div = tuple(int(v) for v in self.divisions)
        if not (len(lo) == len(hi) == len(div)) or not lo:
            raise ValueError("lo, hi and divisions must have the same positive length")
        for axis, (a, b, d) in enumerate(zip(lo, hi, div)):
            if not a < b:
                raise ValueError(f"axis {axis}: lo ({a}) must be < hi ({b})")
            if d < 1:
                raise ValueError(f"axis {axis}: divisions must be positive")
        if math.prod(div) >= 2**62:
            raise ValueError("too many cells")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "divisions", div)

    @classmethod
    def cube(cls, half_width: float, dim: int, n: int) -> "CubicalGrid":
        return cls((-half_width,) * dim, (half_width,) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.divisions)

    @property
    def ncells(self) -> int:
        return math.prod(self.divisions)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.divisions

    @cached_property
    def cell_size(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / np.array(self.divisions)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.cell_size))

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def multi_index(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.divisions), axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi[..., k] for k in range(self.dim)), self.divisions)

    def centers(self, idx=None) -> np.ndarray:
        if idx is None:
            idx = np.arange(self.ncells)
        m = self.multi_index(idx)
        return np.array(self.lo) + (m + 0.5) * self.cell_size

    def cell_of_points(self, points: np.ndarray) -> np.ndarray:
        """Cell index containing each point; -1 for points outside the box."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        div = np.array(self.divisions)
        inside = np.all((p >= lo) & (p <= hi), axis=1) & np.all(np.isfinite(p), axis=1)
        q = np.floor((np.where(np.isfinite(p), p, 0.0) - lo) / self.cell_size).astype(np.int64)
        q = np.clip(q, 0, div - 1)
        out = np.full(p.shape[0], -1, dtype=np.int64)
        out[inside] = self.flat_index(q[inside])
        return out

    def refine(self, factor: int = 2) -> "CubicalGrid":
        return CubicalGrid(self.lo, self.hi, tuple(d * factor for d in self.divisions))

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "divisions": list(self.divisions)}


def _face_structure(dim: int) -> np.ndarray:
    return ndimage.generate_binary_structure(dim, 1)


def _full_structure(dim: int) -> np.ndarray:
    return ndimage.generate_binary_structure(dim, dim)


class CellSet:
    """Immutable set of cells of one grid, stored as a boolean mask."""

    __slots__ = ("grid", "_mask")

    def __init__(self, grid: CubicalGrid, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool).reshape(grid.ncells)
        if mask.base is not None or mask.flags.writeable:
            mask = mask.copy()
        mask.setflags(write=False)
        self.grid = grid
        self._mask = mask

    # construction
    @classmethod
    def empty(cls, grid: CubicalGrid) -> "CellSet":
        return cls(grid, np.zeros(grid.ncells, dtype=bool))

    @classmethod
    def full(cls, grid: CubicalGrid) -> "CellSet":
        return cls(grid, np.ones(grid.ncells, dtype=bool))

    @classmethod
    def from_indices(cls, grid: CubicalGrid, idx: Iterable[int]) -> "CellSet":
        mask = np.zeros(grid.ncells, dtype=bool)
        mask[np.asarray(list(idx) if not isinstance(idx, np.ndarray) else idx, dtype=np.int64)] = True
        return cls(grid, mask)

    @classmethod
    def from_centers(cls, grid: CubicalGrid, predicate) -> "CellSet":
        """Cells whose center satisfies ``predicate(centers) -> bool array``."""
        return cls(grid, predicate(grid.centers()))

    # views
    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def array(self) -> np.ndarray:
        return self._mask.reshape(self.grid.divisions)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self._mask)

    def __len__(self) -> int:
        return int(self._mask.sum())

    def __bool__(self) -> bool:
        return bool(self._mask.any())

    @property
    def is_empty(self) -> bool:
        return not self._mask.any()

    def __contains__(self, idx) -> bool:
        return bool(self._mask[int(idx)])

    def __iter__(self):
        return iter(self.indices.tolist())

    def centers(self) -> np.ndarray:
        return self.grid.centers(self.indices)

    def __repr__(self) -> str:
        return f"CellSet({len(self)} of {self.grid.ncells} cells)"

    # algebra
    def _check(self, other: "CellSet") -> None:
        if not isinstance(other, CellSet):
            raise TypeError("expected a CellSet")
        if other.grid != self.grid:
            raise GridMismatch("cell sets live on different grids")

    def __or__(self, other):
        self._check(other)
        return CellSet(self.grid, self._mask | other._mask)

    def __and__(self, other):
        self._check(other)
        return CellSet(self.grid, self._mask & other._mask)

    def __sub__(self, other):
        self._check(other)
        return CellSet(self.grid, self._mask & ~other._mask)

    def __invert__(self):
        return CellSet(self.grid, ~self._mask)

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self._mask, other._mask)

    def __hash__(self):
        return hash((self.grid, self._mask.tobytes()))

    def issubset(self, other: "CellSet") -> bool:
        self._check(other)
        return not np.any(self._mask & ~other._mask)

    __le__ = issubset

    def isdisjoint(self, other: "CellSet") -> bool:
        self._check(other)
        return not np.any(self._mask & other._mask)

    # morphology
    def dilate(self, width: int = 1) -> "CellSet":
        """Collar of ``width`` layers (all neighbors, corners included)."""
        if width <= 0 or self.is_empty:
            return self
        out = ndimage.binary_dilation(
            self.array, structure=_full_structure(self.grid.dim), iterations=width
        )
        return CellSet(self.grid, out)

    def boundary_layer(self) -> "CellSet":
        """Cells with a face neighbor outside the set (the grid's exterior counts)."""
        if self.is_empty:
            return self
        inner = ndimage.binary_erosion(
            self.array, structure=_face_structure(self.grid.dim), border_value=0
        )
        return CellSet(self.grid, self.array & ~inner)

    def refine(self, factor: int = 2) -> "CellSet":
        fine = self.grid.refine(factor)
        arr = self.array
        for axis in range(self.grid.dim):
            arr = np.repeat(arr, factor, axis=axis)
        return CellSet(fine, arr)

    def project(self, grid: CubicalGrid) -> "CellSet":
        """Cells of a coarser grid holding the centers of this set's cells."""
        if self.is_empty:
            return CellSet.empty(grid)
        hit = grid.cell_of_points(self.centers())
        if np.any(hit < 0):
            raise GridMismatch("cells fall outside the target grid")
        return CellSet.from_indices(grid, np.unique(hit))

    def digest(self) -> str:
        return hashlib.sha256(self._mask.tobytes()).hexdigest()


# ---------------------------------------------------------------- maps


@dataclass(frozen=True, eq=False)
class MultivaluedMap:
    """Combinatorial outer approximation stored in CSR form.

    ``images`` of cell c are ``indices[indptr[c]:indptr[c+1]]`` (sorted,
    unique). Cells outside ``domain`` were not computed and have no image.
    """

    grid: CubicalGrid
    indptr: np.ndarray
    indices: np.ndarray
    escaping: np.ndarray
    failed: np.ndarray
    domain: np.ndarray
    tau: float = 0.0
    lam: float = 0.0
    bloat: int = 0
    meta: dict = field(default_factory=dict)

    def image(self, c: int) -> np.ndarray:
        return self.indices[self.indptr[c] : self.indptr[c + 1]]

    def image_of(self, S: CellSet) -> CellSet:
        self._check(S)
        mask = np.zeros(self.grid.ncells, dtype=bool)
        mask[self.matrix[S.indices].indices] = True
        return CellSet(self.grid, mask)

    def preimage_of(self, S: CellSet) -> CellSet:
        self._check(S)
        hit = self.matrix @ S.mask.astype(np.int32)
        return CellSet(self.grid, hit > 0)

    def _check(self, S: CellSet) -> None:
        if S.grid != self.grid:
            raise GridMismatch("cell set and map live on different grids")

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        n = self.grid.ncells
        data = np.ones(self.indices.size, dtype=np.int8)
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    @property
    def escape_set(self) -> CellSet:
        return CellSet(self.grid, self.escaping)

    @property
    def domain_set(self) -> CellSet:
        return CellSet(self.grid, self.domain)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.indptr, self.indices, self.escaping, self.failed, self.domain):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def restricted(self, S: CellSet) -> sparse.csr_matrix:
        """Adjacency among cells of S (rows/cols in order of ``S.indices``)."""
        idx = S.indices
        return self.matrix[idx][:, idx].tocsr()


def _face_hits(grid: CubicalGrid, points: np.ndarray) -> np.ndarray:
    """Per axis, points lying exactly on a face shared with the lower neighbor."""
    rel = (points - np.array(grid.lo)) / grid.cell_size
    q = np.floor(rel)
    return (rel == q) & (q > 0) & (q < np.array(grid.divisions))


def _auto_bloat(flow: ParametrizedFlow, grid: CubicalGrid, tau: float) -> int:
    if flow.lipschitz_hint is None:
        return 1
    side = float(np.min(grid.cell_size))
    return max(1, math.ceil(flow.lipschitz_hint * tau * grid.cell_diagonal / side))


def outer_approximation(
    flow: ParametrizedFlow,
    lam: float,
    grid: CubicalGrid,
    tau: float,
    samples_per_axis: int = 2,
    bloat: Optional[int] = 1,
    policy: Optional[EscapePolicy] = None,
    tol: float = 1e-8,
    domain: Optional[CellSet] = None,
    chunk: int = 1 << 15,
) -> MultivaluedMap:
    """Sampled outer approximation of the time-``tau`` map.

    Each cell's image is the set of cells hit by the endpoints of its sample
    lattice (corners plus interior points), fattened by ``bloat`` layers.
    A cell with an endpoint outside the box, past the escape radius, or whose
    integration failed is marked escaping. ``bloat=None`` derives the layer
    count from ``flow.lipschitz_hint`` when available.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if samples_per_axis < 2:
        raise ValueError("samples_per_axis must be >= 2")
    if flow.dim != grid.dim:
        raise GridMismatch(f"flow has dim {flow.dim}, grid has dim {grid.dim}")
    if bloat is None:
        bloat = _auto_bloat(flow, grid, tau)
    if bloat < 0:
        raise ValueError("bloat must be nonnegative")
    if policy is None:
        policy = EscapePolicy.for_box(grid.lo, grid.hi)
    policy.check_domain(grid.lo, grid.hi)

    n = grid.dim
    s = samples_per_axis
    div = np.array(grid.divisions)
    dom = np.ones(grid.ncells, dtype=bool) if domain is None else domain.mask.copy()
    if domain is not None and domain.grid != grid:
        raise GridMismatch("domain lives on a different grid")
    cells = np.flatnonzero(dom)

    # sample lattice shared between neighboring cells
    lat_shape = tuple(int(d) * (s - 1) + 1 for d in div)
    offsets = np.array(list(itertools.product(range(s), repeat=n)), dtype=np.int64)
    cm = grid.multi_index(cells) if cells.size else np.zeros((0, n), dtype=np.int64)
    lat = cm[:, None, :] * (s - 1) + offsets[None, :, :]
    lat_flat = np.ravel_multi_index(tuple(lat[..., k] for k in range(n)), lat_shape)
    uniq, inv = np.unique(lat_flat, return_inverse=True)
    inv = inv.reshape(lat_flat.shape)
    step = grid.cell_size / (s - 1)
    pts = np.array(grid.lo) + np.stack(np.unravel_index(uniq, lat_shape), axis=-1) * step
    ends, esc, bad = flow_map(flow, lam, pts, tau, tol=tol, escape_radius=policy.radius)
    end_cell = grid.cell_of_points(ends)
    end_cell[esc | bad] = -1

    sample_cells = end_cell[inv]  # (ncells_dom, s^n)
    # an endpoint on a shared face belongs to both closed cells; keep the one nearer the source
    on_face = _face_hits(grid, ends) & (end_cell >= 0)[:, None]
    if on_face.any():
        hit = on_face[inv]
        rows, cols = np.nonzero(hit.any(axis=2))
        tm = grid.multi_index(sample_cells[rows, cols])
        lower = hit[rows, cols] & (cm[rows] < tm)
        sample_cells[rows, cols] = grid.flat_index(tm - lower)
    escaping = np.zeros(grid.ncells, dtype=bool)
    failed = np.zeros(grid.ncells, dtype=bool)
    escaping[cells] = np.any(sample_cells < 0, axis=1)
    failed[cells] = np.any(bad[inv], axis=1)

    bl = np.array(list(itertools.product(range(-bloat, bloat + 1), repeat=n)), dtype=np.int64)
    counts = np.zeros(grid.ncells, dtype=np.int64)
    pieces = []
    for start in range(0, cells.size, chunk):
        sc = sample_cells[start : start + chunk]
        rows = np.repeat(np.arange(start, start + sc.shape[0]), sc.shape[1])
        tg = sc.ravel()
        ok = tg >= 0
        rows, tg = rows[ok], tg[ok]
        if bloat:
            tm = grid.multi_index(tg)
            tm = (tm[:, None, :] + bl[None, :, :]).reshape(-1, n)
            rows = np.repeat(rows, bl.shape[0])
            inside = np.all((tm >= 0) & (tm < div), axis=1)
            tm, rows = tm[inside], rows[inside]
            tg = grid.flat_index(tm)
        key = np.unique(rows.astype(np.int64) * grid.ncells + tg)
        r = key // grid.ncells
        pieces.append(key - r * grid.ncells)
        np.add.at(counts, cells[r], 1) if r.size else None
    indices = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    indptr = np.zeros(grid.ncells + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return MultivaluedMap(
        grid,
        indptr,
        indices.astype(np.int64),
        escaping,
        failed,
        dom,
        float(tau),
        float(lam),
        int(bloat),
        {"samples_per_axis": s, "tol": tol, "flow": flow.name},
    )


def _reach(adj: sparse.csr_matrix, seeds: np.ndarray) -> np.ndarray:
    """Nodes reachable from any seed (seeds included) along edges of adj."""
    k = adj.shape[0]
    out = np.zeros(k, dtype=bool)
    if not seeds.any():
        return out
    # super-source with edges to every seed
    src = sparse.csr_matrix(
        (np.ones(int(seeds.sum()), dtype=np.int8), np.flatnonzero(seeds), [0, int(seeds.sum())]),
        shape=(1, k + 1),
    )
    big = sparse.vstack([sparse.hstack([adj, sparse.csr_matrix((k, 1), dtype=adj.dtype)]), src])
    order = csgraph.breadth_first_order(big.tocsr(), k, directed=True, return_predecessors=False)
    order = order[order < k]
    out[order] = True
    return out


def _recurrent(adj: sparse.csr_matrix) -> np.ndarray:
    k = adj.shape[0]
    if k == 0:
        return np.zeros(0, dtype=bool)
    ncomp, labels = csgraph.connected_components(adj, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=ncomp)
    rec = sizes[labels] > 1
    rec |= adj.diagonal() != 0
    return rec


def invariant_part(fmap: MultivaluedMap, S: CellSet) -> CellSet:
    """Largest subset of S on which every cell has a successor and a predecessor.

    Equivalently, the cells of S lying on a bi-infinite path inside S:
    cells reachable from a cycle of S and reaching a cycle of S. Escaping
    cells are excluded.
    """
    fmap._check(S)
    if S.is_empty:
        return S
    if np.any(S.mask & ~fmap.domain):
        raise GridMismatch("S contains cells outside the map's computed domain")
    work = S.mask & ~fmap.escaping
    idx = np.flatnonzero(work)
    adj = fmap.matrix[idx][:, idx].tocsr()
    rec = _recurrent(adj)
    fwd = _reach(adj, rec)
    bwd = _reach(adj.T.tocsr(), rec)
    keep = np.zeros(fmap.grid.ncells, dtype=bool)
    keep[idx[fwd & bwd]] = True
    return CellSet(fmap.grid, keep)


def is_isolating(fmap: MultivaluedMap, N: CellSet) -> tuple[bool, CellSet]:
    inv = invariant_part(fmap, N)
    return inv.isdisjoint(N.boundary_layer()), inv


def forward_reach(fmap: MultivaluedMap, seeds: CellSet, within: CellSet) -> CellSet:
    """Cells of ``within`` reachable from ``seeds`` by paths staying in ``within``."""
    fmap._check(seeds)
    fmap._check(within)
    idx = within.indices
    adj = fmap.matrix[idx][:, idx].tocsr()
    got = _reach(adj, seeds.mask[idx])
    out = np.zeros(fmap.grid.ncells, dtype=bool)
    out[idx[got]] = True
    return CellSet(fmap.grid, out)


def backward_reach(fmap: MultivaluedMap, targets: CellSet, within: CellSet) -> CellSet:
    """Cells of ``within`` with a path into ``targets`` staying in ``within``."""
    fmap._check(targets)
    fmap._check(within)
    idx = within.indices
    adj = fmap.matrix[idx][:, idx].T.tocsr()
    got = _reach(adj, targets.mask[idx])
    out = np.zeros(fmap.grid.ncells, dtype=bool)
    out[idx[got]] = True
    return CellSet(fmap.grid, out)


@dataclass(frozen=True)
class IndexPair:
    N: CellSet
    exit: CellSet
    entrance: CellSet
    region: Optional[CellSet] = None

    def describe(self) -> str:
        return (
            f"N={len(self.N)} cells, exit={len(self.exit)}, entrance={len(self.entrance)}"
            + (f", region={len(self.region)}" if self.region is not None else "")
        )

    def is_positively_invariant(self, fmap: MultivaluedMap) -> bool:
        inner = self.N - self.exit
        if np.any(fmap.escaping[inner.indices]):
            return False
        return fmap.image_of(inner).issubset(self.N)


def index_pair(
    fmap: MultivaluedMap,
    K: CellSet,
    region: Optional[CellSet] = None,
    width: int = 2,
) -> IndexPair:
    """Combinatorial index pair for an isolated invariant set K.

    The region defaults to a ``width``-cell collar of K and S = Inv(region)
    must stay off its boundary layer; the pair belongs to S, which under a
    different outer approximation (a reversed map, say) may differ from K.

    The exit set collects every cell the map carries out of S, together
    with the cells next to S that have no path back into S, closed under
    forward reach inside the map's domain. N is S plus the exit set. With
    long flow times images jump several cells, and the neighbor layer keeps
    the exit set wrapped around S on its repelling side instead of landing
    in scattered patches. A cell leaving S with a path back into S is
    rejected as non-isolation.
    """
    fmap._check(K)
    if K.is_empty:
        empty = CellSet.empty(fmap.grid)
        return IndexPair(empty, empty, empty, region)
    if region is None:
        region = K.dilate(width)
    region = region & fmap.domain_set
    if not K.issubset(region):
        raise NotIsolated("K is not contained in the isolating region")
    ok, inv = is_isolating(fmap, region)
    if not ok:
        raise NotIsolated("the invariant part touches the boundary of the isolating region")
    if not fmap.image_of(inv).issubset(fmap.domain_set):
        raise NotIsolated("the image of the invariant part leaves the map's domain")
    dom = fmap.domain_set
    returns = backward_reach(fmap, inv, dom)
    leaving = fmap.image_of(inv) - inv
    if not leaving.isdisjoint(returns):
        raise NotIsolated("a path leaves the invariant set and returns to it")
    layer = (inv.dilate(1) & dom) - returns
    exit_set = forward_reach(fmap, leaving | layer, dom)
    N = inv | exit_set
    entrance = N.boundary_layer() - exit_set
    return IndexPair(N, exit_set, entrance, region)


def components(S: CellSet) -> list[CellSet]:
    """Face-connected components ordered by their smallest cell index."""
    if S.is_empty:
        return []
    labels, count = ndimage.label(S.array, structure=_face_structure(S.grid.dim))
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    lab = flat[nz]
    first = np.full(count + 1, np.iinfo(np.int64).max)
    np.minimum.at(first, lab, nz)
    order = np.argsort(first[1:], kind="stable") + 1
    return [CellSet(S.grid, flat == k) for k in order]


def diameter(S: CellSet) -> float:
    """Largest distance between cell centers of S."""
    if S.is_empty:
        raise EmptySet("diameter of an empty cell set")
    pts = S.boundary_layer().centers()
    if pts.shape[0] == 1:
        return 0.0
    if pts.shape[0] > 3 and pts.shape[1] in (2, 3):
        from scipy.spatial import ConvexHull, QhullError

        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    best = 0.0
    for start in range(0, pts.shape[0], 2048):
        block = pts[start : start + 2048]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


# ---------------------------------------------------------------- files

_MAGIC = b"CSET"
_VERSION = 1


def _runs(mask: np.ndarray) -> np.ndarray:
    """Alternating run lengths, starting with a (possibly empty) run of zeros."""
    m = mask.astype(np.int8)
    change = np.flatnonzero(np.diff(m)) + 1
    bounds = np.concatenate([[0], change, [m.size]])
    runs = np.diff(bounds)
    if m.size and m[0]:
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint64)


def save_cellset(S: CellSet, path) -> tuple[Path, Path]:
    """Write ``path`` (run-length binary) and ``path.json`` (grid + checksum)."""
    path = Path(path)
    runs = _runs(S.mask)
    payload = _MAGIC + struct.pack("<BQ", _VERSION, runs.size) + runs.astype("<u8").tobytes()
    path.write_bytes(payload)
    side = {
        "format": "cellset-rle",
        "version": _VERSION,
        "grid": S.grid.to_json(),
        "count": len(S),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def load_cellset(path) -> CellSet:
    path = Path(path)
    payload = path.read_bytes()
    side = json.loads(path.with_name(path.name + ".json").read_text())
    if hashlib.sha256(payload).hexdigest() != side["sha256"]:
        raise ValueError(f"checksum mismatch for {path}")
    if payload[:4] != _MAGIC:
        raise ValueError("not a cell set file")
    version, nruns = struct.unpack("<BQ", payload[4:13])
    if version != _VERSION:
        raise ValueError(f"unsupported version {version}")
    runs = np.frombuffer(payload[13:], dtype="<u8", count=nruns).astype(np.int64)
    g = side["grid"]
    grid = CubicalGrid(tuple(g["lo"]), tuple(g["hi"]), tuple(g["divisions"]))
    values = np.arange(runs.size) % 2 == 1
    mask = np.repeat(values, runs)
    if mask.size != grid.ncells:
        raise ValueError("run lengths do not cover the grid")
    S = CellSet(grid, mask)
    if len(S) != side["count"]:
        raise ValueError("cell count mismatch")
    return S


def export_centers_csv(S: CellSet, path) -> Path:
    path = Path(path)
    pts = S.centers()
    header = ",".join(f"x{k + 1}" for k in range(S.grid.dim))
    lines = [header] + [",".join(repr(float(v)) for v in row) for row in pts]
    path.write_text("\n".join(lines) + "\n")
    return path
