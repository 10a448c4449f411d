"""Integer (co)homology of cubical sets and pairs, and Conley indices.

A cell of the cubical complex is addressed by its doubled coordinates: a top
cube with multi-index m has coordinates 2m+1, and its faces are obtained by
moving odd coordinates by -1 or +1. The number of odd coordinates is the
dimension of the cell.

Homology is computed by reducing the chain complex with unit pivots
(collapses and coreductions first, since they cause no fill-in), followed by
a Smith normal form of whatever is left, in Python integers.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .cubegrid import CellSet, EmptySet, IndexPair, MultivaluedMap, NotIsolated, index_pair

__all__ = [
    "InvalidPair",
    "CubicalComplex",
    "GradedGroup",
    "ConleyIndex",
    "ExactSequenceVerdict",
    "smith_diagonal",
    "chain_homology",
    "relative_homology",
    "homology",
    "conley_index",
    "check_exact_sequence",
]


class InvalidPair(ValueError):
    pass


# ---------------------------------------------------------------- complexes


@dataclass(frozen=True, eq=False)
class CubicalComplex:
    """Quotient complex C(N)/C(E) of the closed cubical sets N and E.

    ``cells`` are flat doubled-coordinate ids (sorted), ``dims`` their
    dimensions, and ``boundary`` holds (row=face position, col=cell
    position, coefficient) triples.
    """

    shape: tuple[int, ...]
    cells: np.ndarray
    dims: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    coefs: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.shape)

    def counts(self) -> list[int]:
        return np.bincount(self.dims, minlength=self.dim + 1).tolist()

    def boundary_matrix(self, k: int) -> sparse.csr_matrix:
        """Integer matrix of the boundary from dimension k to k-1."""
        pos_k = np.flatnonzero(self.dims == k)
        pos_km1 = np.flatnonzero(self.dims == k - 1)
        rk = np.full(self.cells.size, -1)
        rk[pos_k] = np.arange(pos_k.size)
        rkm1 = np.full(self.cells.size, -1)
        rkm1[pos_km1] = np.arange(pos_km1.size)
        sel = self.dims[self.cols] == k
        return sparse.csr_matrix(
            (self.coefs[sel], (rkm1[self.rows[sel]], rk[self.cols[sel]])),
            shape=(pos_km1.size, pos_k.size),
            dtype=np.int64,
        )

    def euler_characteristic(self) -> int:
        return int(sum((-1) ** k * c for k, c in enumerate(self.counts())))

    @classmethod
    def from_pair(cls, N: CellSet, E: Optional[CellSet] = None) -> "CubicalComplex":
        grid = N.grid
        n = grid.dim
        shape = tuple(2 * d + 1 for d in grid.divisions)
        offs = np.array(list(itertools.product((-1, 0, 1), repeat=n)), dtype=np.int64)

        def closure(S: CellSet) -> np.ndarray:
            if S.is_empty:
                return np.zeros(0, dtype=np.int64)
            top = 2 * grid.multi_index(S.indices) + 1
            out = []
            for start in range(0, top.shape[0], 1 << 16):
                blk = (top[start : start + (1 << 16), None, :] + offs[None]).reshape(-1, n)
                out.append(np.unique(np.ravel_multi_index(tuple(blk.T), shape)))
            return np.unique(np.concatenate(out))

        cellsN = closure(N)
        if E is not None and not E.is_empty:
            cellsN = np.setdiff1d(cellsN, closure(E), assume_unique=True)
        coords = np.stack(np.unravel_index(cellsN, shape), axis=-1)
        odd = coords % 2 == 1
        dims = odd.sum(axis=1).astype(np.int64)
        rows, cols, coefs = [], [], []
        # sign of the face along axis j is (-1)^(odd axes before j)
        before = np.cumsum(odd, axis=1) - odd
        for j in range(n):
            sel = np.flatnonzero(odd[:, j])
            if not sel.size:
                continue
            sign = np.where(before[sel, j] % 2 == 0, 1, -1)
            for delta, s in ((1, 1), (-1, -1)):
                fc = coords[sel].copy()
                fc[:, j] += delta
                fid = np.ravel_multi_index(tuple(fc.T), shape)
                pos = np.searchsorted(cellsN, fid)
                pos = np.minimum(pos, cellsN.size - 1)
                found = cellsN[pos] == fid
                rows.append(pos[found])
                cols.append(sel[found])
                coefs.append((s * sign)[found])
        cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64))
        return cls(shape, cellsN, dims, cat(rows), cat(cols), cat(coefs).astype(np.int64))


# ---------------------------------------------------------------- groups


@dataclass(frozen=True)
class GradedGroup:
    """Finitely generated graded abelian group: free rank plus torsion per degree."""

    ranks: tuple[int, ...]
    torsion: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks)
        tors = tuple(tuple(int(t) for t in ts) for ts in self.torsion)
        tors = tors + ((),) * (len(ranks) - len(tors))
        if len(tors) != len(ranks):
            raise ValueError("torsion has more degrees than ranks")
        for ts in tors:
            if any(t <= 1 for t in ts) or any(b % a for a, b in zip(ts, ts[1:])):
                raise ValueError(f"torsion coefficients must be >1 and divide each other: {ts}")
        if any(r < 0 for r in ranks):
            raise ValueError("ranks must be nonnegative")
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "torsion", tors)

    @classmethod
    def zero(cls, top: int) -> "GradedGroup":
        return cls((0,) * (top + 1))

    @classmethod
    def point(cls, top: int) -> "GradedGroup":
        return cls((1,) + (0,) * top)

    @classmethod
    def sphere(cls, k: int, top: int) -> "GradedGroup":
        """Homology of the k-sphere (k >= 1), or of S^0 for k == 0."""
        ranks = [0] * (top + 1)
        if k == 0:
            ranks[0] = 2
        else:
            ranks[0] = 1
            ranks[k] = 1
        return cls(tuple(ranks))

    @property
    def top(self) -> int:
        return len(self.ranks) - 1

    def rank(self, k: int) -> int:
        return self.ranks[k] if 0 <= k < len(self.ranks) else 0

    def tors(self, k: int) -> tuple[int, ...]:
        return self.torsion[k] if 0 <= k < len(self.torsion) else ()

    @property
    def is_trivial(self) -> bool:
        return not any(self.ranks) and not any(self.torsion)

    def padded(self, top: int) -> "GradedGroup":
        if top < self.top:
            if any(self.ranks[top + 1 :]) or any(self.torsion[top + 1 :]):
                raise ValueError("cannot truncate nonzero degrees")
            return GradedGroup(self.ranks[: top + 1], self.torsion[: top + 1])
        extra = top - self.top
        return GradedGroup(self.ranks + (0,) * extra, self.torsion + ((),) * extra)

    def cohomology(self) -> "GradedGroup":
        """Universal coefficients: H^k = free part of H_k plus torsion of H_{k-1}."""
        tors = ((),) + self.torsion[:-1]
        return GradedGroup(self.ranks, tors)

    def to_json(self) -> list[dict]:
        return [
            {"dim": k, "rank": r, "torsion": list(t)}
            for k, (r, t) in enumerate(zip(self.ranks, self.torsion))
        ]

    @classmethod
    def from_json(cls, data) -> "GradedGroup":
        if isinstance(data, str):
            data = json.loads(data)
        data = sorted(data, key=lambda d: d["dim"])
        if [d["dim"] for d in data] != list(range(len(data))):
            raise ValueError("degrees must be 0..top without gaps")
        return cls(tuple(d["rank"] for d in data), tuple(tuple(d["torsion"]) for d in data))

    def __str__(self) -> str:
        parts = []
        for k, (r, ts) in enumerate(zip(self.ranks, self.torsion)):
            terms = ([f"Z^{r}" if r > 1 else "Z"] if r else []) + [f"Z/{t}" for t in ts]
            if terms:
                parts.append(f"H{k}=" + "+".join(terms))
        return ", ".join(parts) if parts else "0"


# ---------------------------------------------------------------- SNF


def smith_diagonal(matrix) -> list[int]:
    """Nonzero invariant factors of an integer matrix (d1 | d2 | ...).

    Entries are converted to Python integers, so there is no overflow.
    Pivoting picks the entry of smallest absolute value.
    """
    A = [[int(v) for v in row] for row in (matrix.tolist() if hasattr(matrix, "tolist") else matrix)]
    m = len(A)
    n = len(A[0]) if m else 0
    diag: list[int] = []
    t = 0
    while t < m and t < n:
        best = None
        for i in range(t, m):
            row = A[i]
            for j in range(t, n):
                v = row[j]
                if v and (best is None or abs(v) < best[0]):
                    best = (abs(v), i, j)
                    if best[0] == 1:
                        break
            if best is not None and best[0] == 1:
                break
        if best is None:
            break
        _, i, j = best
        A[t], A[i] = A[i], A[t]
        for row in A:
            row[t], row[j] = row[j], row[t]
        while True:
            p = A[t][t]
            done = True
            for i in range(t + 1, m):
                if A[i][t]:
                    q = A[i][t] // p
                    if q:
                        ri, rt = A[i], A[t]
                        for j in range(t, n):
                            ri[j] -= q * rt[j]
                    if A[i][t]:
                        done = False
            rt = A[t]
            for j in range(t + 1, n):
                if rt[j]:
                    q = rt[j] // p
                    if q:
                        for row in A[t:]:
                            row[j] -= q * row[t]
                    if rt[j]:
                        done = False
            if done:
                # pivot must divide the rest of the submatrix
                bad = next(
                    ((i, j) for i in range(t + 1, m) for j in range(t + 1, n) if A[i][j] % p),
                    None,
                )
                if bad is None:
                    break
                i, j = bad
                rt, ri = A[t], A[i]
                for c in range(t, n):
                    rt[c] += ri[c]
                continue
            # move the smallest nonzero entry of row/column t to the pivot
            cands = [(abs(A[i][t]), i, t) for i in range(t, m) if A[i][t]]
            cands += [(abs(A[t][j]), t, j) for j in range(t, n) if A[t][j]]
            _, i, j = min(cands)
            A[t], A[i] = A[i], A[t]
            for row in A:
                row[t], row[j] = row[j], row[t]
        diag.append(abs(A[t][t]))
        t += 1
    return diag


def _component_vertices(cx: CubicalComplex) -> list[int]:
    """Smallest vertex of each 1-skeleton component with no edge into the exit set.

    In the quotient complex an edge with a single surviving endpoint is an
    edge into the removed exit set, which marks its component as touching.
    """
    verts = np.flatnonzero(cx.dims == 0)
    if not verts.size:
        return []
    is_edge = cx.dims[cx.cols] == 1
    ecol, erow = cx.cols[is_edge], cx.rows[is_edge]
    nb = np.bincount(ecol, minlength=cx.cells.size)
    pos = np.full(cx.cells.size, -1, dtype=np.int64)
    pos[verts] = np.arange(verts.size)
    full = nb[ecol] == 2
    # pair up the two endpoints of each full edge
    order = np.argsort(ecol[full], kind="stable")
    ends = pos[erow[full][order]].reshape(-1, 2)
    k = verts.size
    adj = sparse.csr_matrix((np.ones(ends.shape[0], dtype=np.int8), (ends[:, 0], ends[:, 1])), shape=(k, k))
    ncomp, labels = csgraph.connected_components(adj, directed=False)
    touching = np.zeros(ncomp, dtype=bool)
    half = nb[ecol] == 1
    touching[labels[pos[erow[half]]]] = True
    first = np.full(ncomp, k, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(k))
    return [int(verts[first[c]]) for c in range(ncomp) if not touching[c]]


def chain_homology(cx: CubicalComplex) -> GradedGroup:
    """Homology of a CubicalComplex, degrees 0..cx.dim."""
    top = cx.dim
    ncell = cx.cells.size
    dims = cx.dims.tolist()
    bd: list[dict] = [dict() for _ in range(ncell)]
    cbd: list[dict] = [dict() for _ in range(ncell)]
    for r, c, v in zip(cx.rows.tolist(), cx.cols.tolist(), cx.coefs.tolist()):
        bd[c][r] = v
        cbd[r][c] = v
    alive = [True] * ncell
    pivots = [0] * (top + 2)

    # One vertex per component that stays away from the exit set carries a
    # free H_0 generator. Quotienting it out first lets collapses sweep the
    # whole component instead of stalling on a closed shell.
    free_h0 = 0
    seeds = {}
    for v in _component_vertices(cx):
        seeds[v] = list(cbd[v])
        for x in cbd[v]:
            bd[x].pop(v, None)
        cbd[v] = {}
        alive[v] = False
        free_h0 += 1

    def reduce(a: int, b: int) -> list[int]:
        coef = bd[a][b]
        touched = []
        bda = bd[a]
        for x, q in list(cbd[b].items()):
            if x == a:
                continue
            factor = q * coef
            bdx = bd[x]
            for f, v in bda.items():
                nv = bdx.get(f, 0) - factor * v
                if nv:
                    bdx[f] = nv
                    cbd[f][x] = nv
                else:
                    bdx.pop(f, None)
                    cbd[f].pop(x, None)
            touched.append(x)
        for f in bda:
            if f != b:
                cbd[f].pop(a, None)
                touched.append(f)
        for y in cbd[a]:
            bd[y].pop(a, None)
            touched.append(y)
        for f in bd[b]:
            cbd[f].pop(b, None)
            touched.append(f)
        for y in cbd[b]:
            if y != a:
                bd[y].pop(b, None)
                touched.append(y)
        bd[a] = {}
        cbd[a] = {}
        bd[b] = {}
        cbd[b] = {}
        alive[a] = alive[b] = False
        pivots[dims[a]] += 1
        return touched

    def free_pair(c: int, coreduce_only: bool = False):
        bc = bd[c]
        if len(bc) == 1:
            (b, v), = bc.items()
            if v in (1, -1):
                return c, b
        if coreduce_only:
            return None
        cc = cbd[c]
        if len(cc) == 1:
            (a, v), = cc.items()
            if v in (1, -1):
                return a, c
        return None

    # coreductions spreading out from the removed vertices come first;
    # mixing in free-face collapses early tends to stall on thin walls
    stack = [x for v in seeds for x in seeds[v]]
    while stack:
        c = stack.pop()
        if not alive[c]:
            continue
        p = free_pair(c, coreduce_only=True)
        if p is not None:
            stack.extend(reduce(*p))
    stack = [c for c in range(ncell - 1, -1, -1) if alive[c]]
    live = list(range(ncell))
    while True:
        while stack:
            c = stack.pop()
            if not alive[c]:
                continue
            p = free_pair(c)
            if p is not None:
                stack.extend(reduce(*p))
        # no free pair left: general unit pivot with the smallest fill-in
        best = None
        live = [a for a in live if alive[a]]
        for a in live:
            if not bd[a]:
                continue
            la = len(bd[a])
            for b, v in bd[a].items():
                if v in (1, -1):
                    cost = (la - 1) * (len(cbd[b]) - 1)
                    if best is None or cost < best[0]:
                        best = (cost, a, b)
            if best is not None and best[0] <= 1:
                break
        if best is None:
            break
        stack.extend(reduce(best[1], best[2]))

    left = [c for c in range(ncell) if alive[c]]
    by_dim: dict[int, list[int]] = defaultdict(list)
    for c in left:
        by_dim[dims[c]].append(c)
    nk = [len(by_dim[k]) for k in range(top + 1)]
    rank = [0] * (top + 2)
    diags: list[list[int]] = [[] for _ in range(top + 2)]
    for k in range(1, top + 1):
        cols = by_dim[k]
        rows = by_dim[k - 1]
        if not cols or not rows:
            continue
        pos = {r: i for i, r in enumerate(rows)}
        M = [[0] * len(cols) for _ in rows]
        any_nz = False
        for j, c in enumerate(cols):
            for f, v in bd[c].items():
                M[pos[f]][j] = v
                any_nz = True
        if any_nz:
            d = smith_diagonal(M)
            diags[k] = d
            rank[k] = len(d)
    ranks = tuple(nk[k] - rank[k] - rank[k + 1] + (free_h0 if k == 0 else 0) for k in range(top + 1))
    torsion = tuple(tuple(d for d in diags[k + 1] if d > 1) for k in range(top + 1))
    return GradedGroup(ranks, torsion)


def relative_homology(pair: IndexPair) -> GradedGroup:
    """H_*(N, exit) with integer coefficients."""
    N, E = pair.N, pair.exit
    if not E.issubset(N):
        raise InvalidPair("exit set is not contained in N")
    top = N.grid.dim
    if N.is_empty:
        return GradedGroup.zero(top)
    return chain_homology(CubicalComplex.from_pair(N, E))


def homology(S: CellSet) -> GradedGroup:
    if S.is_empty:
        raise EmptySet("homology of an empty cell set")
    return chain_homology(CubicalComplex.from_pair(S, None))


# ---------------------------------------------------------------- Conley


@dataclass(frozen=True)
class ConleyIndex:
    homological: GradedGroup
    cohomological: GradedGroup
    pair_provenance: str
    direction: str = "forward"
    reverse: Optional["ConleyIndex"] = None
    duality_ok: Optional[bool] = None

    @property
    def is_trivial(self) -> bool:
        return self.homological.is_trivial

    def to_json(self) -> dict:
        out = {
            "direction": self.direction,
            "pair": self.pair_provenance,
            "homological": self.homological.to_json(),
            "cohomological": self.cohomological.to_json(),
        }
        if self.reverse is not None:
            out["reverse"] = self.reverse.to_json()
        if self.duality_ok is not None:
            out["duality_ok"] = self.duality_ok
        return out


def _index_from_pair(pair: IndexPair, direction: str) -> ConleyIndex:
    h = relative_homology(pair)
    return ConleyIndex(h, h.cohomology(), pair.describe(), direction)


def _pair(fmap, K, region, width, direction):
    try:
        return index_pair(fmap, K, region, width)
    except NotIsolated as exc:
        raise NotIsolated(f"{direction}: {exc}") from None


def conley_index(
    fmap: MultivaluedMap,
    reverse_map: Optional[MultivaluedMap],
    K: CellSet,
    region: Optional[CellSet] = None,
    width: int = 2,
    reverse_region: Optional[CellSet] = None,
) -> ConleyIndex:
    """Homological and cohomological Conley index of K.

    With a reverse map the index of the time-reversed flow is computed too,
    and time duality is checked in the extreme degrees: rank CH^n forward
    equals rank CH_0 reversed, and rank CH^0 forward equals rank CH_n reversed.
    """
    fwd = _index_from_pair(_pair(fmap, K, region, width, "forward"), "forward")
    if reverse_map is None:
        return fwd
    rev_region = reverse_region if reverse_region is not None else region
    rev = _index_from_pair(_pair(reverse_map, K, rev_region, width, "reverse"), "reverse")
    n = K.grid.dim
    ok = (
        fwd.cohomological.rank(n) == rev.homological.rank(0)
        and fwd.cohomological.rank(0) == rev.homological.rank(n)
    )
    return ConleyIndex(
        fwd.homological, fwd.cohomological, fwd.pair_provenance, "forward", rev, ok
    )


@dataclass(frozen=True)
class ExactSequenceVerdict:
    ok: bool
    failing_degree: Optional[int]
    labels: tuple[tuple[str, int], ...]
    torsion_checked: bool = True

    def __bool__(self) -> bool:
        return self.ok


def check_exact_sequence(
    attractor_index: GradedGroup, total_index: GradedGroup, repeller_index: GradedGroup
) -> ExactSequenceVerdict:
    """Rank-level test of ... -> CH^k(R) -> CH^k(S) -> CH^k(A) -> CH^{k+1}(R) -> ...

    In an exact sequence every group splits as (image in) + (image out), so
    the image ranks are forced one by one from the left; the test fails at
    the first group where that bookkeeping goes negative, or if the last
    image is nonzero. Torsion is only decided when every group is 0 or free.
    """
    top = max(attractor_index.top, total_index.top, repeller_index.top)
    A = attractor_index.padded(top)
    S = total_index.padded(top)
    R = repeller_index.padded(top)
    seq = []
    for k in range(top + 1):
        seq += [(f"R{k}", k, R.rank(k)), (f"S{k}", k, S.rank(k)), (f"A{k}", k, A.rank(k))]
    labels = []
    incoming = 0
    for name, k, b in seq:
        out = b - incoming
        if out < 0:
            return ExactSequenceVerdict(False, k, tuple(labels))
        labels.append((name, out))
        incoming = out
    if incoming != 0:
        return ExactSequenceVerdict(False, top, tuple(labels))
    tors_free = not any(any(g.torsion) for g in (A, S, R))
    return ExactSequenceVerdict(True, None, tuple(labels), tors_free)
