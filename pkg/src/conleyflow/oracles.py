"""Slow, obviously correct reference implementations.

They share no code with the fast paths they check: plain Python sets and
loops, no scipy graph routines, no chain-complex reduction.
"""

from __future__ import annotations

from collections import deque
from typing import Iterable, Sequence

import numpy as np


def brute_invariant(images: Sequence[Iterable[int]], escaping: Sequence[bool], S: Iterable[int]) -> set[int]:
    """Cells of S on a bi-infinite path inside S.

    Greatest fixed point: repeatedly drop cells without a successor or
    without a predecessor in the current set.
    """
    cur = {c for c in S if not escaping[c]}
    changed = True
    while changed:
        changed = False
        has_pred = set()
        for c in cur:
            for d in images[c]:
                if d in cur:
                    has_pred.add(d)
        keep = {c for c in cur if c in has_pred and any(d in cur for d in images[c])}
        if keep != cur:
            cur = keep
            changed = True
    return cur


def flood_components(mask: np.ndarray) -> list[set[int]]:
    """Face-connected components of a boolean array, by smallest flat index."""
    shape = mask.shape
    flat = mask.ravel()
    seen = np.zeros(flat.size, dtype=bool)
    out = []
    for start in range(flat.size):
        if not flat[start] or seen[start]:
            continue
        comp = set()
        queue = deque([start])
        seen[start] = True
        while queue:
            c = queue.popleft()
            comp.add(c)
            m = list(np.unravel_index(c, shape))
            for ax in range(len(shape)):
                for step in (-1, 1):
                    m2 = list(m)
                    m2[ax] += step
                    if 0 <= m2[ax] < shape[ax]:
                        d = int(np.ravel_multi_index(m2, shape))
                        if flat[d] and not seen[d]:
                            seen[d] = True
                            queue.append(d)
        out.append(comp)
    return out


def rational_betti(boundaries: Sequence[np.ndarray], counts: Sequence[int]) -> list[int]:
    """Betti numbers over the rationals from dense boundary matrices.

    ``boundaries[k]`` maps k-chains to (k-1)-chains; rank by SVD is exact
    enough for the small integer matrices used in checks.
    """
    ranks = []
    for B in boundaries:
        ranks.append(int(np.linalg.matrix_rank(B)) if B.size else 0)
    top = len(counts) - 1
    out = []
    for k in range(top + 1):
        r_k = ranks[k] if k < len(ranks) else 0
        r_next = ranks[k + 1] if k + 1 < len(ranks) else 0
        out.append(counts[k] - r_k - r_next)
    return out


def rk4(rhs, lam: float, x0: Sequence[float], t_end: float, h: float) -> np.ndarray:
    """Fixed-step classical Runge-Kutta; negative ``t_end`` runs backwards."""
    x = np.array(x0, dtype=float).reshape(-1, 1)
    n = max(1, int(round(abs(t_end) / h)))
    dt = t_end / n
    for _ in range(n):
        k1 = rhs(x, lam)
        k2 = rhs(x + dt / 2 * k1, lam)
        k3 = rhs(x + dt / 2 * k2, lam)
        k4 = rhs(x + dt * k3, lam)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x.ravel()


def exact_by_search(ranks: Sequence[int]) -> bool:
    """Can a sequence of free groups with these ranks be exact?

    Tries every assignment of image ranks: each group's rank must split as
    image in plus image out, with nothing coming into the first group and
    nothing leaving the last.
    """
    n = len(ranks)

    def go(i: int, incoming: int) -> bool:
        if i == n:
            return incoming == 0
        return any(incoming + out == ranks[i] and go(i + 1, out) for out in range(ranks[i] + 1))

    return go(0, 0)
