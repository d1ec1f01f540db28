"""Whitney decompositions of Omega or of the interior of its complement.

A decomposition is the family of maximal dyadic cubes Q contained in a
computational window with ``diam(Q) <= dist(Q, dD)``; maximality gives
``dist(Q, dD) < 4 diam(Q)``.  Cubes are stored column-wise (levels, integer
lattice coordinates) with a per-level sorted hash for point location.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import GeometryError, as_points, box_box_distance

EPS_DILATE = 0.125
SIDES = ("omega", "complement")
DEFAULT_M_MAX = {1: 14, 2: 10}


class WhitneyError(GeometryError):
    pass


class UncertifiedDistanceError(WhitneyError):
    pass


@dataclass(frozen=True)
class DyadicCube:
    level: int
    lattice: tuple

    @property
    def side(self):
        return 2.0 ** (-self.level)

    @property
    def lo(self):
        return np.asarray(self.lattice, float) * self.side

    @property
    def hi(self):
        return self.lo + self.side

    @property
    def center(self):
        return self.lo + 0.5 * self.side

    @property
    def diam(self):
        return math.sqrt(len(self.lattice)) * self.side

    def dilated(self, eps=EPS_DILATE):
        pad = 0.5 * eps * self.side
        return self.lo - pad, self.hi + pad

    def parent(self):
        return DyadicCube(self.level - 1, tuple(k // 2 for k in self.lattice))


def side_member(domain, x, side):
    """Membership in D, where D is Omega or the interior of its complement."""
    inside = domain.contains(x)
    if side == "omega":
        return inside
    return ~inside & (domain.delta(x) > 0)


def root_level_for(window):
    """Coarsest dyadic level whose cubes tile ``window`` exactly."""
    lo, hi = (np.asarray(w, float) for w in window)
    if np.any(hi <= lo):
        raise WhitneyError("empty window")
    extent = float(np.min(hi - lo))
    m = -int(math.floor(math.log2(extent)))
    while True:
        h = 2.0 ** (-m)
        if np.all(np.mod(lo, h) == 0) and np.all(np.mod(hi, h) == 0) and h <= extent:
            return m
        m += 1
        if m > 60:
            raise WhitneyError("window corners must be dyadic rationals")


class _LevelIndex:
    """Sorted integer codes of the lattice tuples present at one level."""

    def __init__(self, lattice, ids):
        self.kmin = lattice.min(axis=0)
        self.shape = lattice.max(axis=0) - self.kmin + 1
        codes = self.encode(lattice)
        order = np.argsort(codes, kind="stable")
        self.codes = codes[order]
        self.ids = ids[order]

    def encode(self, k):
        rel = k - self.kmin
        code = np.zeros(len(k), dtype=np.int64)
        for j in range(k.shape[1]):
            code = code * self.shape[j] + rel[:, j]
        valid = np.all((rel >= 0) & (rel < self.shape), axis=1)
        return np.where(valid, code, -1)

    def lookup(self, k):
        code = self.encode(k)
        pos = np.searchsorted(self.codes, code)
        pos = np.minimum(pos, len(self.codes) - 1)
        hit = (code >= 0) & (self.codes[pos] == code)
        return np.where(hit, self.ids[pos], -1)


def classify(domain, side, level, lattice):
    """Per-cube (dist to boundary, centre in D, Whitney-admissible)."""
    h = 2.0 ** (-level)
    lo = lattice * h
    hi = lo + h
    dist = domain.cube_boundary_distance(lo, hi)
    inside = side_member(domain, lo + 0.5 * h, side)
    diam = math.sqrt(lattice.shape[1]) * h
    good = inside & (dist >= diam)
    return dist, inside, good


class WhitneyDecomposition:
    def __init__(self, domain, side, window, levels, lattice, dist, truncated, undersized, m_max, root_level):
        self.domain = domain
        self.side = side
        self.window = tuple(np.asarray(w, float) for w in window)
        self.levels = levels
        self.lattice = lattice
        self.dist = dist
        self.truncated = truncated
        self.undersized = undersized
        self.m_max = m_max
        self.root_level = root_level
        self.d = domain.d
        self.side_len = 2.0 ** (-levels.astype(float))
        self.lo = lattice * self.side_len[:, None]
        self.hi = self.lo + self.side_len[:, None]
        self.center = self.lo + 0.5 * self.side_len[:, None]
        self.diam = math.sqrt(self.d) * self.side_len
        self.volume = self.side_len ** self.d
        self.touches_window = np.any((self.lo <= self.window[0]) | (self.hi >= self.window[1]), axis=1)
        self._index = {}
        for m in np.unique(levels):
            ids = np.flatnonzero(levels == m)
            self._index[int(m)] = _LevelIndex(lattice[ids], ids)

    def __len__(self):
        return len(self.levels)

    def cube(self, i):
        return DyadicCube(int(self.levels[i]), tuple(int(k) for k in self.lattice[i]))

    def index_of(self, cube):
        idx = self._index.get(cube.level)
        if idx is None:
            return -1
        return int(idx.lookup(np.asarray([cube.lattice], dtype=np.int64))[0])

    @property
    def regular(self):
        """Cubes that are genuine Whitney cubes (not undersized)."""
        return ~self.undersized

    # ------------------------------------------------------------------ location

    def locate(self, x, include_undersized=False):
        """Index of the cube containing each point, -1 where not found.

        Points on a shared face go to the cube with the lexicographically
        smaller lattice tuple.
        """
        x = as_points(x, self.d)
        out = np.full(len(x), -1, dtype=np.int64)
        for rounding in ("lower", "upper"):
            todo = out < 0
            if not todo.any():
                break
            for m, idx in self._index.items():
                pts = x[todo]
                scaled = pts * 2.0 ** m
                k = (np.ceil(scaled) - 1 if rounding == "lower" else np.floor(scaled)).astype(np.int64)
                hit = idx.lookup(k)
                sub = np.flatnonzero(todo)
                found = hit >= 0
                out[sub[found]] = hit[found]
                todo[sub[found]] = False
                if not todo.any():
                    break
        if not include_undersized:
            out = np.where((out >= 0) & self.undersized[np.maximum(out, 0)], -1, out)
        return out

    # ------------------------------------------------------------------ filters

    def filter_dist_less(self, delta):
        return np.flatnonzero(self.regular & (self.dist < delta))

    def filter_diam_less(self, c):
        return np.flatnonzero(self.regular & (self.diam < c))

    # ------------------------------------------------------------------ neighbours

    @cached_property
    def _neighbor_csr(self):
        n = len(self)
        rows, cols = [], []
        levels = sorted(self._index)
        for m in levels:
            src = np.flatnonzero(self.levels == m)
            h = 2.0 ** (-m)
            lo_s = self.lo[src] - 0.5 * EPS_DILATE * h
            hi_s = self.hi[src] + 0.5 * EPS_DILATE * h
            for m2 in levels:
                if abs(m2 - m) > 3:
                    continue
                h2 = 2.0 ** (-m2)
                kmin = np.ceil(lo_s / h2).astype(np.int64) - 1
                kmax = np.floor(hi_s / h2).astype(np.int64)
                span = int((kmax - kmin).max()) + 1
                grid = np.stack(np.meshgrid(*[np.arange(span)] * self.d, indexing="ij"), -1).reshape(-1, self.d)
                cand = kmin[:, None, :] + grid[None, :, :]
                ok = np.all(cand <= kmax[:, None, :], axis=2)
                flat = cand.reshape(-1, self.d)
                hit = self._index[m2].lookup(flat).reshape(len(src), -1)
                hit = np.where(ok, hit, -1)
                r, c = np.nonzero(hit >= 0)
                rows.append(src[r])
                cols.append(hit[r, c])
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        ptr = np.searchsorted(rows, np.arange(n + 1))
        return ptr, cols

    def neighbors(self, i, include_undersized=False):
        """N(Q) = {R : closed R meets the dilated cube Q*}; always contains Q."""
        ptr, cols = self._neighbor_csr
        nb = cols[ptr[i]:ptr[i + 1]]
        if not include_undersized:
            nb = nb[~self.undersized[nb]]
        return nb

    @cached_property
    def neighbor_counts(self):
        ptr, cols = self._neighbor_csr
        counts = np.diff(ptr)
        return counts

    @cached_property
    def evaluable(self):
        """Regular cubes whose whole neighbourhood is resolved.

        The partition of unity on such a cube only involves genuine Whitney
        cubes, so values computed there are free of truncation artefacts.
        """
        ptr, cols = self._neighbor_csr
        bad = self.undersized | self.truncated
        nb_bad = np.zeros(len(self), dtype=bool)
        owner = np.repeat(np.arange(len(self)), np.diff(ptr))
        np.logical_or.at(nb_bad, owner, bad[cols])
        reach = 4.5 * self.side_len[:, None]
        inside_window = np.all((self.lo - reach >= self.window[0]) & (self.hi + reach <= self.window[1]), axis=1)
        if self.domain.bounded and self.side == "omega":
            inside_window |= np.all((self.domain.bbox[0] >= self.window[0]) & (self.domain.bbox[1] <= self.window[1]))
        return ~bad & ~nb_bad & inside_window

    def max_overlap(self, x):
        """Number of dilated cubes Q* containing each point."""
        x = as_points(x, self.d)
        idx = self.locate(x, include_undersized=True)
        count = np.zeros(len(x), dtype=np.int64)
        ptr, cols = self._neighbor_csr
        for i in np.unique(idx[idx >= 0]):
            sel = np.flatnonzero(idx == i)
            nb = cols[ptr[i]:ptr[i + 1]]
            pad = 0.5 * EPS_DILATE * self.side_len[nb]
            lo = self.lo[nb] - pad[:, None]
            hi = self.hi[nb] + pad[:, None]
            inside = np.all((x[sel, None, :] >= lo[None]) & (x[sel, None, :] <= hi[None]), axis=2)
            count[sel] = inside.sum(axis=1)
        return count

    def cube_distance(self, i, j):
        return box_box_distance(self.lo[i], self.hi[i], self.lo[j], self.hi[j])

    def stats(self):
        return {
            "side": self.side,
            "cubes": int(len(self)),
            "regular": int(self.regular.sum()),
            "undersized": int(self.undersized.sum()),
            "truncated": int(self.truncated.sum()),
            "levels": [int(self.levels.min()), int(self.levels.max())] if len(self) else [],
            "max_neighbors": int(self.neighbor_counts.max()) if len(self) else 0,
        }

    def export_records(self):
        """One record per cube, level-major then lattice-lexicographic."""
        order = np.lexsort(tuple(self.lattice[:, j] for j in reversed(range(self.d))) + (self.levels,))
        for i in order:
            yield {
                "m": int(self.levels[i]),
                "k": [int(v) for v in self.lattice[i]],
                "truncated": bool(self.truncated[i]),
                "undersized": bool(self.undersized[i]),
            }


def decompose(domain, side, window, m_max=None, root_level=None):
    """Whitney decomposition of ``D`` (Omega or int Omega^c) within ``window``."""
    if side not in SIDES:
        raise WhitneyError(f"side must be one of {SIDES}")
    if not domain.certified:
        raise UncertifiedDistanceError(f"{domain!r} does not provide certified boundary distances")
    d = domain.d
    m_max = DEFAULT_M_MAX[d] if m_max is None else int(m_max)
    lo_w, hi_w = (np.asarray(w, float).reshape(d) for w in window)
    m0 = root_level_for((lo_w, hi_w)) if root_level is None else int(root_level)
    if m_max < m0:
        raise WhitneyError("m_max is coarser than the root level")
    h0 = 2.0 ** (-m0)
    axes = [np.arange(int(round(lo_w[j] / h0)), int(round(hi_w[j] / h0)), dtype=np.int64) for j in range(d)]
    frontier = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    # a boundary-free window means D is all of R^d here: dist = inf everywhere
    probe = domain.cube_boundary_distance(frontier * h0, (frontier + 1) * h0)
    if np.all(np.isinf(probe)):
        raise WhitneyError("no boundary in reach: the distance to the boundary is infinite")

    out_lv, out_k, out_dist, out_trunc, out_under = [], [], [], [], []
    children = np.stack(np.meshgrid(*[np.arange(2)] * d, indexing="ij"), -1).reshape(-1, d)
    m = m0
    while len(frontier):
        dist, inside, good = classify(domain, side, m, frontier)
        if m == m0 and good.any():
            par = frontier[good] // 2
            _, _, pgood = classify(domain, side, m - 1, par)
            trunc = pgood
        else:
            trunc = np.zeros(int(good.sum()), dtype=bool)
        out_lv.append(np.full(int(good.sum()), m))
        out_k.append(frontier[good])
        out_dist.append(dist[good])
        out_trunc.append(trunc)
        out_under.append(np.zeros(int(good.sum()), dtype=bool))
        # cubes with positive distance and centre outside D lie entirely outside D
        open_ = ~good & ~((dist > 0) & ~inside)
        if m == m_max:
            n_u = int(open_.sum())
            out_lv.append(np.full(n_u, m))
            out_k.append(frontier[open_])
            out_dist.append(dist[open_])
            out_trunc.append(np.zeros(n_u, dtype=bool))
            out_under.append(np.ones(n_u, dtype=bool))
            break
        frontier = (2 * frontier[open_][:, None, :] + children[None, :, :]).reshape(-1, d)
        m += 1

    levels = np.concatenate(out_lv).astype(np.int64)
    lattice = np.concatenate(out_k).reshape(-1, d).astype(np.int64)
    if len(levels) == 0:
        raise WhitneyError("window does not meet D")
    return WhitneyDecomposition(domain, side, (lo_w, hi_w), levels, lattice, np.concatenate(out_dist),
                                np.concatenate(out_trunc), np.concatenate(out_under), m_max, m0)


def whitney_cube_at(domain, side, z, root_level, m_cap=60):
    """Level and lattice of the Whitney cube of D containing each point ``z``.

    Uses the same selection rule as ``decompose`` without building the whole
    family, so it reaches levels far below any explicit decomposition.
    Points that are not in D, or whose cube would be finer than ``m_cap``, get
    level -1 << 30.
    """
    z = as_points(z, domain.d)
    n = len(z)
    level = np.full(n, -(1 << 30), dtype=np.int64)
    lattice = np.zeros((n, domain.d), dtype=np.int64)
    todo = side_member(domain, z, side)
    for m in range(root_level, m_cap + 1):
        if not todo.any():
            break
        sel = np.flatnonzero(todo)
        scaled = z[sel] * 2.0 ** m
        k = np.floor(scaled).astype(np.int64)
        # tie toward the smaller lattice tuple on faces
        on_face = scaled == np.floor(scaled)
        k = np.where(on_face, k - 1, k)
        _, _, good = classify(domain, side, m, k)
        level[sel[good]] = m
        lattice[sel[good]] = k[good]
        todo[sel[good]] = False
    return level, lattice
