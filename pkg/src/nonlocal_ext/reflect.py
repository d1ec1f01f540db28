"""Reflected cubes: Q in W(D) is paired with a Whitney cube of the opposite side.

Construction per source cube Q:

1. ``y_Q``: nearest boundary point to the centre of Q.
2. search ``B(y_Q, diam Q / M)`` for a point ``z`` on the target side with
   ``dist(z, dD) >= kappa diam Q / M``.
3. the reflected cube is the Whitney cube of the target side containing ``z``.
4. optional shrink: if ``diam Q~ > lam diam Q``, walk from the centre of Q~
   toward ``y_Q`` until the boundary distance equals ``lam diam Q`` and take
   the Whitney cube there instead.

Target cubes are located with the implicit rule of ``whitney_cube_at`` so
they can be much finer than any explicit decomposition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .geometry import INF, box_box_distance, point_box_distance
from .whitney import SIDES, WhitneyDecomposition, decompose, side_member, whitney_cube_at

LAMBDA_DEFAULT = 1.0 / 125.0
KAPPA_DEFAULT = 0.3
SHRINK_MARGIN = 0.99


def other_side(side):
    return SIDES[1 - SIDES.index(side)]


def side_inr(domain, side):
    return domain.inr_omega if side == "omega" else domain.inr_complement


def default_M(domain, source_side):
    """Threshold multiplier.

    From Omega into the complement: 1 if the complement has infinite inner
    radius, else ``2 sqrt(d) inr(Omega) / inr(Omega^c)``.  From the complement
    into Omega the multiplier is 1.
    """
    if source_side == "complement":
        return 1.0
    if math.isinf(domain.inr_complement):
        return 1.0
    return 2.0 * math.sqrt(domain.d) * domain.inr_omega / domain.inr_complement


@dataclass(frozen=True)
class ThicknessParams:
    M: float | None = None
    lam: float | None = LAMBDA_DEFAULT
    kappa: float = KAPPA_DEFAULT
    n_search: int | None = None

    def __post_init__(self):
        if self.lam is not None and not 0 < self.lam <= 1:
            raise ValueError("lambda must lie in (0, 1]")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if self.M is not None and not self.M > 0:
            raise ValueError("M must be positive")

    def resolved_M(self, domain, source_side):
        return default_M(domain, source_side) if self.M is None else float(self.M)


@dataclass
class ReflectionFailure:
    cube: int
    best_ratio: float
    reason: str


def _side_depth(domain, z, side):
    return np.where(side_member(domain, z, side), domain.delta(z), 0.0)


def unit_ball_pattern(d, n, seed=0):
    """First ``n`` points of a scrambled Sobol sequence mapped into the unit ball."""
    sob = qmc.Sobol(d, scramble=True, seed=seed).random(int(2 ** math.ceil(math.log2(n))))[:n]
    if d == 1:
        return 2.0 * sob - 1.0
    rad = np.sqrt(sob[:, 0])
    ang = 2.0 * np.pi * sob[:, 1]
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def _pattern_dirs(d):
    dirs = np.eye(d)
    dirs = np.concatenate([dirs, -dirs])
    if d == 2:
        dirs = np.concatenate([dirs, np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]]) / math.sqrt(2)])
    return dirs


def search_deep_points(domain, side, centers, radii, kappa, n_search, chunk=1 << 20):
    """Find ``z`` in ``B(center, radius)`` with large boundary distance on ``side``.

    Sobol prefixes of doubling length are scanned until some sample reaches
    ``kappa * radius`` (or the full pattern is used); the incumbent is then
    polished by a shrinking pattern search.  Returns ``(z, depth)``.
    """
    d = domain.d
    pattern = unit_ball_pattern(d, n_search)
    n = len(centers)
    best_z = centers.copy()
    best = np.zeros(n)
    start = 0
    size = min(n_search, 32 * 2 ** d)
    todo = np.arange(n)
    while len(todo) and start < n_search:
        stop = min(n_search, start + size)
        block = pattern[start:stop]
        per = max(1, chunk // len(block))
        for c0 in range(0, len(todo), per):
            ids = todo[c0:c0 + per]
            z = centers[ids, None, :] + radii[ids, None, None] * block[None, :, :]
            dep = _side_depth(domain, z.reshape(-1, d), side).reshape(len(ids), -1)
            j = np.argmax(dep, axis=1)
            val = dep[np.arange(len(ids)), j]
            upd = val > best[ids]
            best[ids[upd]] = val[upd]
            best_z[ids[upd]] = z[np.arange(len(ids)), j][upd]
        todo = todo[best[todo] < kappa * radii[todo]]
        start = stop
        size = stop
    # pattern-search polish
    dirs = _pattern_dirs(d)
    step = radii / 8.0
    for _ in range(24):
        cand = best_z[:, None, :] + step[:, None, None] * dirs[None, :, :]
        inball = np.linalg.norm(cand - centers[:, None, :], axis=2) <= radii[:, None]
        dep = _side_depth(domain, cand.reshape(-1, d), side).reshape(n, -1)
        dep = np.where(inball, dep, -1.0)
        j = np.argmax(dep, axis=1)
        val = dep[np.arange(n), j]
        upd = val > best
        best = np.where(upd, val, best)
        best_z = np.where(upd[:, None], cand[np.arange(n), j], best_z)
        step = np.where(upd, step, step / 2)
    return best_z, best


def shrink_walk(domain, side, start, toward, level, iters=200, rtol=1e-3):
    """First point on the segment ``start -> toward`` with distance ``level``.

    Sphere tracing on the 1-Lipschitz distance function: every step moves by
    the current excess, so the first crossing is never overshot.
    """
    d = domain.d
    seg = toward - start
    length = np.linalg.norm(seg, axis=1)
    unit = seg / np.where(length > 0, length, 1.0)[:, None]
    t = np.zeros(len(start))
    for _ in range(iters):
        x = start + t[:, None] * unit
        excess = _side_depth(domain, x, side) - level
        done = excess <= rtol * level
        if done.all():
            break
        t = np.where(done, t, np.minimum(t + np.maximum(excess, 0.0), length))
    return start + t[:, None] * unit


@dataclass
class ReflectionMap:
    source: WhitneyDecomposition
    target_domain: object
    target_side: str
    params: ThicknessParams
    M: float
    cubes: np.ndarray  # source cube ids in the table
    level: np.ndarray  # target level per entry (-1 << 30 if failed)
    lattice: np.ndarray
    y: np.ndarray  # nearest boundary point per entry
    z: np.ndarray  # point inside the reflected cube
    ratios: np.ndarray  # (n, 4) certificate ratios
    failures: list = field(default_factory=list)
    excluded: np.ndarray = None  # source cubes removed by the size pre-filter

    def __post_init__(self):
        self._row = {int(c): i for i, c in enumerate(self.cubes)}

    @property
    def ok(self):
        return self.level > -(1 << 29)

    @property
    def side_len(self):
        return np.where(self.ok, 2.0 ** (-np.where(self.ok, self.level, 0).astype(float)), np.nan)

    @property
    def lo(self):
        return self.lattice * self.side_len[:, None]

    @property
    def hi(self):
        return self.lo + self.side_len[:, None]

    @property
    def diam(self):
        return math.sqrt(self.source.d) * self.side_len

    def row(self, cube):
        return self._row.get(int(cube), -1)

    def target_box(self, cube):
        i = self.row(cube)
        if i < 0 or not self.ok[i]:
            raise KeyError(f"no reflected cube for source cube {cube}")
        return self.lo[i], self.hi[i]

    @property
    def C_achieved(self):
        good = self.ok
        return float(np.max(self.ratios[good])) if good.any() else INF

    def five_quantities(self):
        src = self.cubes[self.ok]
        i = np.flatnonzero(self.ok)
        W = self.source
        q = np.stack([
            W.diam[src],
            self.diam[i],
            W.dist[src],
            self.target_domain.cube_boundary_distance(self.lo[i], self.hi[i]),
            box_box_distance(W.lo[src], W.hi[src], self.lo[i], self.hi[i]),
        ], axis=1)
        return q

    def max_overlap(self):
        """Largest number of source cubes sharing one reflected cube."""
        keys = np.concatenate([self.level[self.ok, None], self.lattice[self.ok]], axis=1)
        if len(keys) == 0:
            return 0
        _, counts = np.unique(keys, axis=0, return_counts=True)
        return int(counts.max())

    def confinement_ok(self):
        """Reflected cubes lie where the target distance is below inr of the source side."""
        bound = side_inr(self.target_domain, self.source.side)
        i = np.flatnonzero(self.ok)
        far = self.target_domain.cube_boundary_distance(self.lo[i], self.hi[i]) + self.diam[i]
        return far < bound

    def records(self):
        for i, c in enumerate(self.cubes):
            if not self.ok[i]:
                continue
            yield {
                "source": int(c),
                "target_m": int(self.level[i]),
                "target_k": [int(v) for v in self.lattice[i]],
                "ratios": [float(r) for r in self.ratios[i]],
            }


def build_reflection(source, params=None, target_side=None, target_domain=None, cubes=None):
    """Reflection table for the cubes of ``source`` (default: all prefiltered regular cubes)."""
    params = params or ThicknessParams()
    domain = source.domain if target_domain is None else target_domain
    target_side = other_side(source.side) if target_side is None else target_side
    d = domain.d
    M = params.resolved_M(domain, source.side)
    limit = M * side_inr(domain, target_side)
    cand = np.flatnonzero(source.regular) if cubes is None else np.asarray(cubes, dtype=np.int64)
    keep = source.diam[cand] < limit
    excluded = cand[~keep]
    ids = cand[keep]
    n_search = params.n_search or 1024 * 2 ** d

    xq = source.center[ids]
    y = domain.nearest_boundary(xq)
    r = source.diam[ids] / M
    z, depth = search_deep_points(domain, target_side, y, r, params.kappa, n_search)
    passed = depth >= params.kappa * r
    root = source.root_level
    level, lattice = whitney_cube_at(domain, target_side, z, root)
    if params.lam is not None:
        h = 2.0 ** (-level.astype(float))
        big = passed & (level > -(1 << 29)) & (math.sqrt(d) * h > params.lam * source.diam[ids])
        if big.any():
            xt = (lattice[big] + 0.5) * h[big, None]
            target = SHRINK_MARGIN * params.lam * source.diam[ids][big]
            z2 = shrink_walk(domain, target_side, xt, y[big], target)
            lv2, lt2 = whitney_cube_at(domain, target_side, z2, root)
            z[big], level[big], lattice[big] = z2, lv2, lt2
    ok = passed & (level > -(1 << 29))
    level = np.where(ok, level, -(1 << 30))

    failures = [ReflectionFailure(int(c), float(dep / rr), "no deep point in search ball" if not p else "target cube unresolved")
                for c, dep, rr, p, o in zip(ids, depth, r, passed, ok) if not o]
    refl = ReflectionMap(source, domain, target_side, params, M, ids, level, lattice, y, z,
                         np.full((len(ids), 4), np.nan), failures, excluded)
    i = np.flatnonzero(ok)
    if len(i):
        src = ids[i]
        dq = source.diam[src]
        dt = refl.diam[i]
        distq = source.dist[src]
        distt = domain.cube_boundary_distance(refl.lo[i], refl.hi[i])
        gap = box_box_distance(source.lo[src], source.hi[src], refl.lo[i], refl.hi[i])
        refl.ratios[i] = np.stack([dq / dt, dt / dq, gap / distq, distq / distt], axis=1)
    return refl


def cascade_violations(refl, W=None):
    """Triples Q1, Q2 in N(Q1), Q3 in N(Q2) whose reflected Q3 reaches beyond dist(Q1, dD).

    Checks ``sup_{z in Q3~} dist(z, dD) <= dist(Q1, dD)`` through the bound
    ``dist(Q3~, dD) + diam Q3~``.  Only Q1 whose second neighbourhood is fully
    reflected are examined; returns ``(checked, violations)``.
    """
    W = refl.source if W is None else W
    far = np.full(len(W), np.nan)
    i = np.flatnonzero(refl.ok)
    far[refl.cubes[i]] = refl.target_domain.cube_boundary_distance(refl.lo[i], refl.hi[i]) + refl.diam[i]
    checked, bad = 0, []
    for q1 in np.flatnonzero(W.regular):
        ring2 = np.unique(np.concatenate([W.neighbors(q2, include_undersized=True) for q2 in W.neighbors(q1, include_undersized=True)]))
        vals = far[ring2]
        if np.isnan(vals).any():
            continue
        checked += 1
        if vals.max() > W.dist[q1]:
            bad.append(int(q1))
    return checked, bad


@dataclass
class ThicknessReport:
    side: str
    pass_fraction: float
    C_achieved: float
    five_quantity_C: float
    N_overlap: int
    failures: list
    n_entries: int
    excluded: int
    passed: bool

    def as_dict(self):
        return {
            "side": self.side,
            "pass": self.passed,
            "pass_fraction": self.pass_fraction,
            "C_achieved": self.C_achieved,
            "five_quantity_C": self.five_quantity_C,
            "N_overlap": self.N_overlap,
            "entries": self.n_entries,
            "excluded_by_size": self.excluded,
            "failures": [f.__dict__ for f in self.failures],
        }


def pairwise_ratio_max(q):
    q = np.asarray(q, float)
    hi = q.max(axis=1)
    lo = q.min(axis=1)
    return float(np.max(hi / lo)) if len(q) else INF


def thickness_audit(domain, side, window, m_max=None, params=None, W=None, skip=None):
    """Run the reflection construction in the requested direction.

    ``side="exterior"`` reflects W(Omega) into the complement,
    ``side="interior"`` reflects W(int Omega^c) into Omega.  Cubes flagged by
    ``skip(W) -> bool mask`` are left out of the audit, as are cubes meeting
    the domain's unresolved core.
    """
    if side not in ("interior", "exterior"):
        raise ValueError("side must be 'interior' or 'exterior'")
    source_side = "omega" if side == "exterior" else "complement"
    if W is None:
        W = decompose(domain, source_side, window, m_max)
    mask = W.regular & ~W.truncated
    if skip is not None:
        mask &= ~skip(W)
    if domain.unresolved_core is not None:
        c, rad = domain.unresolved_core
        mask &= point_box_distance(c, W.lo, W.hi) >= rad
    refl = build_reflection(W, params, cubes=np.flatnonzero(mask))
    n = len(refl.cubes)
    fails = refl.failures
    frac = 1.0 - len(fails) / n if n else 1.0
    q = refl.five_quantities()
    return ThicknessReport(side, frac, refl.C_achieved, pairwise_ratio_max(q), refl.max_overlap(),
                           fails, n, len(refl.excluded), len(fails) == 0), refl
