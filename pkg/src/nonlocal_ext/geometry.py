"""Open sets, boundary distances, regions and geometric probes.

All point arguments are arrays of shape ``(n, d)``; a single point may be
passed as a 1-D array of length ``d``.  Distances are always measured to the
boundary of the open set (``delta(x) = dist(x, dOmega)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

INF = math.inf


class GeometryError(ValueError):
    pass


def as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 or x.size != 1 else x.reshape(1, 1)
    if x.shape[-1] != d:
        raise GeometryError(f"expected points of dimension {d}, got shape {x.shape}")
    return x


def point_box_distance(x, lo, hi):
    """Euclidean distance from points ``x`` to closed boxes ``[lo, hi]`` (broadcasting)."""
    gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


def box_box_distance(lo1, hi1, lo2, hi2):
    gap = np.maximum(np.maximum(lo1 - hi2, lo2 - hi1), 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


def _sphere_box_distance(lo, hi, center, radius):
    near = point_box_distance(center, lo, hi)
    far_corner = np.maximum(np.abs(lo - center), np.abs(hi - center))
    far = np.sqrt(np.sum(far_corner * far_corner, axis=-1))
    out = np.zeros_like(near)
    out = np.where(radius < near, near - radius, out)
    out = np.where(radius > far, radius - far, out)
    return out


def _point_segment(x, a, b):
    """Distance and nearest point from points ``x`` (n,2) to segment ``ab``."""
    ab = b - a
    t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
    q = a + t[:, None] * ab
    return np.linalg.norm(x - q, axis=1), q


def _segment_hits_box(a, b, lo, hi):
    """Liang-Barsky test whether segment ``ab`` meets the closed boxes ``[lo, hi]``."""
    n = lo.shape[0]
    t0 = np.zeros(n)
    t1 = np.ones(n)
    ok = np.ones(n, dtype=bool)
    for j in range(2):
        dj = b[j] - a[j]
        if dj == 0.0:
            ok &= (a[j] >= lo[:, j]) & (a[j] <= hi[:, j])
            continue
        ta = (lo[:, j] - a[j]) / dj
        tb = (hi[:, j] - a[j]) / dj
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    return ok & (t0 <= t1)


@dataclass(frozen=True)
class RegionSpec:
    """Subsets of R^d used as integration domains.

    ``tag`` is one of ``Omega``, ``OmegaComplement``, ``OmegaIntDelta``,
    ``OmegaExtEps``, ``OmegaUnionExt`` (Omega together with the exterior collar
    of depth ``eps``) and ``FullSpace``.
    """

    tag: str
    width: float = INF

    TAGS = ("Omega", "OmegaComplement", "OmegaIntDelta", "OmegaExtEps", "OmegaUnionExt", "FullSpace")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise GeometryError(f"unknown region tag {self.tag!r}")
        if not self.width > 0:
            raise GeometryError("region width must be positive")

    # which sides of the boundary the region can touch
    @property
    def uses_omega(self):
        return self.tag in ("Omega", "OmegaIntDelta", "OmegaUnionExt", "FullSpace")

    @property
    def uses_complement(self):
        return self.tag in ("OmegaComplement", "OmegaExtEps", "OmegaUnionExt", "FullSpace")

    def omega_depth(self):
        """Largest boundary distance admitted on the Omega side."""
        return self.width if self.tag == "OmegaIntDelta" else INF

    def complement_depth(self):
        return self.width if self.tag in ("OmegaExtEps", "OmegaUnionExt") else INF

    def contains(self, domain, x, inside=None, delta=None):
        x = as_points(x, domain.d)
        inside = domain.contains(x) if inside is None else inside
        if self.tag == "FullSpace":
            return np.ones(len(x), dtype=bool)
        if self.tag == "Omega":
            return inside
        if self.tag == "OmegaComplement":
            return ~inside
        delta = domain.delta(x) if delta is None else delta
        if self.tag == "OmegaIntDelta":
            # non-strict, as the interior collar is defined
            return inside & (delta <= self.width)
        ext = ~inside & (delta < self.width)
        if self.tag == "OmegaExtEps":
            return ext
        return inside | ext

    def label(self):
        if self.tag in ("OmegaIntDelta", "OmegaExtEps", "OmegaUnionExt"):
            return f"{self.tag}({self.width:g})"
        return self.tag


@dataclass(frozen=True)
class SobolevParams:
    s: float
    p: float

    def __post_init__(self):
        if not (0.0 < self.s <= 1.0):
            raise GeometryError(f"s must lie in (0, 1], got {self.s}")
        if not (1.0 <= self.p < INF):
            raise GeometryError(f"p must lie in [1, inf), got {self.p}")

    @property
    def sp(self):
        return self.s * self.p


class Domain:
    """Base class for an open set Omega in R^d (d = 1 or 2).

    Subclasses implement ``contains``, ``delta`` and ``nearest_boundary``.
    ``cube_boundary_distance`` returns the distance from closed boxes to the
    boundary; the base version is only a lower bound (``exact_cubes`` False).
    """

    name = "domain"
    certified = True
    exact_cubes = False
    # (center, radius) of a ball where the finite model stops resolving the
    # intended set, or None
    unresolved_core = None

    def __init__(self, d, bbox, inr_omega, inr_complement, params=None):
        if d not in (1, 2):
            raise GeometryError("only d = 1 and d = 2 are supported")
        self.d = d
        self.bbox = (np.asarray(bbox[0], float), np.asarray(bbox[1], float))
        self.inr_omega = float(inr_omega)
        self.inr_complement = float(inr_complement)
        self.params = dict(params or {})

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.bbox[0])) and np.all(np.isfinite(self.bbox[1])))

    def contains(self, x):
        raise NotImplementedError

    def delta(self, x):
        raise NotImplementedError

    def nearest_boundary(self, x):
        raise NotImplementedError

    def distance_bounds(self, x):
        dist = self.delta(x)
        return dist, dist

    def interior_seeds(self):
        """Points deep inside Omega that probes should always try (may be empty)."""
        return np.zeros((0, self.d))

    def cube_boundary_distance(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        center = 0.5 * (lo + hi)
        half_diag = 0.5 * np.linalg.norm(hi - lo, axis=1)
        lower, _ = self.distance_bounds(center)
        return np.maximum(lower - half_diag, 0.0)

    def describe(self):
        return {"name": self.name, "d": self.d, **self.params}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{type(self).__name__}(d={self.d}{', ' if args else ''}{args})"


class IntervalDomain(Domain):
    """Open interval (a, b) in R, either end may be infinite."""

    name = "interval"
    exact_cubes = True

    def __init__(self, a, b, name="interval", params=None):
        if not a < b:
            raise GeometryError("interval needs a < b")
        self.a, self.b = float(a), float(b)
        length = self.b - self.a
        super().__init__(1, ([self.a], [self.b]), length / 2, INF, params or {"a": a, "b": b})
        self.name = name
        self._ends = np.array([e for e in (self.a, self.b) if math.isfinite(e)])

    def contains(self, x):
        x = as_points(x, 1)[:, 0]
        return (x > self.a) & (x < self.b)

    def delta(self, x):
        x = as_points(x, 1)[:, 0]
        return np.min(np.abs(x[:, None] - self._ends[None, :]), axis=1)

    def nearest_boundary(self, x):
        x = as_points(x, 1)[:, 0]
        # argmin keeps the first (smaller) endpoint on ties
        idx = np.argmin(np.abs(x[:, None] - self._ends[None, :]), axis=1)
        return self._ends[idx][:, None]

    def cube_boundary_distance(self, lo, hi):
        lo = np.atleast_2d(lo)[:, 0]
        hi = np.atleast_2d(hi)[:, 0]
        e = self._ends[None, :]
        gap = np.maximum(np.maximum(lo[:, None] - e, e - hi[:, None]), 0.0)
        return gap.min(axis=1)


class HalfSpaceDomain(Domain):
    """{x : x_1 < 0}."""

    name = "half_space"
    exact_cubes = True

    def __init__(self, d):
        lo = [-INF] * d
        hi = [0.0] + [INF] * (d - 1)
        super().__init__(d, (lo, hi), INF, INF, {})

    def contains(self, x):
        return as_points(x, self.d)[:, 0] < 0.0

    def delta(self, x):
        return np.abs(as_points(x, self.d)[:, 0])

    def nearest_boundary(self, x):
        y = as_points(x, self.d).copy()
        y[:, 0] = 0.0
        return y

    def cube_boundary_distance(self, lo, hi):
        lo = np.atleast_2d(lo)[:, 0]
        hi = np.atleast_2d(hi)[:, 0]
        return np.maximum(np.maximum(lo, -hi), 0.0)


class BallDomain(Domain):
    name = "ball"
    exact_cubes = True

    def __init__(self, d, radius=1.0, center=None):
        if not radius > 0:
            raise GeometryError("radius must be positive")
        self.center = np.zeros(d) if center is None else np.asarray(center, float)
        self.radius = float(radius)
        super().__init__(d, (self.center - radius, self.center + radius), radius, INF,
                         {"radius": radius})

    def contains(self, x):
        x = as_points(x, self.d)
        return np.linalg.norm(x - self.center, axis=1) < self.radius

    def delta(self, x):
        x = as_points(x, self.d)
        return np.abs(np.linalg.norm(x - self.center, axis=1) - self.radius)

    def nearest_boundary(self, x):
        v = as_points(x, self.d) - self.center
        r = np.linalg.norm(v, axis=1)
        u = np.zeros_like(v)
        u[:, 0] = 1.0  # the centre itself maps along the first axis
        ok = r > 0
        u[ok] = v[ok] / r[ok, None]
        return self.center + self.radius * u

    def cube_boundary_distance(self, lo, hi):
        return _sphere_box_distance(np.atleast_2d(lo), np.atleast_2d(hi), self.center, self.radius)


class PolygonDomain(Domain):
    """A simple polygon in R^2 given by its vertices (counter-clockwise)."""

    exact_cubes = True

    def __init__(self, vertices, inr_omega, name="polygon", params=None):
        self.vertices = np.asarray(vertices, float)
        self.name = name
        super().__init__(2, (self.vertices.min(0), self.vertices.max(0)), inr_omega, INF, params)
        self._seg_a = self.vertices
        self._seg_b = np.roll(self.vertices, -1, axis=0)

    def contains(self, x):
        x = as_points(x, 2)
        px, py = x[:, 0], x[:, 1]
        inside = np.zeros(len(x), dtype=bool)
        for a, b in zip(self._seg_a, self._seg_b):
            cond = (a[1] > py) != (b[1] > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= cond & (px < xint)
        return inside & (self.delta(x) > 0)

    def _nearest(self, x):
        best = np.full(len(x), INF)
        point = np.zeros_like(x)
        for a, b in zip(self._seg_a, self._seg_b):
            dist, q = _point_segment(x, a, b)
            better = dist < best  # strict: earlier segments win ties
            best = np.where(better, dist, best)
            point[better] = q[better]
        return best, point

    def delta(self, x):
        return self._nearest(as_points(x, 2))[0]

    def nearest_boundary(self, x):
        return self._nearest(as_points(x, 2))[1]

    def cube_boundary_distance(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        best = np.full(len(lo), INF)
        corners = [np.stack([c0, c1], axis=1) for c0 in (lo[:, 0], hi[:, 0]) for c1 in (lo[:, 1], hi[:, 1])]
        for a, b in zip(self._seg_a, self._seg_b):
            hit = _segment_hits_box(a, b, lo, hi)
            cand = np.minimum(point_box_distance(a, lo, hi), point_box_distance(b, lo, hi))
            for c in corners:
                cand = np.minimum(cand, _point_segment(c, a, b)[0])
            best = np.minimum(best, np.where(hit, 0.0, cand))
        return best


class BallUnionDomain(Domain):
    """Finite union of pairwise disjoint open balls."""

    exact_cubes = True

    def __init__(self, d, centers, radii, name="ball_union", params=None, bbox=None):
        self.centers = np.asarray(centers, float).reshape(-1, d)
        self.radii = np.asarray(radii, float)
        if len(self.centers) == 0:
            raise GeometryError("empty ball union")
        self.name = name
        if bbox is None:
            bbox = ((self.centers - self.radii[:, None]).min(0), (self.centers + self.radii[:, None]).max(0))
        super().__init__(d, bbox, self.radii.max(), INF, params)
        # one tree per distinct radius: within a group the nearest centre decides
        self._groups = []
        for r in np.unique(self.radii):
            idx = np.flatnonzero(self.radii == r)
            self._groups.append((r, idx, cKDTree(self.centers[idx])))

    def _nearest_ball(self, x):
        best = np.full(len(x), INF)
        which = np.zeros(len(x), dtype=int)
        for r, idx, tree in self._groups:
            dist, j = tree.query(x)
            gap = np.abs(dist - r)
            better = gap < best
            best = np.where(better, gap, best)
            which = np.where(better, idx[j], which)
        return best, which

    def contains(self, x):
        x = as_points(x, self.d)
        _, which = self._nearest_ball(x)
        return np.linalg.norm(x - self.centers[which], axis=1) < self.radii[which]

    def delta(self, x):
        return self._nearest_ball(as_points(x, self.d))[0]

    def nearest_boundary(self, x):
        x = as_points(x, self.d)
        _, which = self._nearest_ball(x)
        v = x - self.centers[which]
        r = np.linalg.norm(v, axis=1)
        u = np.zeros_like(v)
        u[:, 0] = 1.0
        ok = r > 0
        u[ok] = v[ok] / r[ok, None]
        return self.centers[which] + self.radii[which, None] * u

    def interior_seeds(self):
        return self.centers.copy()

    def cube_boundary_distance(self, lo, hi, k=8):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        center = 0.5 * (lo + hi)
        half = 0.5 * np.linalg.norm(hi - lo, axis=1)
        best = np.full(len(lo), INF)
        todo = np.zeros(len(lo), dtype=bool)
        for r, idx, tree in self._groups:
            kk = min(k, len(idx))
            dist, j = tree.query(center, k=kk)
            dist = dist.reshape(len(lo), kk)
            j = j.reshape(len(lo), kk)
            for col in range(kk):
                cand = _sphere_box_distance(lo, hi, self.centers[idx[j[:, col]]], r)
                best = np.minimum(best, cand)
            if kk < len(idx):
                # an unseen ball of this group could still be closer to the cube
                todo |= dist[:, -1] - r - half <= best
        for i in np.flatnonzero(todo):
            cand = _sphere_box_distance(lo[i][None, :], hi[i][None, :], self.centers, self.radii)
            best[i] = cand.min()
        return best


def annuli_centers(n, d=2):
    """A maximal family of centres in the annulus A_n, balls of radius a_n pairwise disjoint.

    Centres are placed greedily on concentric rings, then candidate points of a
    fine polar grid are added greedily until none fits; the result is
    deterministic.
    """
    if d != 2:
        raise GeometryError("the annuli example lives in R^2")
    a = 2.0 ** (-n - 1) / n
    r_in, r_out = 2.0 ** (-n - 1) + a, 2.0 ** (-n) - a
    centers = []
    radii = np.arange(r_in, r_out + 1e-12 * a, 2.0 * a)
    for rho in radii:
        # chord between neighbours on the ring must be at least 2a
        m = max(1, int(math.floor(math.pi / math.asin(min(1.0, a / rho)) + 1e-9)))
        offset = 0.5 * (len(centers) % 2)
        for j in range(m):
            t = 2 * math.pi * (j + offset) / m
            centers.append((rho * math.cos(t), rho * math.sin(t)))
    if not centers:
        # the annulus is thinner than one ball of radius a (happens for n = 1)
        return np.zeros((0, 2)), a
    pts = np.array(centers)
    # greedy completion to a maximal set
    cand = []
    nr = max(4, int((r_out - r_in) / (0.25 * a)) + 1)
    for rho in np.linspace(r_in, r_out, nr):
        m = int(2 * math.pi * rho / (0.25 * a)) + 1
        t = 2 * math.pi * np.arange(m) / m
        cand.append(np.stack([rho * np.cos(t), rho * np.sin(t)], axis=1))
    cand = np.concatenate(cand)
    tree_pts = list(pts)
    tree = cKDTree(pts)
    for c in cand:
        if tree.query(c)[0] >= 2 * a:
            dnew = min((np.linalg.norm(c - q) for q in tree_pts[len(pts):]), default=INF)
            if dnew >= 2 * a:
                tree_pts.append(c)
    return np.array(tree_pts), a


def make_annuli_balls(n_max=6, d=2):
    centers, radii = [], []
    for n in range(1, n_max + 1):
        c, a = annuli_centers(n, d)
        if len(c) == 0:
            continue
        centers.append(c)
        radii.append(np.full(len(c), a / 2))
    centers = np.concatenate(centers)
    radii = np.concatenate(radii)
    dom = BallUnionDomain(d, centers, radii, name="annuli_balls", params={"n_max": n_max},
                          bbox=(np.full(d, -0.5), np.full(d, 0.5)))
    # annuli with n > n_max are absent, so B(0, 2^-n_max) is not modelled
    dom.unresolved_core = (np.zeros(d), 2.0 ** (-n_max))
    return dom


BUILTIN_NAMES = ("interval", "ball", "box", "l_shape", "half_space", "annuli_balls")


def make_builtin_domain(name, d=None, **params):
    """Construct a builtin domain by name.

    >>> make_builtin_domain("ball", d=2, radius=1).inr_omega
    1.0
    """
    if name not in BUILTIN_NAMES:
        raise GeometryError(f"unknown builtin domain {name!r}; choose from {BUILTIN_NAMES}")
    for key, val in params.items():
        if key not in ("n_max",) and isinstance(val, (int, float)) and not val > 0:
            raise GeometryError(f"{name}: parameter {key} must be positive")
    if name == "interval":
        half = params.get("half_length", 1.0)
        return IntervalDomain(-half, half, params={"half_length": half})
    if name == "ball":
        d = d or 2
        r = params.get("radius", 1.0)
        if d == 1:
            dom = IntervalDomain(-r, r, name="ball", params={"radius": r})
            return dom
        return BallDomain(d, r)
    if name == "box":
        d = d or 2
        h = params.get("half_side", 1.0)
        if d == 1:
            return IntervalDomain(-h, h, name="box", params={"half_side": h})
        verts = [(-h, -h), (h, -h), (h, h), (-h, h)]
        return PolygonDomain(verts, h, name="box", params={"half_side": h})
    if name == "l_shape":
        if d not in (None, 2):
            raise GeometryError("l_shape is two-dimensional")
        h = params.get("half_side", 1.0)
        verts = [(-h, -h), (h, -h), (h, 0.0), (0.0, 0.0), (0.0, h), (-h, h)]
        # largest disc touches the two outer walls and the re-entrant corner
        inr = h * (2.0 - math.sqrt(2.0))
        return PolygonDomain(verts, inr, name="l_shape", params={"half_side": h})
    if name == "half_space":
        return HalfSpaceDomain(d or 1)
    n_max = int(params.get("n_max", 6))
    if n_max < 1:
        raise GeometryError("annuli_balls needs n_max >= 1")
    return make_annuli_balls(n_max, d or 2)


def delta(x, domain):
    """dist(x, boundary of domain)."""
    return domain.delta(x)


def kernel_denominator(x, y, domain, params):
    """(|x - y| + delta_x + delta_y)^(d + sp), vectorised over rows."""
    x = as_points(x, domain.d)
    y = as_points(y, domain.d)
    base = np.linalg.norm(x - y, axis=1) + domain.delta(x) + domain.delta(y)
    with np.errstate(divide="ignore"):
        return base ** (domain.d + params.sp)


# --------------------------------------------------------------------------- probes


@dataclass
class PlumpnessReport:
    kappa: float
    side: str
    r_grid: np.ndarray
    points: np.ndarray
    best_ratio: np.ndarray  # (n_points, n_r)
    passed: np.ndarray = field(init=False)

    def __post_init__(self):
        self.passed = self.best_ratio >= self.kappa

    @property
    def best_kappa_per_r(self):
        return self.best_ratio.min(axis=0)

    @property
    def all_pass(self):
        return bool(self.passed.all())


def _side_depth(domain, z, side):
    """Distance to the boundary for points on the requested side, else 0."""
    inside = domain.contains(z)
    on_side = inside if side == "omega" else ~inside
    return np.where(on_side, domain.delta(z), 0.0)


def inscribed_ball_ratio(domain, x, r, side="omega", n_samples=None, seed=0, refine=8):
    """max over z in the closed ball B(x, r) of dist(z, boundary)/r with z on ``side``.

    Deterministic scrambled-Sobol search over the ball followed by a shrinking
    pattern search around the incumbent.
    """
    d = domain.d
    n_samples = n_samples or 1024 * 2 ** d
    x = np.asarray(x, float).reshape(d)
    sob = qmc.Sobol(d, scramble=True, seed=seed).random(n_samples)
    if d == 1:
        z = x + r * (2 * sob - 1)
    else:
        rad = r * np.sqrt(sob[:, 0])
        ang = 2 * np.pi * sob[:, 1]
        z = x + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    seeds = domain.interior_seeds() if side == "omega" else np.zeros((0, d))
    if len(seeds):
        z = np.concatenate([z, seeds[np.linalg.norm(seeds - x, axis=1) <= r]])
    z = np.concatenate([z, x[None, :]])
    depth = np.minimum(_side_depth(domain, z, side), INF)
    i = int(np.argmax(depth))
    best_z, best = z[i], depth[i]
    step = r / 8
    dirs = np.eye(d)
    dirs = np.concatenate([dirs, -dirs] + ([np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]]) / math.sqrt(2)] if d == 2 else []))
    for _ in range(refine * 4):
        cand = best_z + step * dirs
        cand = cand[np.linalg.norm(cand - x, axis=1) <= r]
        improved = False
        if len(cand):
            dep = _side_depth(domain, cand, side)
            j = int(np.argmax(dep))
            if dep[j] > best:
                best, best_z, improved = dep[j], cand[j], True
        if not improved:
            step /= 2
    return best / r


def plumpness_probe(domain, kappa, r_grid, boundary_samples=64, side="omega", extra_points=None, seed=0,
                    n_samples=None):
    """For sampled x in the closure of the chosen side and each r, the best
    inscribed-ball ratio; pass means the ratio reaches ``kappa``."""
    if not 0 < kappa < 1:
        raise GeometryError("kappa must lie in (0, 1)")
    if boundary_samples < 1:
        raise GeometryError("degenerate probe: no boundary samples requested")
    rng = np.random.default_rng(seed)
    lo, hi = domain.bbox
    lo = np.where(np.isfinite(lo), lo, -2.0)
    hi = np.where(np.isfinite(hi), hi, 2.0)
    raw = lo - 0.25 * (hi - lo) + 1.5 * (hi - lo) * rng.random((boundary_samples, domain.d))
    pts = domain.nearest_boundary(raw)
    if len(pts) == 0:
        raise GeometryError("degenerate domain: empty boundary sample")
    if extra_points is not None:
        pts = np.concatenate([pts, np.asarray(extra_points, float).reshape(-1, domain.d)])
    r_grid = np.asarray(r_grid, float)
    best = np.array([[inscribed_ball_ratio(domain, p, r, side, n_samples=n_samples, seed=seed) for r in r_grid]
                     for p in pts])
    return PlumpnessReport(kappa, side, r_grid, pts, best)
