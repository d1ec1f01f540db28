"""The extension operator Ext: data on the complement, Whitney sums on Omega.

``Ext(f)(x) = sum_Q a_Q phi_Q(x)`` for x in Omega, where ``a_Q`` is the mean
of f over the reflected cube of Q, and ``Ext(f) = f`` on the complement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import as_points
from .reflect import ThicknessParams, build_reflection, cascade_violations
from .unity import NotEvaluable, local_partition
from .whitney import decompose

GAUSS_ORDER = 8


class MissingReflection(RuntimeError):
    pass


@dataclass
class ComplementFunction:
    """A function on the complement, vectorized over points of shape (n, d).

    ``sup`` is an upper bound for |f| (None if unbounded); ``modulus`` is an
    optional modulus of continuity ``w(r)`` used by trace checks.
    """
    func: object
    name: str = "f"
    sup: float | None = None
    bounded: bool = True
    modulus: object = None
    far_value: float | None = None
    grid: object = None
    far_radius: float = math.inf

    def __call__(self, x):
        return np.asarray(self.func(x), dtype=float)

    def box_average(self, lo, hi, order=GAUSS_ORDER):
        if self.grid is not None:
            return self.grid.box_average(lo, hi)
        return gauss_box_average(self.func, lo, hi, order)

    def scaled(self, c):
        g = self.grid.scaled(c) if self.grid is not None else None
        return ComplementFunction(lambda x, f=self.func: c * np.asarray(f(x), float), f"{c}*{self.name}",
                                  None if self.sup is None else abs(c) * self.sup, self.bounded,
                                  None if self.modulus is None else (lambda r, w=self.modulus: abs(c) * w(r)),
                                  None if self.far_value is None else c * self.far_value, g, self.far_radius)

    def combine(self, other, alpha=1.0, beta=1.0):
        sup = None if self.sup is None or other.sup is None else abs(alpha) * self.sup + abs(beta) * other.sup
        far = None if self.far_value is None or other.far_value is None else alpha * self.far_value + beta * other.far_value

        def func(x, f=self.func, g=other.func):
            return alpha * np.asarray(f(x), float) + beta * np.asarray(g(x), float)
        return ComplementFunction(func, f"{alpha}*{self.name}+{beta}*{other.name}", sup,
                                  self.bounded and other.bounded, None, far, None,
                                  max(self.far_radius, other.far_radius))


class GridFunction:
    """Piecewise-constant samples on a uniform grid (order-0 interpolation).

    ``values`` has shape (n_1, ..., n_d); cell i covers
    ``[origin + i*spacing, origin + (i+1)*spacing)``; points outside the grid get
    ``outside``.
    """

    def __init__(self, origin, spacing, values, outside=0.0):
        self.values = np.asarray(values, float)
        self.d = self.values.ndim
        self.origin = np.asarray(origin, float).reshape(self.d)
        self.spacing = np.asarray(spacing, float).reshape(self.d)
        self.outside = float(outside)

    def __call__(self, x):
        x = as_points(x, self.d)
        u = np.floor((x - self.origin) / self.spacing)
        shape = np.array(self.values.shape)
        inside = np.all((u >= 0) & (u < shape), axis=1)
        idx = np.where(inside[:, None], u, 0).astype(np.int64)
        safe = np.clip(idx, 0, shape - 1)
        return np.where(inside, self.values[tuple(safe.T)], self.outside)

    def scaled(self, c):
        return GridFunction(self.origin, self.spacing, c * self.values, c * self.outside)

    def _axis_weights(self, lo, hi, j):
        n = self.values.shape[j]
        edges = self.origin[j] + self.spacing[j] * np.arange(n + 1)
        w = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
        outside = max(0.0, min(hi, edges[0]) - lo) + max(0.0, hi - max(lo, edges[-1]))
        return w, outside

    def box_average(self, lo, hi):
        """Exact mean over the box ``[lo, hi]`` (rows of ``lo``/``hi`` are boxes)."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        out = np.empty(len(lo))
        for i in range(len(lo)):
            ws, outs = zip(*(self._axis_weights(lo[i, j], hi[i, j], j) for j in range(self.d)))
            total = np.prod(hi[i] - lo[i])
            inner = self.values
            for j in reversed(range(self.d)):
                inner = inner @ ws[j]
            covered = np.prod([w.sum() for w in ws])
            out[i] = (inner + self.outside * (total - covered)) / total
        return out


def gauss_box_average(func, lo, hi, order=GAUSS_ORDER):
    """Tensor Gauss-Legendre mean of ``func`` over boxes ``[lo_i, hi_i]``."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    d = lo.shape[1]
    t, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    grids = np.stack(np.meshgrid(*[t] * d, indexing="ij"), -1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*[w] * d, indexing="ij"), -1).reshape(-1, d), axis=1)
    out = np.empty(len(lo))
    chunk = max(1, (1 << 18) // len(grids))
    for c0 in range(0, len(lo), chunk):
        l, h = lo[c0:c0 + chunk], hi[c0:c0 + chunk]
        x = l[:, None, :] + (h - l)[:, None, :] * grids[None, :, :]
        vals = np.asarray(func(x.reshape(-1, d)), float).reshape(len(l), -1)
        # centre on the first node so constants are reproduced exactly
        ref = vals[:, :1]
        out[c0:c0 + chunk] = ref[:, 0] + (vals - ref) @ wts
    return out


@dataclass
class ExtensionGeometry:
    """Whitney decomposition of Omega plus its reflection table into the complement."""
    domain: object
    W: object
    refl: object
    thickness: ThicknessParams = field(default_factory=ThicknessParams)

    @property
    def needed(self):
        """Cubes whose coefficients enter some evaluable point."""
        ptr, cols = self.W._neighbor_csr
        ev = np.flatnonzero(self.W.evaluable)
        if len(ev) == 0:
            return ev
        return np.unique(np.concatenate([cols[ptr[i]:ptr[i + 1]] for i in ev]))


def build_geometry(domain, window, m_max=None, thickness=None):
    thickness = thickness or ThicknessParams()
    W = decompose(domain, "omega", window, m_max)
    refl = build_reflection(W, thickness, cubes=np.flatnonzero(W.regular))
    return ExtensionGeometry(domain, W, refl, thickness)


class ExtensionOperator:
    def __init__(self, f, geom, coeffs, order):
        self.f = f
        self.geom = geom
        self.coeffs = coeffs
        self.order = order

    @property
    def domain(self):
        return self.geom.domain

    @property
    def W(self):
        return self.geom.W

    def _interior(self, x):
        lp = local_partition(self.W, x)
        a = np.where(lp.cubes >= 0, self.coeffs[np.maximum(lp.cubes, 0)], 0.0)
        return lp, a

    def evaluate(self, x, strict=False):
        """Ext(f)(x); NaN (or NotEvaluable when ``strict``) at uncovered interior points."""
        x = as_points(x, self.domain.d)
        inside = self.domain.contains(x)
        out = np.empty(len(x))
        if (~inside).any():
            out[~inside] = self.f(x[~inside])
        if inside.any():
            lp, a = self._interior(x[inside])
            # anchored on the owner's coefficient: exact for constants, equal to sum a_Q phi_Q otherwise
            t = np.where(lp.owner >= 0, self.coeffs[np.maximum(lp.owner, 0)], 0.0)
            val = t + np.sum((a - t[:, None]) * lp.phi, axis=1)
            if strict and not lp.evaluable.all():
                raise NotEvaluable("interior point outside the evaluable region")
            out[inside] = np.where(lp.evaluable, val, np.nan)
        return out

    def evaluate_centered(self, x, t):
        """``sum_Q (a_Q - t) phi_Q(x) = Ext(f)(x) - t`` at interior points.

        Subtracting a local constant before summing keeps round-off relative
        to the oscillation of the coefficients, which finite-difference checks
        need.
        """
        x = as_points(x, self.domain.d)
        lp, a = self._interior(x)
        t = np.broadcast_to(np.asarray(t, float), (len(x),))
        val = np.sum((a - t[:, None]) * lp.phi, axis=1)
        return np.where(lp.evaluable, val, np.nan)

    def gradient(self, x, strict=True):
        """Analytic gradient sum_Q a_Q grad phi_Q at interior points."""
        x = as_points(x, self.domain.d)
        if not self.domain.contains(x).all():
            raise ValueError("gradient is only defined inside Omega")
        lp, a = self._interior(x)
        if strict and not lp.evaluable.all():
            raise NotEvaluable("interior point outside the evaluable region")
        # sum grad phi_Q = 0, so subtracting the owner's coefficient is free and exact for constants
        t = np.where(lp.owner >= 0, self.coeffs[np.maximum(lp.owner, 0)], 0.0)
        g = np.sum((a - t[:, None])[..., None] * lp.grad, axis=1)
        return np.where(lp.evaluable[:, None], g, np.nan)

    def evaluable(self, x):
        x = as_points(x, self.domain.d)
        inside = self.domain.contains(x)
        ok = ~inside
        if inside.any():
            ok[inside] = local_partition(self.W, x[inside]).evaluable
        return ok

    def data_support(self, q1):
        """Reflected boxes of N(Q1): the only data Ext uses on Q1."""
        nb = self.W.neighbors(q1)
        rows = [self.geom.refl.row(q) for q in nb]
        return self.geom.refl.lo[rows], self.geom.refl.hi[rows]


def build_extension(f, geom, order=GAUSS_ORDER):
    """Coefficient table ``a_Q`` for every cube that can contribute."""
    if not isinstance(f, ComplementFunction):
        f = ComplementFunction(f)
    W, refl = geom.W, geom.refl
    coeffs = np.full(len(W), np.nan)
    rows = np.array([refl.row(q) for q in range(len(W))])
    have = rows >= 0
    have[have] = refl.ok[rows[have]]
    needed = geom.needed
    missing = needed[~have[needed]]
    if len(missing):
        raise MissingReflection(f"{len(missing)} needed cubes have no reflected cube (first: {int(missing[0])})")
    ids = np.flatnonzero(have)
    r = rows[ids]
    coeffs[ids] = f.box_average(refl.lo[r], refl.hi[r], order)
    return ExtensionOperator(f, geom, coeffs, order)


def inward_normal(domain, z0, h=1e-7):
    """Central-difference gradient of the signed distance (positive in Omega)."""
    def signed(x):
        dist = domain.delta(x)
        return np.where(domain.contains(x), dist, -dist)
    e = h * np.eye(domain.d)
    n = (signed(z0 + e) - signed(z0 - e)) / (2 * h)
    return n / np.linalg.norm(n)


@dataclass
class TraceProbeReport:
    z0: np.ndarray
    target: float
    distances: np.ndarray
    gaps: np.ndarray
    exhausted: bool  # sequence left the evaluable region before the last step
    converging: bool

    @property
    def deepest_gap(self):
        return float(self.gaps[-1]) if len(self.gaps) else math.nan


def trace_limit_probe(E, z0, normal=None, t0=None, k_max=40, target=None, tol=None):
    """Evaluate Ext(f) at ``z0 + 2^-k t0 n`` (inward normal n) and track the gap to ``f(z0)``."""
    dom = E.domain
    z0 = np.asarray(z0, float).reshape(dom.d)
    if normal is None:
        normal = inward_normal(dom, z0)
    normal = np.asarray(normal, float)
    normal = normal / np.linalg.norm(normal)
    t0 = t0 if t0 is not None else 0.5 * float(E.W.diam[E.W.regular].max())
    g = float(E.f(z0[None, :])[0]) if target is None else float(target)
    dists, gaps = [], []
    exhausted = False
    for k in range(k_max):
        x = z0 + (t0 * 2.0 ** (-k)) * normal
        val = E.evaluate(x[None, :])[0]
        if not np.isfinite(val):
            exhausted = True
            break
        dists.append(t0 * 2.0 ** (-k))
        gaps.append(abs(val - g))
    gaps = np.array(gaps)
    tail = gaps[len(gaps) // 2:] if len(gaps) else gaps
    tol = tol if tol is not None else 1e-12
    converging = bool(len(gaps) > 2 and (tail[-1] <= tol or tail[-1] < 0.5 * gaps[0]))
    return TraceProbeReport(z0, g, np.array(dists), gaps, exhausted, converging)


def extension_cascade_check(geom):
    return cascade_violations(geom.refl, geom.W)
