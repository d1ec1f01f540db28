"""Smooth bumps on dilated Whitney cubes and the induced partition of unity.

The 1-D profile is the exp(-1/t) smoothstep: it climbs from 0 to 1 on the
collar ``[-eps/2, 0]``, equals 1 on ``[0, 1]`` and mirrors at 1, so
``psi_0(x) = prod_j sigma(x_j)`` is supported in ``Q_0* = [-eps/2, 1+eps/2]^d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .geometry import as_points
from .whitney import EPS_DILATE


class NotEvaluable(ValueError):
    """Raised when a point lies where the decomposition is incomplete."""


def _g(t):
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _g1(t):
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = np.exp(-1.0 / tp) / (tp * tp)
    return out


def smoothstep(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    a, b = _g(u), _g(1.0 - u)
    return a / (a + b)


def smoothstep_grad(u):
    a, b = _g(u), _g(1.0 - u)
    da, db = _g1(u), -_g1(1.0 - u)
    return (da * b - a * db) / (a + b) ** 2


def sigma(t, eps=EPS_DILATE):
    """Profile on [0,1] with collar width eps/2; returns (value, derivative)."""
    t = np.asarray(t, float)
    w = 0.5 * eps
    # mirror at 1/2 so both collars use the same rising branch
    left = t <= 0.5
    u = np.where(left, (t + w) / w, (1.0 - t + w) / w)
    val = smoothstep(u)
    der = smoothstep_grad(u) / w
    return val, np.where(left, der, -der)


def psi0(u, eps=EPS_DILATE):
    """psi_0 and its gradient at points ``u`` of shape (..., d)."""
    u = np.asarray(u, float)
    val1, der1 = sigma(u, eps)
    val = np.prod(val1, axis=-1)
    d = u.shape[-1]
    grad = np.empty_like(u)
    for j in range(d):
        others = np.prod(np.delete(val1, j, axis=-1), axis=-1) if d > 1 else 1.0
        grad[..., j] = der1[..., j] * others
    return val, grad


def psi(lo, side, x, eps=EPS_DILATE):
    """psi_Q(x) = psi_0((x - lo_Q) / l(Q)) and its gradient.

    ``lo`` and ``side`` broadcast against ``x`` (shape (..., d)).
    """
    side = np.asarray(side, float)[..., None]
    val, grad = psi0((np.asarray(x, float) - lo) / side, eps)
    return val, grad / side


@dataclass
class LocalPartition:
    """phi_R at points x for all R in N(Q(x)), padded to a common width."""
    owner: np.ndarray  # (n,) cube containing each point
    cubes: np.ndarray  # (n, K) neighbour ids, -1 padding
    phi: np.ndarray  # (n, K)
    grad: np.ndarray  # (n, K, d)
    evaluable: np.ndarray  # (n,)

    def value_sum(self):
        return self.phi.sum(axis=1)

    def of(self, q):
        """phi_q and its gradient at every point (0 where q is not a neighbour)."""
        hit = self.cubes == q
        val = np.where(hit, self.phi, 0.0).sum(axis=1)
        grad = np.where(hit[..., None], self.grad, 0.0).sum(axis=1)
        return val, grad


def local_partition(W, x, strict=False):
    """Evaluate the partition of unity of ``W`` at points ``x`` inside Omega.

    Sums run over ``N(Q1)`` for the cube ``Q1`` containing the point; points
    outside evaluable cubes get ``evaluable=False`` (or raise when ``strict``).
    """
    x = as_points(x, W.d)
    n = len(x)
    owner = W.locate(x, include_undersized=True)
    ok = owner >= 0
    ok[ok] = W.evaluable[owner[ok]]
    if strict and not ok.all():
        raise NotEvaluable(f"{int((~ok).sum())} points outside the evaluable region")
    ptr, cols = W._neighbor_csr
    q = np.where(ok, owner, 0)
    counts = np.where(ok, ptr[q + 1] - ptr[q], 0)
    K = int(counts.max()) if n else 0
    slot = np.arange(K)
    take = slot[None, :] < counts[:, None]
    ids = np.where(take, cols[np.minimum(ptr[q][:, None] + slot[None, :], len(cols) - 1)], -1)
    safe = np.maximum(ids, 0)
    val, grad = psi(W.lo[safe], W.side_len[safe], x[:, None, :])
    val = np.where(take, val, 0.0)
    grad = np.where(take[..., None], grad, 0.0)
    S = val.sum(axis=1)
    gS = grad.sum(axis=1)
    Sd = np.where(S > 0, S, 1.0)
    phi = val / Sd[:, None]
    gphi = (grad * Sd[:, None, None] - val[..., None] * gS[:, None, :]) / (Sd * Sd)[:, None, None]
    return LocalPartition(owner, ids, phi, gphi, ok)


def phi(W, q, x):
    """phi_q(x) with gradient; raises NotEvaluable outside the evaluable region."""
    lp = local_partition(W, x, strict=True)
    return lp.of(q)


def grad_bound_constant(W, cubes=None, n_per_cube=64, seed=0):
    """Empirical sup of |grad phi_Q| * l(Q) over sampled points of each Q*."""
    rng = np.random.default_rng(seed)
    cubes = np.flatnonzero(W.evaluable) if cubes is None else np.asarray(cubes)
    best = 0.0
    for c0 in range(0, len(cubes), 512):
        ids = cubes[c0:c0 + 512]
        w = 0.5 * EPS_DILATE
        u = -w + (1 + 2 * w) * rng.random((len(ids), n_per_cube, W.d))
        x = W.lo[ids, None, :] + u * W.side_len[ids, None, None]
        flat = x.reshape(-1, W.d)
        lp = local_partition(W, flat)
        own = np.repeat(ids, n_per_cube)
        hit = lp.cubes == own[:, None]
        g = np.linalg.norm(np.where(hit[..., None], lp.grad, 0.0).sum(axis=1), axis=1)
        g = np.where(lp.evaluable, g, 0.0) * W.side_len[own]
        best = max(best, float(g.max()) if len(g) else 0.0)
    return best


def _offset_seminorm_boxes(func, lo1, hi1, lo2, hi2, delta, params, n=2 ** 20, seed=0):
    """Quasi-Monte Carlo value of the offset-kernel seminorm over a box pair."""
    d = len(lo1)
    pts = qmc.Sobol(2 * d, scramble=True, seed=seed).random(n)
    x = lo1 + (hi1 - lo1) * pts[:, :d]
    y = lo2 + (hi2 - lo2) * pts[:, d:]
    num = np.abs(func(x) - func(y)) ** params.p
    den = (np.linalg.norm(x - y, axis=1) + delta(x) + delta(y)) ** (d + params.sp)
    vol = np.prod(hi1 - lo1) * np.prod(hi2 - lo2)
    return float(np.mean(num / den) * vol)


def phi_bound_rhs(lQ, l1, l2, dist12, vol1, vol2, params, d):
    s, p = params.s, params.p
    terms = []
    if s < 1:
        terms += [l1 ** (p - s * p - d) * lQ ** (-p) / (1 - s), l2 ** (p - s * p - d) * lQ ** (-p) / (1 - s)]
    if dist12 > 0:
        terms.append(dist12 ** (-d - s * p))
    return min(terms) * vol1 * vol2


def phi_seminorm_bound_check(W, q, q1, q2, params, n=2 ** 20, seed=0):
    """|phi_q|_{Q1,Q2} divided by its three-way minimum bound."""
    dist12 = float(W.cube_distance(q1, q2))
    if params.s >= 1 and dist12 == 0:
        raise ValueError("s = 1 needs dist(Q1, Q2) > 0")

    def func(x):
        lp = local_partition(W, x)
        val, _ = lp.of(q)
        return val

    dom = W.domain
    value = _offset_seminorm_boxes(func, W.lo[q1], W.hi[q1], W.lo[q2], W.hi[q2], dom.delta, params, n, seed)
    rhs = phi_bound_rhs(W.side_len[q], W.side_len[q1], W.side_len[q2], dist12, W.volume[q1], W.volume[q2],
                        params, W.d)
    return {"value": value, "rhs": rhs, "ratio": value / rhs}


def profile_rows(W, q, a, b, n=201):
    """(t, x, phi_q, dphi_q) rows along the segment a -> b for CSV dumps."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    t = np.linspace(0.0, 1.0, n)
    x = a + t[:, None] * (b - a)
    lp = local_partition(W, x)
    val, grad = lp.of(q)
    val = np.where(lp.evaluable, val, np.nan)
    return t, x, val, grad
