import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonlocal_ext.geometry import SobolevParams
from nonlocal_ext.unity import (NotEvaluable, grad_bound_constant, local_partition, phi, phi_seminorm_bound_check,
                                psi, psi0, sigma)
from nonlocal_ext.whitney import EPS_DILATE


def test_sigma_shape():
    t = np.linspace(-0.5, 1.5, 4001)
    v, _ = sigma(t)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(v[(t >= 0) & (t <= 1)] == 1)
    assert np.all(v[(t <= -EPS_DILATE / 2) | (t >= 1 + EPS_DILATE / 2)] == 0)


@given(st.integers(0, 12), st.integers(-50, 50))
def test_psi_centre_and_outside(m, k):
    h = 2.0 ** (-m)
    lo = np.array([k * h, -k * h])
    v, g = psi(lo, h, (lo + 0.5 * h)[None, :])
    assert v[0] == 1 and np.all(g == 0)
    far = lo + np.array([-EPS_DILATE * h, 0.5 * h])
    v, g = psi(lo, h, far[None, :])
    assert v[0] == 0 and np.all(g == 0)


def test_psi0_support_grid():
    u = np.stack(np.meshgrid(np.linspace(-0.2, 1.2, 141), np.linspace(-0.2, 1.2, 141)), -1).reshape(-1, 2)
    v, _ = psi0(u)
    assert np.all((v >= 0) & (v <= 1))
    inside = np.all((u >= 0) & (u <= 1), axis=1)
    outside = np.any((u < -EPS_DILATE / 2) | (u > 1 + EPS_DILATE / 2), axis=1)
    assert np.all(v[inside] == 1) and np.all(v[outside] == 0)


def test_psi_finite_difference():
    """|grad psi . e - central difference| <= 1e-6 / l(Q) at h = 1e-5 l(Q)."""
    rng = np.random.default_rng(0)
    ell = 2.0 ** -5
    lo = np.array([0.25, -0.5])
    x = lo + ell * (-EPS_DILATE / 2 + (1 + EPS_DILATE) * rng.random((100, 2)))
    _, g = psi(lo, ell, x)
    h = 1e-5 * ell
    worst = 0.0
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (psi(lo, ell, x + e)[0] - psi(lo, ell, x - e)[0]) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g[:, j] - fd))) * ell)
    assert worst <= 1e-6


def _covered(W, n, rng):
    ids = np.flatnonzero(W.evaluable)
    q = ids[rng.integers(0, len(ids), n)]
    return W.lo[q] + W.side_len[q, None] * rng.random((n, W.d))


@pytest.mark.parametrize("which", ["interval_geom", "disc_geom"])
def test_partition_sums_to_one(which, request, rng):
    W = request.getfixturevalue(which).W
    x = _covered(W, 10000, rng)
    lp = local_partition(W, x)
    assert lp.evaluable.all()
    assert np.max(np.abs(lp.value_sum() - 1)) <= 1e-12
    assert np.all((lp.phi >= 0) & (lp.phi <= 1))
    assert np.max(np.abs(lp.grad.sum(axis=1))) * W.side_len.min() < 1e-9


@pytest.mark.parametrize("which", ["interval_geom", "disc_geom"])
def test_locality(which, request, rng):
    W = request.getfixturevalue(which).W
    x = _covered(W, 2000, rng)
    lp = local_partition(W, x)
    for i in range(0, 2000, 97):
        nz = lp.cubes[i][(lp.cubes[i] >= 0) & (lp.phi[i] > 0)]
        assert set(nz.tolist()) <= set(W.neighbors(lp.owner[i]).tolist()) | {lp.owner[i]}


def test_phi_gradient_vs_central_difference(disc_geom, rng):
    W = disc_geom.W
    x = _covered(W, 300, rng)
    lp = local_partition(W, x)
    errs = []
    for i in range(len(x)):
        q = lp.owner[i]
        ell = W.side_len[q]
        h = 1e-6 * ell
        for nb in W.neighbors(q)[:3]:
            _, g = phi(W, nb, x[i:i + 1])
            val = lambda y: phi(W, nb, y)[0][0]
            for j in range(2):
                e = np.zeros((1, 2))
                e[0, j] = h
                try:
                    fd = (val(x[i:i + 1] + e) - val(x[i:i + 1] - e)) / (2 * h)
                except NotEvaluable:
                    continue
                scale = max(abs(g[0, j]), 1.0 / ell)
                errs.append(abs(g[0, j] - fd) / scale)
    assert max(errs) <= 1e-6


def test_not_evaluable(interval_geom):
    W = interval_geom.W
    with pytest.raises(NotEvaluable):
        phi(W, 0, np.array([[1 - 1e-9]]))


def test_grad_bound_refinement_stable(interval):
    from nonlocal_ext.seminorm import default_window
    from nonlocal_ext.whitney import decompose
    win = default_window(interval)
    c = [grad_bound_constant(decompose(interval, "omega", win, m)) for m in (10, 11, 12)]
    assert all(np.isfinite(c))
    for a, b in zip(c, c[1:]):
        assert abs(b - a) / max(a, b) < 0.3


def test_phi_seminorm_far_cubes_zero(interval_geom):
    W = interval_geom.W
    ev = np.flatnonzero(W.evaluable)
    q = ev[np.argmin(W.center[ev, 0])]
    far = ev[np.argmax(W.center[ev, 0])]
    r = phi_seminorm_bound_check(W, q, far, far, SobolevParams(0.5, 2), n=2 ** 12)
    assert r["value"] == 0 and r["ratio"] == 0


def test_phi_seminorm_s1_touching_rejected(interval_geom):
    W = interval_geom.W
    i = np.flatnonzero(W.evaluable)[0]
    with pytest.raises(ValueError):
        phi_seminorm_bound_check(W, i, i, i, SobolevParams(1.0, 2))


def test_phi_seminorm_sweep_bounded(interval_geom):
    """3x3x3 sweep of (Q, Q1, Q2) near the boundary x = 1: ratios bounded, also at s = 0.99."""
    W = interval_geom.W
    ev = np.flatnonzero(W.evaluable & (W.center[:, 0] > 0))
    # three consecutive cubes in the chain towards the boundary
    chain = ev[np.argsort(W.center[ev, 0])][-8:-5]
    ratios = {}
    for s in (0.3, 0.7, 0.99):
        vals = []
        for q in chain:
            for q1 in chain:
                for q2 in chain:
                    vals.append(phi_seminorm_bound_check(W, q, q1, q2, SobolevParams(s, 2), n=2 ** 14)["ratio"])
        ratios[s] = max(vals)
    assert all(np.isfinite(v) and v < 50 for v in ratios.values())
