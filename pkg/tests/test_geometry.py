import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonlocal_ext.geometry import (BUILTIN_NAMES, GeometryError, RegionSpec, SobolevParams, delta,
                                   inscribed_ball_ratio, kernel_denominator, make_builtin_domain, plumpness_probe)

D2 = ("ball", "box", "l_shape", "annuli_balls")


def sample(domain, n, rng):
    lo, hi = domain.bbox
    lo = np.where(np.isfinite(lo), lo, -3.0)
    hi = np.where(np.isfinite(hi), hi, 3.0)
    w = hi - lo
    return lo - 0.5 * w + 2 * w * rng.random((n, domain.d))


def test_ball_radii():
    dom = make_builtin_domain("ball", d=2, radius=1)
    assert dom.inr_omega == 1.0 and math.isinf(dom.inr_complement)


def test_half_space_radii():
    dom = make_builtin_domain("half_space", d=1)
    assert math.isinf(dom.inr_omega) and math.isinf(dom.inr_complement)
    assert dom.contains(np.array([[-1.0], [1.0]])).tolist() == [True, False]


def test_annuli_radii():
    dom = make_builtin_domain("annuli_balls", n_max=6)
    a = {n: 2.0 ** (-n - 1) / n for n in range(1, 7)}
    assert set(np.round(dom.radii * 2, 14)) <= {round(v, 14) for v in a.values()}
    # pairwise disjoint
    c, r = dom.centers, dom.radii
    gap = np.linalg.norm(c[:, None] - c[None], axis=2) - r[:, None] - r[None]
    np.fill_diagonal(gap, 1.0)
    assert gap.min() > 0


def test_errors():
    with pytest.raises(GeometryError):
        make_builtin_domain("donut")
    with pytest.raises(GeometryError):
        make_builtin_domain("ball", d=2, radius=-1.0)
    with pytest.raises(ValueError):
        SobolevParams(0.0, 2)
    with pytest.raises(ValueError):
        SobolevParams(0.5, 0.5)


@pytest.mark.parametrize("x, d, want", [((0.0, 0.0), 2, 1.0), ((3.0, 0.0), 2, 2.0), ((0.25,), 1, 0.75)])
def test_delta_examples(x, d, want):
    dom = make_builtin_domain("ball", d=d)
    assert delta(np.array([x]), dom)[0] == pytest.approx(want, abs=1e-15)


def test_kernel_denominator_examples():
    dom = make_builtin_domain("ball", d=1)
    p = SobolevParams(0.5, 2)
    assert kernel_denominator(np.array([[0.5]]), np.array([[1.5]]), dom, p)[0] == pytest.approx(4.0)
    x = np.array([[0.2]])
    assert kernel_denominator(x, x, dom, p)[0] == pytest.approx((2 * 0.8) ** 2)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_three_times_bound(name, rng):
    dom = make_builtin_domain(name, d=1 if name in ("interval", "half_space") else 2)
    params = SobolevParams(0.5, 2)
    x = sample(dom, 400000, rng)
    inside = dom.contains(x)
    a, b = x[inside][:100000], x[~inside][:100000]
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    r = np.linalg.norm(a - b, axis=1)
    off = r + dom.delta(a) + dom.delta(b)
    assert np.all(r <= off) and np.all(off <= 3 * r * (1 + 1e-12))
    den = kernel_denominator(a, b, dom, params)
    assert np.all(den <= (3 * r) ** (dom.d + params.sp) * (1 + 1e-9))


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_delta_lipschitz(name, rng):
    dom = make_builtin_domain(name, d=1 if name in ("interval", "half_space") else 2)
    x, y = sample(dom, 20000, rng), sample(dom, 20000, rng)
    assert np.all(np.abs(dom.delta(x) - dom.delta(y)) <= np.linalg.norm(x - y, axis=1) + 1e-12)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_positive_measure_both_sides(name, rng):
    dom = make_builtin_domain(name, d=1 if name in ("interval", "half_space") else 2)
    inside = dom.contains(sample(dom, 20000, rng))
    assert 0 < inside.mean() < 1


@given(st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_region_monotone(a, b):
    a, b = sorted((a, b))
    dom = make_builtin_domain("ball", d=2)
    x = np.random.default_rng(0).uniform(-3, 3, (2000, 2))
    for tag in ("OmegaIntDelta", "OmegaExtEps"):
        small, big = RegionSpec(tag, a).contains(dom, x), RegionSpec(tag, b).contains(dom, x)
        assert np.all(~small | big)


def test_region_asymmetry():
    dom = make_builtin_domain("ball", d=1)
    # dist(0.5, dOmega) = 0.5; dist(1.5, dOmega) = 0.5
    x = np.array([[0.5], [1.5]])
    assert RegionSpec("OmegaIntDelta", 0.5).contains(dom, x).tolist() == [True, False]
    assert RegionSpec("OmegaExtEps", 0.5).contains(dom, x).tolist() == [False, False]


@pytest.mark.parametrize("name", ("ball", "box", "l_shape"))
def test_int_inr_is_omega(name, rng):
    dom = make_builtin_domain(name, d=2)
    x = sample(dom, 20000, rng)
    assert np.array_equal(RegionSpec("OmegaIntDelta", dom.inr_omega).contains(dom, x), dom.contains(x))


@pytest.mark.parametrize("name", ("ball", "box", "l_shape"))
def test_inr_matches_inscribed_search(name):
    dom = make_builtin_domain(name, d=2)
    pts = np.random.default_rng(1).uniform(-1, 1, (400, 2))
    pts = pts[dom.contains(pts)]
    best = dom.delta(pts).max()
    # refine around the incumbent with the probe machinery
    x0 = pts[np.argmax(dom.delta(pts))]
    best = max(best, inscribed_ball_ratio(dom, x0, 0.5) * 0.5)
    assert best == pytest.approx(dom.inr_omega, rel=0.05)


def test_plumpness_ball():
    dom = make_builtin_domain("ball", d=2)
    rep = plumpness_probe(dom, 0.4, [0.1, 0.5, 1.0, 1.9], boundary_samples=16)
    assert rep.all_pass


def test_plumpness_l_shape():
    dom = make_builtin_domain("l_shape", d=2)
    rep = plumpness_probe(dom, 0.2, [0.05, 0.2, 0.5, 1.0], boundary_samples=16,
                          extra_points=np.array([[0.0, 0.0]]))
    assert rep.all_pass


def test_plumpness_degenerate():
    dom = make_builtin_domain("ball", d=2)
    with pytest.raises(GeometryError):
        plumpness_probe(dom, 0.4, [0.5], boundary_samples=0)
    with pytest.raises(GeometryError):
        plumpness_probe(dom, 1.5, [0.5])


def test_annuli_ratio_decays():
    dom = make_builtin_domain("annuli_balls", n_max=6)
    ratios = [inscribed_ball_ratio(dom, np.zeros(2), 2.0 ** (-n)) for n in range(2, 7)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    # decays like 1/n: n * ratio is roughly constant
    nr = np.array(ratios) * np.arange(2, 7)
    assert nr.max() / nr.min() < 1.5
