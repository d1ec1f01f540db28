"""Acceptance criteria 1-11.  Each test prints one ``criterion N: PASS|FAIL`` line.

The heavy verify runs (1-D unit ball at the default resolution and one level
finer) are shared between criteria 7, 8, 9 and 10 through module fixtures.
"""
import math
import time

import numpy as np
import pytest

from nonlocal_ext.battery import SMOOTH, make_member
from nonlocal_ext.cli import _plumpness, main
from nonlocal_ext.extend import ComplementFunction, build_extension, build_geometry, trace_limit_probe
from nonlocal_ext.geometry import BUILTIN_NAMES, SobolevParams, make_builtin_domain
from nonlocal_ext.reflect import ThicknessParams, thickness_audit
from nonlocal_ext.seminorm import default_window, estimate_cross
from nonlocal_ext.unity import grad_bound_constant, local_partition
from nonlocal_ext.verify import (VerifyContext, check_bbm_limit, check_extension_bounds, check_norm_equivalence,
                                 refinement_drift)
from nonlocal_ext.whitney import decompose

BUILTIN_PAIRS = [(n, d) for n in BUILTIN_NAMES for d in (1, 2)
                 if not (n == "interval" and d == 2) and not (n in ("l_shape", "annuli_balls") and d == 1)]


@pytest.fixture
def verdict(capsys):
    """verdict(n, ok, detail) prints the criterion line and fails the test when ok is False."""
    def _v(n, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"
    return _v


def _covered(W, n, rng):
    ids = np.flatnonzero(W.evaluable)
    q = ids[rng.integers(0, len(ids), n)]
    return W.lo[q] + W.side_len[q, None] * rng.random((n, W.d))


@pytest.fixture(scope="module")
def ball1():
    return make_builtin_domain("ball", d=1)


@pytest.fixture(scope="module")
def ctx(ball1):
    return VerifyContext(ball1, None, seed=0)


@pytest.fixture(scope="module")
def ctx_fine(ball1, ctx):
    return VerifyContext(ball1, ctx.m_max + 1, seed=0)


@pytest.fixture(scope="module")
def ext_reports(ctx):
    return check_extension_bounds(ctx)


# --------------------------------------------------------------------------- 1

def test_criterion_1_whitney_exactness(verdict):
    t0 = time.perf_counter()
    bad, total = [], 0
    for name, d in BUILTIN_PAIRS:
        dom = make_builtin_domain(name, d=d)
        m = 14 if d == 1 else 10
        for side in ("omega", "complement"):
            W = decompose(dom, side, default_window(dom), m)
            ok = W.regular & ~W.truncated
            exact = dom.cube_boundary_distance(W.lo[ok], W.hi[ok])
            good = (W.diam[ok] <= exact) & (exact <= 4 * W.diam[ok])
            total += int(ok.sum())
            if not good.all():
                bad.append((name, d, side, int((~good).sum())))
    dt = time.perf_counter() - t0
    verdict(1, not bad and dt < 60, f"{total} cubes, failures={bad}, {dt:.1f}s")


# --------------------------------------------------------------------------- 2

def test_criterion_2_partition_of_unity(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for name, d, m in (("ball", 1, 12), ("ball", 2, 8), ("l_shape", 2, 8)):
        dom = make_builtin_domain(name, d=d)
        W = decompose(dom, "omega", default_window(dom), m)
        lp = local_partition(W, _covered(W, 10 ** 4, rng))
        worst = max(worst, float(np.max(np.abs(lp.value_sum() - 1))))
    dom = make_builtin_domain("ball", d=2)
    c = [grad_bound_constant(decompose(dom, "omega", default_window(dom), m)) for m in (7, 8, 9)]
    drift = [abs(b - a) / max(a, b) for a, b in zip(c, c[1:])]
    ok = worst <= 1e-12 and all(np.isfinite(c)) and max(drift) < 0.3
    verdict(2, ok, f"max|sum-1|={worst:.2e}, grad constants={np.round(c, 3).tolist()}, drift={np.round(drift, 3).tolist()}")


# --------------------------------------------------------------------------- 3

def test_criterion_3_extension_contract(verdict, ctx):
    dom = make_builtin_domain("ball", d=2)
    geom = build_geometry(dom, default_window(dom), 8)
    rng = np.random.default_rng(3)
    member = make_member("bump", dom)
    f = member.complement_function()
    E = build_extension(f, geom)
    xo = rng.uniform(-3, 3, (20000, 2))
    xo = xo[~dom.contains(xo)]
    ident = bool(np.array_equal(E.evaluate(xo), f(xo)))

    g = ComplementFunction(lambda x: np.cos(3 * x[:, 0]) * x[:, 1], sup=None)
    a, b = 1.7, -0.6
    Eg, Efg = build_extension(g, geom), build_extension(f.combine(g, a, b), geom)
    x = _covered(geom.W, 2000, rng)
    lin = np.abs(Efg.evaluate(x) - a * E.evaluate(x) - b * Eg.evaluate(x))
    lin_scale = np.maximum(np.abs(a * E.evaluate(x)) + np.abs(b * Eg.evaluate(x)), 1.0)
    lin_err = float(np.max(lin / lin_scale))

    Ec = build_extension(ComplementFunction(lambda x: np.full(len(x), -2.25), sup=2.25), geom)
    const_err = float(np.max(np.abs(Ec.evaluate(x) + 2.25)))

    x = _covered(geom.W, 1000, rng)
    grad = E.gradient(x)
    W = E.W
    q = W.locate(x)
    ell = W.side_len[q]
    h = 1e-6 * ell
    t = E.evaluate(x)
    osc = np.array([np.ptp(E.coeffs[W.neighbors(i)]) for i in q])
    worst = 0.0
    for j in range(2):
        e = np.zeros_like(x)
        e[:, j] = h
        fd = (E.evaluate_centered(x + e, t) - E.evaluate_centered(x - e, t)) / (2 * h)
        scale = np.maximum(np.abs(grad[:, j]), osc / ell)
        keep = scale > 0
        worst = max(worst, float(np.max(np.abs(grad[keep, j] - fd[keep]) / scale[keep])))
    ok = ident and lin_err <= 1e-12 and const_err == 0.0 and worst <= 1e-6
    verdict(3, ok, f"identity={ident}, linearity={lin_err:.1e}, const={const_err:.1e}, gradient={worst:.1e}")


# --------------------------------------------------------------------------- 4

def test_criterion_4_thickness_and_plumpness(verdict):
    params = ThicknessParams()
    rows, ok = [], True
    for name in ("ball", "box", "l_shape", "annuli_balls"):
        dom = make_builtin_domain(name, d=2)
        win = default_window(dom)
        m = 10 if name == "annuli_balls" else 8
        audits = [thickness_audit(dom, side, win, m, params)[0].passed for side in ("exterior", "interior")]
        plump = _plumpness(dom, params.kappa, 0)
        ok &= all(audits)
        if name == "annuli_balls":
            ok &= not plump["pass"]
            n = np.arange(1, len(plump["origin_ratio"]) + 1)
            pred = 3.0 / (4.0 * n)
            rel = np.abs(np.asarray(plump["origin_ratio"]) - pred) / pred
            ok &= bool(np.all(rel <= 0.15))
            rows.append(f"{name}: audits={audits} plump={plump['pass']} "
                        f"ratio={np.round(plump['origin_ratio'], 4).tolist()} vs 3/(4n), rel.err={np.round(rel, 2).tolist()}")
        else:
            ok &= plump["pass"]
            rows.append(f"{name}: audits={audits} plump={plump['pass']}")
    verdict(4, ok, "; ".join(rows))


# --------------------------------------------------------------------------- 5

def test_criterion_5_characteristic_threshold(verdict, ball1):
    member = make_member("indicator", ball1)
    field = member.field()
    rows, ok, slowest = [], True, 0.0
    for p in (1.0, 2.0, 3.0):
        for s in sorted({0.1, 0.25, 0.5, 0.75, 0.9, 0.95, round(1 / p - 0.1, 4), round(1 / p + 0.1, 4)}):
            if not 0 < s <= 1:
                continue
            expect = "convergent" if s < 1 / p - 0.05 else ("divergent" if s > 1 / p + 0.05 else None)
            if expect is None:
                continue
            t0 = time.perf_counter()
            est = estimate_cross(field, SobolevParams(s, p), 10 ** 7, 0, domain=ball1)
            dt = time.perf_counter() - t0
            slowest = max(slowest, dt)
            good = est.verdict == expect and dt < 300
            ok &= good
            if not good:
                rows.append(f"(s={s},p={p:g}) {est.verdict} expected {expect}")
    verdict(5, ok, f"wrong={rows}, slowest point {slowest:.1f}s")


# --------------------------------------------------------------------------- 6

def test_criterion_6_oracles(verdict, ball1):
    import json
    from pathlib import Path

    from nonlocal_ext.geometry import RegionSpec
    from nonlocal_ext.seminorm import SeminormGeometry, estimate_AB
    rows = json.loads((Path(__file__).parent / "oracles" / "seminorm_1d.json").read_text())
    sgeom = SeminormGeometry(ball1, default_window(ball1), 14)
    bat = {n: make_member(n, ball1).field() for n in ("x1", "indicator", "sqrt_example")}
    Om, Oc = RegionSpec("Omega"), RegionSpec("OmegaComplement")
    worst, n = 0.0, 0
    for row in rows:
        kind, args = row["kind"], row["args"]
        if kind == "cross_indicator":
            est = estimate_cross(bat["indicator"], SobolevParams(*args), 10 ** 6, geom=sgeom)
        elif kind == "cross_sqrt":
            est = estimate_cross(bat["sqrt_example"], SobolevParams(*args), 10 ** 6, geom=sgeom)
        elif kind == "offset_indicator":
            est = estimate_AB(bat["indicator"], Om, Oc, SobolevParams(*args), 10 ** 6, geom=sgeom)
        elif kind == "offset_indicator_layers":
            s, p, dl, ep = args
            est = estimate_AB(bat["indicator"], RegionSpec("OmegaIntDelta", dl), RegionSpec("OmegaExtEps", ep),
                              SobolevParams(s, p), 10 ** 6, geom=sgeom)
        elif kind == "offset_x1_omega":
            est = estimate_AB(bat["x1"], Om, Om, SobolevParams(*args), 10 ** 6, geom=sgeom)
        else:
            continue
        tol = max(0.02 * abs(row["value"]), 3 * est.std_error)
        worst = max(worst, abs(est.value - row["value"]) / tol)
        n += 1
    verdict(6, n > 0 and worst <= 1.0, f"{n} closed-form cases, worst |err|/tol = {worst:.2f}")


# --------------------------------------------------------------------------- 7

def test_criterion_7_comparison_ordering(verdict, ctx):
    reps = check_norm_equivalence(ctx, with_norms=False)
    lower, upper = reps["lower"], reps["upper"]
    var = upper.extra["max_s_variation"]
    ok = not lower.violations and not upper.violations and bool(lower.checked) and var < 10
    margin = min(r["ratio"] / r["bound"] for r in lower.checked if r["ratio"] is not None)
    verdict(7, ok, f"lower: {len(lower.checked)} checked, {len(lower.violations)} violations, "
                   f"min ratio/3^(-d-p) = {margin:.3g}; upper s-variation {var:.3g}")


# --------------------------------------------------------------------------- 8

def test_criterion_8_extension_bounds(verdict, ctx, ctx_fine, ext_reports):
    keys = ("int-ext", "int-int", "simpl1", "simpl2")
    fine = check_extension_bounds(ctx_fine, betas=())
    drift = refinement_drift({k: ext_reports[k] for k in keys}, {k: fine[k] for k in keys})
    consts = {k: ext_reports[k].constant for k in keys}
    viol = sum(len(ext_reports[k].violations) + len(fine[k].violations) for k in keys)
    ok = viol == 0 and all(np.isfinite(list(consts.values()))) and all(d < 0.3 for d in drift.values())
    verdict(8, ok, f"constants={ {k: round(v, 3) for k, v in consts.items()} }, "
                   f"drift m_max {ctx.m_max}->{ctx_fine.m_max}={ {k: round(v, 3) for k, v in drift.items()} }, "
                   f"violations={viol}")


# --------------------------------------------------------------------------- 9

def test_criterion_9_bbm_limit(verdict, ctx):
    reps = check_bbm_limit(ctx)
    smooth = [m for m in SMOOTH]
    growth = {m: reps["scaled"].extra[f"{m} growth"] for m in smooth if f"{m} growth" in reps["scaled"].extra}
    sq = reps["sqrt_example"].extra["growth"]
    grad = reps["gradient"]
    ok = (all(np.isfinite(g) and g < 10 for g in growth.values()) and sq >= 10 and not grad.violations
          and len(grad.checked) == len(grad.rows) and np.isfinite(grad.constant))
    verdict(9, ok, f"scaled growth={ {k: round(v, 3) for k, v in growth.items()} }, sqrt unscaled growth={sq:.3g}, "
                   f"gradient constant={grad.constant:.3g}")


# --------------------------------------------------------------------------- 10

def _modulus(f, z0, r, domain, n=4000, seed=0):
    rng = np.random.default_rng(seed)
    d = len(z0)
    x = z0 + r * rng.uniform(-1, 1, (n, d))
    x = x[(np.linalg.norm(x - z0, axis=1) <= r) & ~domain.contains(x)]
    return float(np.max(np.abs(f(x) - f(z0[None, :])[0]))) if len(x) else 0.0


def test_criterion_10_trace_limit(verdict, ctx):
    rows, ok = [], True
    disc = make_builtin_domain("ball", d=2)
    dgeom = build_geometry(disc, default_window(disc), 10)
    cases = [(ctx.geom, np.array([1.0]), name) for name in ("sqrt_example", "bump", "collar_0.25")]
    cases += [(dgeom, np.array([math.cos(0.7), math.sin(0.7)]), name) for name in ("sqrt_example", "bump")]
    for geom, z0, name in cases:
        f = make_member(name, geom.domain).complement_function()
        E = build_extension(f, geom)
        rep = trace_limit_probe(E, z0)
        mod = _modulus(f, z0, 2.0 ** (-geom.W.m_max), geom.domain)
        good = rep.gaps[-1] <= 10 * mod + 1e-12 and rep.gaps[-1] <= rep.gaps[0]
        ok &= bool(good)
        rows.append(f"{name} d={geom.domain.d}: final gap {rep.gaps[-1]:.2e} vs 10*modulus {10 * mod:.2e}")
    verdict(10, ok, "; ".join(rows))


# --------------------------------------------------------------------------- 11

SMALL_VERIFY = """\
domain: {name: ball, d: 1}
m_max: 10
budget: 20000
verify:
  norm_equivalence: {members: [indicator, bump], s_grid: [0.5], p_grid: [2]}
  extension_bounds: {members: [bump], int_ext_s: [0.5, 1.0], int_int_s: [0.5], betas: [0]}
  bbm_limit: {s_sequence: [0.5, 0.9]}
  char_threshold: {p_grid: [2], s_grid: [0.25, 0.75]}
extend: {resolution: 41, rays: 2, ray_samples: 21}
"""


def test_criterion_11_determinism(verdict, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL_VERIFY)
    diffs = []
    for cmd in ("decompose", "extend", "seminorm", "verify"):
        outs = []
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / f"{cmd}_{tag}"
            code = main([cmd, "--config", str(cfg), "--out", str(out), "--threads", threads])
            files = {p.name: p.read_bytes().replace(str(out).encode(), b"OUT")
                     for p in sorted(out.iterdir())}
            outs.append((code, files))
        if any(o != outs[0] for o in outs[1:]):
            diffs.append(cmd)
    verdict(11, not diffs, f"commands with differing outputs: {diffs}")
