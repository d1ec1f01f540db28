"""Empirical checks of the norm equivalence, the extension bounds, the s -> 1
limit and the characteristic-function threshold.

Every check returns an ``InequalityReport``: one row per grid point with
status ``checked`` or ``skipped`` and, for checked rows, the scaled ratio whose
maximum is the recorded empirical constant.  A *violation* is reserved for
outcomes that contradict a proven statement outright (a finite right-hand side
with a divergent left-hand side, an exact ordering broken beyond 3 sigma, a
threshold verdict on the wrong side).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .battery import SMOOTH, make_battery
from .extend import build_extension, build_geometry
from .geometry import INF, RegionSpec, SobolevParams
from .reflect import ThicknessParams
from .seminorm import (SeminormGeometry, default_window, estimate_AB, estimate_cross, gradient_lp_norm,
                       weighted_lp_norm)

S_GRID = (0.1, 0.25, 0.5, 0.75, 0.9, 0.95)
P_GRID = (1.0, 2.0, 3.0)
BBM_S = (0.5, 0.7, 0.9, 0.95, 0.99)
TRIVIAL_ZERO = 1e-20
NORM_MEMBERS = ("const", "indicator", "sqrt_example", "collar_0.25", "collar_0.5", "collar_1", "bump",
                "random_grid")
EXT_MEMBERS = ("const", "indicator", "sqrt_example", "collar_0.25", "collar_0.5", "collar_1", "bump",
               "random_grid")


@dataclass
class InequalityReport:
    inequality: str
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, point, status, lhs=None, rhs=None, ratio=None, reason="", violation=False, **more):
        row = {"point": point, "status": status, "lhs": lhs, "rhs": rhs, "ratio": ratio, "reason": reason,
               "violation": bool(violation)}
        row.update(more)
        self.rows.append(row)
        return row

    @property
    def checked(self):
        return [r for r in self.rows if r["status"] == "checked"]

    @property
    def violations(self):
        return [r for r in self.rows if r["violation"]]

    @property
    def constant(self):
        vals = [r["ratio"] for r in self.checked if r["ratio"] is not None and np.isfinite(r["ratio"])]
        return max(vals) if vals else math.nan

    @property
    def n_inconclusive(self):
        return sum(1 for r in self.rows if r["status"] == "skipped" and "inconclusive" in r["reason"])

    def as_record(self):
        return {"inequality": self.inequality, "constant": _clean(self.constant),
                "violations": len(self.violations), "rows": [_clean_row(r) for r in self.rows],
                "extra": {k: _clean(v) for k, v in self.extra.items()}}

    def summary(self):
        n = len(self.rows)
        return (f"{self.inequality:<18} points={n:4d} checked={len(self.checked):4d} "
                f"skipped={n - len(self.checked):4d} violations={len(self.violations)} "
                f"constant={self.constant:.4g}")


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _clean_row(r):
    return {k: _clean(v) for k, v in r.items()}


def fit_exponent(x, y):
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


class VerifyContext:
    """Geometry, extensions and estimate cache shared by the checks."""

    def __init__(self, domain, m_max=None, budget=2 * 10 ** 5, seed=0, thickness=None, window=None,
                 battery_seed=0):
        self.domain = domain
        self.budget = int(budget)
        self.seed = int(seed)
        self.window = default_window(domain) if window is None else window
        self.thickness = thickness or ThicknessParams()
        self.geom = build_geometry(domain, self.window, m_max, self.thickness)
        self.m_max = self.geom.W.m_max
        self.sgeom = SeminormGeometry.from_extension(self.geom)
        self.battery = make_battery(domain, seed=battery_seed)
        self._ext = {}
        self._cache = {}
        self.inr = float(domain.inr_omega)

    def ext(self, name):
        if name not in self._ext:
            self._ext[name] = build_extension(self.battery[name].complement_function(), self.geom)
        return self._ext[name]

    def _key(self, *parts):
        return "|".join(str(p) for p in parts)

    def offset(self, name, use_ext, A, B, params, budget=None):
        key = self._key("AB", name, use_ext, A.label(), B.label(), params.s, params.p, budget)
        if key not in self._cache:
            g = self.ext(name) if use_ext else self.battery[name].field()
            self._cache[key] = estimate_AB(g, A, B, params, budget or self.budget, self.seed, geom=self.sgeom)
        return self._cache[key]

    def cross(self, name, params, budget=None):
        key = self._key("cross", name, params.s, params.p, budget)
        if key not in self._cache:
            self._cache[key] = estimate_cross(self.battery[name].field(), params, budget or self.budget,
                                              self.seed, geom=self.sgeom)
        return self._cache[key]


def _status(est):
    """(usable, reason) for a seminorm estimate entering a ratio."""
    if est.verdict == "divergent":
        return False, "divergent"
    if est.verdict == "inconclusive":
        return False, "inconclusive"
    if not math.isfinite(est.tail_bound) or "partial" in est.flags:
        return False, "partial (unbounded tail)"
    return True, ""


def _zero(est):
    return est.value <= TRIVIAL_ZERO and est.partial_sum <= TRIVIAL_ZERO


def _compare(report, point, lhs, rhs, scale):
    """Row for an upper bound ``lhs <= c rhs / scale``: ratio = scale * lhs / rhs."""
    info = {"lhs_err": lhs.std_error, "rhs_err": rhs.std_error, "lhs_verdict": lhs.verdict,
            "rhs_verdict": rhs.verdict}
    if _zero(rhs):
        ok = _zero(lhs)
        return report.add(point, "checked", lhs.value, rhs.value, 0.0 if ok else INF,
                          "trivially consistent" if ok else "rhs is zero but lhs is not", violation=not ok, **info)
    r_ok, r_why = _status(rhs)
    if not r_ok:
        return report.add(point, "skipped", lhs.value, rhs.value, None, f"rhs {r_why}", **info)
    if lhs.verdict == "divergent":
        return report.add(point, "checked", lhs.value, rhs.value, INF, "lhs divergent with finite rhs",
                          violation=True, **info)
    l_ok, l_why = _status(lhs)
    if not l_ok:
        return report.add(point, "skipped", lhs.value, rhs.value, scale * lhs.value / rhs.value,
                          f"lhs {l_why}", **info)
    return report.add(point, "checked", lhs.value, rhs.value, scale * lhs.value / rhs.value, **info)


# --------------------------------------------------------------------------- norm equivalence

def check_norm_equivalence(ctx, members=NORM_MEMBERS, s_grid=S_GRID, p_grid=P_GRID, with_norms=True):
    """Both sides of the offset/cross comparison on Omega u Omega^ext_inr x Omega^c.

    Rows of ``lower`` carry middle/cross (must be >= 3^(-d-p)); rows of
    ``upper`` carry s * middle/cross.
    """
    d = ctx.domain.d
    lower = InequalityReport("comp-semi lower")
    upper = InequalityReport("comp-semi upper")
    norms = InequalityReport("norm comparability")
    A = RegionSpec("OmegaUnionExt", ctx.inr)
    Bc = RegionSpec("OmegaComplement")
    for name in members:
        for p in p_grid:
            for s in s_grid:
                params = SobolevParams(s, p)
                point = {"function": name, "s": s, "p": p}
                left = ctx.cross(name, params)
                mid = ctx.offset(name, False, A, Bc, params)
                info = {"left": left.value, "left_err": left.std_error, "left_verdict": left.verdict,
                        "middle": mid.value, "middle_err": mid.std_error, "middle_verdict": mid.verdict}
                if _zero(left) and _zero(mid):
                    lower.add(point, "checked", mid.value, left.value, None, "trivially consistent", **info)
                    upper.add(point, "checked", mid.value, left.value, None, "trivially consistent", **info)
                    continue
                l_ok, l_why = _status(left)
                m_ok, m_why = _status(mid)
                if not l_ok:
                    lower.add(point, "skipped", reason=f"cross {l_why}", **info)
                    upper.add(point, "skipped", reason=f"cross {l_why}", **info)
                    continue
                if mid.verdict == "divergent":
                    # the middle quantity is at most c/s times a finite cross seminorm
                    lower.add(point, "checked", mid.value, left.value, INF, **info)
                    upper.add(point, "checked", mid.value, left.value, INF, "middle divergent, cross finite",
                              violation=True, **info)
                    continue
                if not m_ok:
                    lower.add(point, "skipped", reason=f"middle {m_why}", **info)
                    upper.add(point, "skipped", reason=f"middle {m_why}", **info)
                    continue
                c = 3.0 ** (-d - p)
                broken = mid.value + 3 * mid.std_error < c * (left.value - 3 * left.std_error)
                lower.add(point, "checked", mid.value, left.value, mid.value / left.value,
                          "below 3^(-d-p) beyond 3 sigma" if broken else "", violation=broken, bound=c, **info)
                upper.add(point, "checked", mid.value, left.value, s * mid.value / left.value, **info)
                if with_norms:
                    _norm_row(ctx, norms, name, params, left, point)
    _s_profile(upper, s_grid)
    return {"lower": lower, "upper": upper, "norms": norms}


def _norm_row(ctx, report, name, params, left, point):
    """The three full norms: pairwise ratios recorded."""
    f = ctx.battery[name].field()
    w_om = weighted_lp_norm(f, RegionSpec("Omega"), params.p, "inv_power", params, geom=ctx.sgeom)
    w_all = weighted_lp_norm(f, RegionSpec("FullSpace"), params.p, "inv_power", params, geom=ctx.sgeom)
    full = ctx.offset(name, False, RegionSpec("FullSpace"), RegionSpec("OmegaComplement"), params)
    if not math.isfinite(w_all.tail_bound) or not _status(full)[0]:
        report.add(point, "skipped", reason="full-space quantity not conclusive")
        return
    n1 = w_om.value + left.value
    n2 = w_all.value + left.value
    n3 = w_all.value + full.value
    if min(n1, n2, n3) <= 0:
        report.add(point, "checked", ratio=None, reason="trivially consistent")
        return
    ratios = {"n2/n1": n2 / n1, "n3/n1": n3 / n1, "n3/n2": n3 / n2}
    report.add(point, "checked", ratio=max(max(ratios.values()), 1.0 / min(ratios.values())),
               norms=[n1, n2, n3], ratios=ratios)


def _s_profile(report, s_grid):
    """Variation of the scaled ratio across the s-grid plus the fitted 1/s exponent."""
    groups = {}
    for r in report.checked:
        if r["ratio"] is None or not np.isfinite(r["ratio"]):
            continue
        key = (r["point"]["function"], r["point"]["p"])
        groups.setdefault(key, []).append((r["point"]["s"], r["ratio"]))
    variation, exponent = {}, {}
    for key, vals in groups.items():
        if len(vals) < 2:
            continue
        s, ratio = np.array(vals).T
        label = f"{key[0]},p={key[1]:g}"
        variation[label] = float(ratio.max() / ratio.min()) if ratio.min() > 0 else INF
        # unscaled ratio = ratio / s against 1/s
        exponent[label] = fit_exponent(1.0 / s, ratio / s)
    report.extra["s_variation"] = variation
    report.extra["exponent_vs_1_over_s"] = exponent
    report.extra["max_s_variation"] = max(variation.values()) if variation else math.nan


# --------------------------------------------------------------------------- extension bounds

def delta_eps_grid(inr):
    vals = (inr / 4.0, inr, INF)
    return [(a, b) for a in vals for b in vals if a <= b]


def check_extension_bounds(ctx, members=EXT_MEMBERS, s_grid=S_GRID, p=2.0, de_grid=None, betas=(0.0, 1.0, -2.0),
                           s_grid_int_int=None):
    """Both extension bounds on the (delta, eps) grid and the two simplified forms.

    The int-int and simpl2 rows use ``s_grid_int_int`` (default: the points of
    ``s_grid`` below 1)."""
    de_grid = delta_eps_grid(ctx.inr) if de_grid is None else de_grid
    ii = [s for s in s_grid if s < 1] if s_grid_int_int is None else list(s_grid_int_int)
    if any(not 0 < s < 1 for s in ii):
        raise ValueError("the int-int bound needs 0<s<1")
    full = sorted(set(s_grid) | set(ii))
    reps = {k: InequalityReport(k) for k in ("int-ext", "int-int", "simpl1", "simpl2")}
    Om, Oc, Rd = RegionSpec("Omega"), RegionSpec("OmegaComplement"), RegionSpec("FullSpace")
    for name in members:
        for s in full:
            params = SobolevParams(s, p)
            for dl, ep in de_grid:
                point = {"function": name, "s": s, "p": p, "delta": dl, "eps": ep}
                if s in s_grid:
                    lhs = ctx.offset(name, True, RegionSpec("OmegaIntDelta", dl), RegionSpec("OmegaExtEps", ep),
                                     params)
                    rhs = ctx.offset(name, False, RegionSpec("OmegaExtEps", dl), RegionSpec("OmegaExtEps", ep),
                                     params)
                    _compare(reps["int-ext"], point, lhs, rhs, s)
                if dl == ep and s in ii:
                    lhs = ctx.offset(name, True, RegionSpec("OmegaIntDelta", dl), RegionSpec("OmegaIntDelta", dl),
                                     params)
                    rhs = ctx.offset(name, False, RegionSpec("OmegaExtEps", dl), RegionSpec("OmegaExtEps", dl),
                                     params)
                    _compare(reps["int-int"], point, lhs, rhs, s * (1 - s))
            point = {"function": name, "s": s, "p": p}
            rhs = ctx.offset(name, False, Oc, Oc, params)
            if s in s_grid:
                _compare(reps["simpl1"], point, ctx.offset(name, True, Om, Oc, params), rhs, s)
            if s in ii:
                _compare(reps["simpl2"], point, ctx.offset(name, True, Rd, Rd, params), rhs, s * (1 - s))
    for key in ("simpl2", "int-int", "int-ext", "simpl1"):
        _sweep_variation(reps[key])
    reps["weighted"] = check_weighted_stability(ctx, members, (1.0, 2.0, p), betas)
    return reps


def _sweep_variation(report):
    groups = {}
    for r in report.checked:
        if r["ratio"] and np.isfinite(r["ratio"]) and r["ratio"] > 0:
            pt = r["point"]
            key = (pt["function"], pt.get("delta"), pt.get("eps"))
            groups.setdefault(key, []).append(r["ratio"])
    var = {f"{k[0]},{k[1]},{k[2]}": max(v) / min(v) for k, v in groups.items() if len(v) > 1}
    report.extra["s_variation"] = var
    report.extra["max_s_variation"] = max(var.values()) if var else math.nan


def check_weighted_stability(ctx, members, p_grid=(1.0, 2.0), betas=(0.0, 1.0, -2.0)):
    """||Ext f||_{L^p(Omega, w)} / ||f||_{L^p(Omega^ext_inr, w)} with w = (1+|x|)^beta, plus p = inf."""
    rep = InequalityReport("weighted")
    ext_region = RegionSpec("OmegaExtEps", ctx.inr)
    for name in members:
        E = ctx.ext(name)
        f = ctx.battery[name].field()
        for p in sorted(set(p_grid)):
            for beta in betas:
                point = {"function": name, "p": p, "beta": beta}
                lhs = weighted_lp_norm(E, RegionSpec("Omega"), p, "power", beta=beta, geom=ctx.sgeom)
                rhs = weighted_lp_norm(f, ext_region, p, "power", beta=beta, geom=ctx.sgeom)
                if rhs.value <= TRIVIAL_ZERO:
                    ok = lhs.value <= TRIVIAL_ZERO
                    rep.add(point, "checked", lhs.value, rhs.value, 0.0 if ok else INF, violation=not ok)
                elif any("boundary layer" in fl for fl in lhs.flags + rhs.flags):
                    rep.add(point, "skipped", lhs.value, rhs.value, None, "boundary layer inconclusive")
                else:
                    rep.add(point, "checked", lhs.value, rhs.value, (lhs.value / rhs.value) ** (1.0 / p))
        # p = inf, beta = 0 over sample points of the evaluable region
        W = ctx.geom.W
        ids = np.flatnonzero(W.evaluable)
        pts = W.center[ids]
        sup_ext = float(np.nanmax(np.abs(E.evaluate(pts)))) if len(ids) else 0.0
        sup_f = ctx.battery[name].sup
        point = {"function": name, "p": "inf", "beta": 0.0}
        if sup_f is None:
            rep.add(point, "skipped", sup_ext, None, None, "unbounded f")
        elif sup_f == 0:
            rep.add(point, "checked", sup_ext, 0.0, 0.0 if sup_ext == 0 else INF, violation=sup_ext != 0)
        else:
            rep.add(point, "checked", sup_ext, sup_f, sup_ext / sup_f)
    return rep


# --------------------------------------------------------------------------- s -> 1 limit

def check_bbm_limit(ctx, members=None, p=2.0, s_sequence=BBM_S, sqrt_ctx=None):
    """Gradient bound, (1-s)-scaled interior seminorms, and the square-root example."""
    members = [m for m in SMOOTH if ctx.battery[m].sup is not None or ctx.domain.bounded] if members is None else members
    grad = InequalityReport("gradient bound")
    scaled = InequalityReport("(1-s) interior")
    Om = RegionSpec("Omega")
    ext_inr = RegionSpec("OmegaExtEps", ctx.inr)
    for name in members:
        E = ctx.ext(name)
        g = gradient_lp_norm(E, p)
        rhs = ctx.offset(name, False, ext_inr, ext_inr, SobolevParams(1.0, p))
        point = {"function": name, "p": p}
        info = {"grad_verdict": g.verdict}
        if _zero(rhs):
            ok = abs(g.value) <= TRIVIAL_ZERO
            grad.add(point, "checked", g.value, rhs.value, 0.0 if ok else INF, violation=not ok, **info)
        elif rhs.verdict == "divergent":
            grad.add(point, "checked", g.value, rhs.value, 0.0, "rhs infinite (inequality trivial)", **info)
        elif g.verdict == "divergent":
            grad.add(point, "checked", g.value, rhs.value, INF, "gradient not in L^p with finite rhs",
                     violation=True, **info)
        elif g.verdict != "convergent" or rhs.verdict != "convergent":
            grad.add(point, "skipped", g.value, rhs.value, None, "inconclusive", **info)
        else:
            grad.add(point, "checked", g.value, rhs.value, g.value / rhs.value, **info)
        vals = []
        for s in s_sequence:
            est = ctx.offset(name, True, Om, Om, SobolevParams(s, p))
            pt = {"function": name, "p": p, "s": s}
            if _zero(est):
                scaled.add(pt, "checked", est.value, None, 0.0, "trivially consistent")
                vals.append(0.0)
            elif est.verdict == "convergent":
                scaled.add(pt, "checked", est.value, None, (1 - s) * est.value)
                vals.append((1 - s) * est.value)
            else:
                scaled.add(pt, "skipped", est.value, None, None, f"seminorm {est.verdict}")
        # bounded: the value at the last s does not exceed 10x the earlier maximum
        scaled.extra[f"{name} growth"] = _growth(vals)
    out = {"gradient": grad, "scaled": scaled}
    out["sqrt_example"] = sqrt_example_growth(sqrt_ctx or ctx, p, s_sequence)
    return out


def _growth(vals):
    vals = [v for v in vals if np.isfinite(v)]
    if len(vals) < 2:
        return math.nan
    head = max(vals[:-1])
    if head <= 0:
        return 0.0 if vals[-1] <= 0 else INF
    return vals[-1] / head


def sqrt_example_growth(ctx, p=2.0, s_sequence=BBM_S):
    """Cross seminorm of the square-root example: growth of the raw value and
    boundedness of the (1-s)-scaled value along the s-sequence."""
    rep = InequalityReport("sqrt example")
    raw, scl = [], []
    for s in s_sequence:
        est = ctx.cross("sqrt_example", SobolevParams(s, p))
        pt = {"function": "sqrt_example", "p": p, "s": s}
        rep.add(pt, "checked" if math.isfinite(est.value) else "skipped", est.value, None, (1 - s) * est.value,
                "" if math.isfinite(est.value) else f"cross {est.verdict}", verdict=est.verdict,
                partial_sum=est.partial_sum, std_error=est.std_error)
        raw.append(est.value)
        scl.append((1 - s) * est.value)
    raw, scl = np.array(raw), np.array(scl)
    rep.extra["growth"] = float(raw[-1] / raw[0]) if raw[0] > 0 else math.nan
    rep.extra["monotone"] = bool(np.all(np.diff(raw) > 0))
    rep.extra["scaled_growth"] = _growth(list(scl))
    return rep


# --------------------------------------------------------------------------- threshold

def check_char_threshold(ctx, p_grid=P_GRID, s_grid=S_GRID, budget=None, band=0.05):
    """Verdicts of the cross seminorm of 1_Omega against the s < 1/p rule."""
    rep = InequalityReport("char threshold")
    for p in p_grid:
        for s in s_grid:
            est = ctx.cross("indicator", SobolevParams(s, p), budget)
            expect = "convergent" if s < 1 / p - band else ("divergent" if s > 1 / p + band else "either")
            pt = {"function": "indicator", "p": p, "s": s}
            info = {"verdict": est.verdict, "expected": expect, "shell_ratio": est.ratio,
                    "predicted_ratio": 2.0 ** (-(1 - s * p)), "value": est.value, "std_error": est.std_error}
            if expect == "either":
                rep.add(pt, "checked", reason="inside exclusion band", **info)
            elif est.verdict == "inconclusive":
                rep.add(pt, "skipped", reason="inconclusive", **info)
            elif est.verdict == expect:
                rep.add(pt, "checked", **info)
            else:
                rep.add(pt, "checked", reason=f"expected {expect}", violation=True, **info)
    return rep


# --------------------------------------------------------------------------- refinement

def refinement_drift(reports_a, reports_b):
    """Relative change of each recorded constant between two resolutions."""
    out = {}
    for key in reports_a:
        ca, cb = reports_a[key].constant, reports_b[key].constant
        if np.isfinite(ca) and np.isfinite(cb) and max(ca, cb) > 0:
            out[key] = abs(cb - ca) / max(ca, cb)
        else:
            out[key] = math.nan
    return out


def run_all(ctx, s_grid=S_GRID, p_grid=P_GRID, p_ext=2.0, threshold_budget=None, sqrt_ctx=None,
            members_norm=NORM_MEMBERS, members_ext=EXT_MEMBERS):
    """All four checks; returns a flat dict of reports."""
    out = {}
    ne = check_norm_equivalence(ctx, members_norm, s_grid, p_grid)
    out.update({f"norm {k}": v for k, v in ne.items()})
    eb = check_extension_bounds(ctx, members_ext, s_grid, p_ext)
    out.update({f"ext {k}": v for k, v in eb.items()})
    bb = check_bbm_limit(ctx, p=p_ext, sqrt_ctx=sqrt_ctx)
    out.update({f"bbm {k}": v for k, v in bb.items()})
    out["threshold"] = check_char_threshold(ctx, p_grid, s_grid, threshold_budget)
    return out
