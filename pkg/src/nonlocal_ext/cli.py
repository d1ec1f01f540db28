"""Command-line front end.

    nonlocal-ext {decompose,extend,seminorm,verify} [--config FILE] [--seed N]
                 [--out DIR] [--threads N] [--budget-scale X]

Every run writes into a fresh directory: the resolved configuration
(``config.yaml``) plus the command's tables.  Files are produced in a
temporary sibling directory and renamed into place at the end, so a failed
run leaves nothing behind.  Exit codes: 0 success, 1 violation event,
2 configuration or input error, 3 no conclusive verdict.
"""
from __future__ import annotations

import argparse
import math
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .battery import make_member
from .config import ConfigError, dump_config, load_config
from .extend import ComplementFunction, GridFunction, build_extension, build_geometry, inward_normal
from .formats import FormatError, GridDomain, read_grid, write_csv, write_grid, write_records
from .geometry import GeometryError, RegionSpec, SobolevParams, make_builtin_domain, plumpness_probe
from .reflect import ThicknessParams, thickness_audit
from .seminorm import SeminormError, SeminormGeometry, default_window, estimate_pair
from .whitney import decompose

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_INCONCLUSIVE = 0, 1, 2, 3
MARKER = "config.yaml"


class InputError(RuntimeError):
    pass


# --------------------------------------------------------------------------- setup

def build_domain(cfg):
    dom = cfg["domain"]
    if dom["name"] == "grid":
        return GridDomain.from_file(dom["grid_file"])
    params = {k: (int(v) if k == "n_max" else v) for k, v in dom["params"].items()}
    return make_builtin_domain(dom["name"], dom["d"], **params)


def resolve_runtime(cfg, domain):
    """Replace automatic settings by the values actually used, so the echo is complete."""
    from .whitney import DEFAULT_M_MAX
    if cfg["window"] is None:
        lo, hi = default_window(domain)
        cfg["window"] = [lo.tolist(), hi.tolist()]
    if cfg["m_max"] is None:
        cfg["m_max"] = DEFAULT_M_MAX[domain.d]
    eb = cfg["verify"]["extension_bounds"]
    if eb["delta_eps"] is None:
        from .verify import delta_eps_grid
        eb["delta_eps"] = [list(de) for de in delta_eps_grid(float(domain.inr_omega))]
    bl = cfg["verify"]["bbm_limit"]
    if bl["sqrt_domain_d"] is None:
        bl["sqrt_domain_d"] = domain.d
    ct = cfg["verify"]["char_threshold"]
    if ct["budget"] is None:
        ct["budget"] = cfg["budget"]
    if cfg["extend"]["box"] is None:
        lo, hi = _box_of(cfg, domain)
        cfg["extend"]["box"] = [lo.tolist(), hi.tolist()]
    return cfg


def window_of(cfg, domain):
    if cfg["window"] is None:
        return default_window(domain)
    lo, hi = cfg["window"]
    if len(lo) != domain.d:
        raise InputError(f"window has dimension {len(lo)} but the domain has d={domain.d}")
    return np.array(lo, float), np.array(hi, float)


def thickness_of(cfg):
    t = cfg["thickness"]
    return ThicknessParams(M=t["M"], lam=t["lam"], kappa=t["kappa"])


def function_of(cfg, domain):
    """Battery member or sampled grid, restricted to the complement."""
    fc = cfg["function"]
    if fc["grid_file"]:
        values, origin, spacing = read_grid(fc["grid_file"])
        if values.ndim != domain.d:
            raise InputError(f"function grid is {values.ndim}-dimensional but the domain has d={domain.d}")
        # sample points become cell centres of a piecewise-constant field
        grid = GridFunction(origin - 0.5 * spacing, spacing, values, fc["grid_outside"])
        big = float(np.max(np.abs(values)))
        corner = np.maximum(np.abs(grid.origin), np.abs(grid.origin + grid.spacing * np.array(values.shape)))
        return ComplementFunction(grid, f"grid:{Path(fc['grid_file']).name}", max(big, abs(fc["grid_outside"])),
                                  True, None, fc["grid_outside"], grid, float(corner.max())), None
    if not fc["name"]:
        raise InputError("function.name or function.grid_file is required")
    member = make_member(fc["name"], domain, cfg["battery"]["seed"])
    return member.complement_function(), member


def _region(spec):
    if spec["tag"] in ("OmegaIntDelta", "OmegaExtEps", "OmegaUnionExt"):
        return RegionSpec(spec["tag"], spec["width"])
    return RegionSpec(spec["tag"])


def scaled_budget(budget, scale):
    b = int(round(budget * scale))
    if b < 10 ** 4:
        raise InputError(f"budget {budget} x {scale} = {b} is below the minimum of 10^4 samples")
    return b


# --------------------------------------------------------------------------- decompose

def _cube_records(W):
    for i in range(len(W)):
        yield {"id": i, "level": int(W.levels[i]), "lattice": W.lattice[i], "lo": W.lo[i], "hi": W.hi[i],
               "dist": float(W.dist[i]), "diam": float(W.diam[i]), "truncated": bool(W.truncated[i]),
               "undersized": bool(W.undersized[i])}


def _reflection_records(refl):
    for i, c in enumerate(refl.cubes):
        ok = bool(refl.ok[i])
        yield {"cube": int(c), "ok": ok, "level": int(refl.level[i]) if ok else None,
               "lattice": refl.lattice[i] if ok else None, "boundary_point": refl.y[i],
               "point": refl.z[i] if ok else None, "ratios": refl.ratios[i] if ok else None}


def _plumpness(domain, kappa, seed):
    if not domain.bounded:
        return None
    if domain.name == "annuli_balls":
        n_max = int(domain.params["n_max"])
        report = plumpness_probe(domain, kappa, [2.0 ** (-n) for n in range(1, n_max + 1)], boundary_samples=8,
                                 extra_points=np.zeros((1, domain.d)), seed=seed)
        origin = report.best_ratio[-1]
        return {"kappa": kappa, "pass": report.all_pass, "r_grid": report.r_grid,
                "best_kappa_per_r": report.best_kappa_per_r, "origin_ratio": origin}
    r_grid = domain.inr_omega * np.array([0.125, 0.25, 0.5, 1.0])
    report = plumpness_probe(domain, kappa, r_grid, boundary_samples=16, seed=seed)
    return {"kappa": kappa, "pass": report.all_pass, "r_grid": report.r_grid,
            "best_kappa_per_r": report.best_kappa_per_r}


def cmd_decompose(cfg, out, args):
    domain = build_domain(cfg)
    window = window_of(cfg, domain)
    params = thickness_of(cfg)
    audits = []
    for side, source in (("exterior", "omega"), ("interior", "complement")):
        W = decompose(domain, source, window, cfg["m_max"])
        write_records(out / f"cubes_{source}.jsonl", "cubes", _cube_records(W), domain=domain.name, side=source,
                      window=window, m_max=W.m_max, root_level=W.root_level)
        rep, refl = thickness_audit(domain, side, window, W.m_max, params, W=W)
        write_records(out / f"reflection_{side}.jsonl", "reflection", _reflection_records(refl),
                      domain=domain.name, source_side=source, M=refl.M, lam=params.lam, kappa=params.kappa)
        audits.append({"audit": side, "cubes": len(W), "M": refl.M, **rep.as_dict()})
    plump = _plumpness(domain, params.kappa, cfg["seed"])
    if plump is not None:
        audits.append({"audit": "plumpness", **plump})
    write_records(out / "audit.jsonl", "audit", audits, domain=domain.name)
    for a in audits:
        print(f"{a['audit']:<10} pass={a['pass']}" + (f" cubes={a['cubes']}" if "cubes" in a else ""))
    return EXIT_OK


# --------------------------------------------------------------------------- extend

def _box_of(cfg, domain):
    if cfg["extend"]["box"] is not None:
        lo, hi = cfg["extend"]["box"]
        if len(lo) != domain.d:
            raise InputError(f"extend.box has dimension {len(lo)} but the domain has d={domain.d}")
        return np.array(lo, float), np.array(hi, float)
    lo, hi = domain.bbox
    lo = np.where(np.isfinite(lo), lo, -1.0)
    hi = np.where(np.isfinite(hi), hi, 1.0)
    pad = 0.25 * (hi - lo)
    return lo - pad, hi + pad


def _ray_starts(domain, n_rays):
    lo, hi = domain.bbox
    lo = np.where(np.isfinite(lo), lo, -1.0)
    hi = np.where(np.isfinite(hi), hi, 1.0)
    c, rad = 0.5 * (lo + hi), float(np.max(hi - lo))
    if domain.d == 1:
        raw = np.array([[c[0] - rad], [c[0] + rad]])
    else:
        t = 2 * math.pi * (np.arange(n_rays) + 0.5) / n_rays
        raw = c + rad * np.stack([np.cos(t), np.sin(t)], axis=1)
    return domain.nearest_boundary(raw)


def cmd_extend(cfg, out, args):
    domain = build_domain(cfg)
    f, member = function_of(cfg, domain)
    ec = cfg["extend"]
    geom = build_geometry(domain, window_of(cfg, domain), cfg["m_max"], thickness_of(cfg))
    E = build_extension(f, geom)
    lo, hi = _box_of(cfg, domain)
    n = ec["resolution"]
    axes = [np.linspace(lo[j], hi[j], n) for j in range(domain.d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, domain.d)
    spacing = (hi - lo) / (n - 1)
    vals = E.evaluate(pts)
    write_grid(out / "field.nlxgrid", vals.reshape((n,) * domain.d), lo, spacing)
    grad = np.full((len(pts), domain.d), np.nan)
    inside = domain.contains(pts)
    if inside.any():
        grad[inside] = E.gradient(pts[inside], strict=False)
    for j in range(domain.d):
        write_grid(out / f"gradient_{j}.nlxgrid", grad[:, j].reshape((n,) * domain.d), lo, spacing)

    # profiles along inward normals through sampled boundary points
    z0 = _ray_starts(domain, ec["rays"])
    half = 0.25 * min(float(domain.inr_omega), float(np.max(hi - lo)))
    t = np.linspace(-half, half, ec["ray_samples"])
    rows, jumps, scales = [], [], []
    # jump across the boundary: innermost evaluable point of a dyadic
    # sequence against its mirror image outside
    tk = 2.0 ** -np.arange(0, geom.W.m_max + 6, dtype=float) * float(domain.inr_omega)
    for r, z in enumerate(z0):
        nu = inward_normal(domain, z)
        xs = z + t[:, None] * nu
        v = E.evaluate(xs)
        rows += [[r, ti, *x, vi] for ti, x, vi in zip(t, xs, v)]
        probe = z + tk[:, None] * nu
        ok = np.flatnonzero(domain.contains(probe) & ~domain.contains(z - tk[:, None] * nu)
                            & np.isfinite(E.evaluate(probe)))
        if len(ok):
            h = tk[ok[-1]]
            pair = E.evaluate(np.stack([z + h * nu, z - h * nu]))
            jumps.append(float(abs(pair[0] - pair[1])))
            scales.append(float(2 * h))
        else:
            jumps.append(math.nan)
            scales.append(math.nan)
    cols = ["ray", "t"] + [f"x{j}" for j in range(domain.d)] + ["value"]
    write_csv(out / "rays.csv", "ray_profiles", cols, rows)
    modulus = None
    if member is not None and member.modulus is not None:
        modulus = [float(member.modulus(h)) for h in scales]
    summary = {"function": f.name, "domain": domain.name, "m_max": geom.W.m_max, "resolution": n,
               "covered_fraction": float(np.mean(np.isfinite(vals))), "max_jump": float(np.nanmax(jumps)),
               "jumps": jumps, "jump_scales": scales, "modulus_at_scale": modulus}
    write_records(out / "extend_summary.jsonl", "extend_summary", [summary])
    print(f"extend {f.name}: covered={summary['covered_fraction']:.3f} max_jump={summary['max_jump']:.3g}")
    return EXIT_OK


# --------------------------------------------------------------------------- seminorm

def cmd_seminorm(cfg, out, args):
    domain = build_domain(cfg)
    sc = cfg["seminorm"]
    params = SobolevParams(sc["s"], sc["p"])
    budget = scaled_budget(cfg["budget"], args.budget_scale)
    window = window_of(cfg, domain)
    f, member = function_of(cfg, domain)
    if sc["kernel"] == "cross":
        A, B = RegionSpec("Omega"), RegionSpec("OmegaComplement")
    else:
        A, B = _region(sc["A"]), _region(sc["B"])
    if sc["use_extension"]:
        geom = build_geometry(domain, window, cfg["m_max"], thickness_of(cfg))
        g = build_extension(f, geom)
        sgeom = SeminormGeometry.from_extension(geom)
    else:
        if member is None:
            raise InputError("use_extension: false needs a battery function (grid data lives on the complement)")
        g = member.field()
        sgeom = SeminormGeometry(domain, window, cfg["m_max"])
    est = estimate_pair(g, A, B, params, budget, cfg["seed"], sc["kernel"], geom=sgeom)
    rec = {"function": f.name, "domain": domain.name, "kernel": sc["kernel"], "A": A.label(), "B": B.label(),
           "s": params.s, "p": params.p, "use_extension": sc["use_extension"], **est.as_record()}
    write_records(out / "estimate.jsonl", "seminorm_estimate", [rec])
    print(f"{est.label or A.label() + ' x ' + B.label()}: value={est.value:.6g} +- {est.std_error:.2g} "
          f"verdict={est.verdict}")
    return EXIT_INCONCLUSIVE if est.verdict == "inconclusive" else EXIT_OK


# --------------------------------------------------------------------------- verify

def cmd_verify(cfg, out, args):
    from . import verify as V

    domain = build_domain(cfg)
    vc = cfg["verify"]
    budget = scaled_budget(cfg["budget"], args.budget_scale)
    window = window_of(cfg, domain)

    def context(m_max):
        return V.VerifyContext(domain, m_max, budget, cfg["seed"], thickness_of(cfg), window,
                               cfg["battery"]["seed"])

    def run(ctx):
        reports = {}
        if "norm_equivalence" in vc["checks"]:
            c = vc["norm_equivalence"]
            reps = V.check_norm_equivalence(ctx, c["members"], c["s_grid"], c["p_grid"])
            reports.update({f"norm {k}": r for k, r in reps.items()})
        if "extension_bounds" in vc["checks"]:
            c = vc["extension_bounds"]
            reps = V.check_extension_bounds(ctx, c["members"], c["int_ext_s"], c["p"], c["delta_eps"], c["betas"],
                                            s_grid_int_int=c["int_int_s"])
            reports.update({f"ext {k}": r for k, r in reps.items()})
        if "bbm_limit" in vc["checks"]:
            c = vc["bbm_limit"]
            sqrt_ctx = None
            if c["sqrt_domain_d"] not in (None, domain.d):
                sdom = make_builtin_domain("ball", c["sqrt_domain_d"])
                sqrt_ctx = V.VerifyContext(sdom, None, budget, cfg["seed"], thickness_of(cfg), None,
                                           cfg["battery"]["seed"])
            reps = V.check_bbm_limit(ctx, None, c["p"], c["s_sequence"], sqrt_ctx)
            reports.update({f"bbm {k}": r for k, r in reps.items()})
        if "char_threshold" in vc["checks"]:
            c = vc["char_threshold"]
            tb = scaled_budget(c["budget"], args.budget_scale)
            reports["threshold"] = V.check_char_threshold(ctx, c["p_grid"], c["s_grid"], tb)
        return reports

    ctx = context(cfg["m_max"])
    reports = run(ctx)
    records = [r.as_record() for r in reports.values()]
    if vc["refinement"]:
        finer = run(context(ctx.m_max + 1))
        drift = V.refinement_drift(reports, finer)
        records.append({"inequality": "refinement", "m_max": [ctx.m_max, ctx.m_max + 1],
                        "constants": {k: [V._clean(reports[k].constant), V._clean(finer[k].constant)]
                                      for k in reports},
                        "drift": V._clean(drift)})
    write_records(out / "report.jsonl", "verify_report", records, domain=domain.name, m_max=ctx.m_max,
                  budget=budget, seed=cfg["seed"])
    lines = [f"{'check':<26}{'points':>7}{'checked':>8}{'skipped':>8}{'violations':>11}{'constant':>12}"]
    for key, r in reports.items():
        n = len(r.rows)
        lines.append(f"{key:<26}{n:>7}{len(r.checked):>8}{n - len(r.checked):>8}{len(r.violations):>11}"
                     f"{r.constant:>12.4g}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    if any(r.violations for r in reports.values()):
        return EXIT_VIOLATION
    if any(r.rows and not r.checked for r in reports.values()):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


COMMANDS = {"decompose": cmd_decompose, "extend": cmd_extend, "seminorm": cmd_seminorm, "verify": cmd_verify}


# --------------------------------------------------------------------------- driver

def parser():
    ap = argparse.ArgumentParser(prog="nonlocal-ext", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="YAML run configuration (defaults apply when omitted)")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    ap.add_argument("--out", type=Path, help="output directory (overrides the configured one)")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker count; results do not depend on it")
    ap.add_argument("--budget-scale", type=float, default=1.0, help="multiply every sample budget")
    return ap


def _prepare_target(out):
    if out.exists():
        if not out.is_dir():
            raise InputError(f"{out} exists and is not a directory")
        if any(out.iterdir()) and not (out / MARKER).exists():
            raise InputError(f"{out} is not empty and was not written by this tool; refusing to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise InputError("--threads must be at least 1")
        if not (args.budget_scale > 0 and math.isfinite(args.budget_scale)):
            raise InputError("--budget-scale must be a positive number")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["output"] = str(args.out)
        resolve_runtime(cfg, build_domain(cfg))
        scaled_budget(cfg["budget"], args.budget_scale)
    except (ConfigError, InputError, GeometryError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["output"])
    try:
        tmp = _prepare_target(out)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        (tmp / MARKER).write_text(f"# nonlocal-ext {__version__} {args.command}\n" + dump_config(cfg),
                                  encoding="utf-8")
        code = COMMANDS[args.command](cfg, tmp, args)
    except (InputError, GeometryError, FormatError, SeminormError, KeyError, ValueError) as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
