"""Regenerate the frozen 1-D reference values in seminorm_1d.json.

Values come from scipy adaptive quadrature of the defining double integrals on
Omega = (-1, 1), independently of the package; closed forms, where they
exist, are stored next to them as a cross-check.
"""
import json
import math
from pathlib import Path

import numpy as np
from scipy import integrate

INF = math.inf


def dist(x):
    return abs(abs(x) - 1.0)


def dbl(func, xr, yr, xpts=None, ypts=None):
    def inner(x):
        return integrate.quad(lambda y: func(x, y), *yr, points=ypts, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
    return integrate.quad(inner, *xr, points=xpts, limit=400, epsabs=1e-12, epsrel=1e-10)[0]


def cross_indicator(s, p):
    a = s * p
    # inner integral over y > 1 in closed form, outer by quadrature; times 2 for y < -1
    val = 2 * integrate.quad(lambda x: (1 - x) ** (-a) / a, -1, 1, limit=400)[0]
    return val, 2 * 2 ** (1 - a) / (a * (1 - a))


def offset_indicator(s, p):
    a = s * p
    k = 1 + a
    val = 2 * dbl(lambda x, y: (abs(x - y) + dist(x) + dist(y)) ** (-k), (-1, 1), (1, INF))
    return val, 2 ** (-a) * (1 + 1 / (1 - a)) / a


def offset_indicator_layers(s, p, dl, ep):
    k = 1 + s * p
    f = lambda x, y: (abs(x - y) + dist(x) + dist(y)) ** (-k)
    val = 2 * (dbl(f, (1 - dl, 1), (1, 1 + ep)) + dbl(f, (-1, -1 + dl), (1, 1 + ep)))
    return val, None


def offset_x1_omega(s, p):
    k = 1 + s * p
    val = dbl(lambda x, y: abs(x - y) ** p / (abs(x - y) + dist(x) + dist(y)) ** k, (-1, 1), (-1, 1),
              xpts=[0.0], ypts=[0.0])
    return val, None


def cross_sqrt(s, p):
    k = 1 + s * p

    def f(y):
        r = abs(y)
        return math.sqrt(r - 1) if 1 < r < 2 else 0.0
    val = 2 * dbl(lambda y, x: abs(f(y)) ** p * abs(x - y) ** (-k), (1, 2), (-1, 1))
    closed = 4 * math.log(1.5) if (s, p) == (0.5, 2) else None
    return val, closed


def wnorm_const(s, p, region):
    a = s * p
    w = lambda x: (1 + abs(x)) ** (-1 - a)
    if region == "Omega":
        val = integrate.quad(w, -1, 1)[0]
        return val, 2 * (1 - 2 ** (-a)) / a
    val = 2 * integrate.quad(w, 1, INF)[0]
    return val, 2 * 2 ** (-a) / a


def wnorm_x1_beta(p, beta):
    val = integrate.quad(lambda x: abs(x) ** p * (1 + abs(x)) ** beta, -1, 1, points=[0.0])[0]
    return val, None


def main():
    out = []

    def add(kind, args, fn):
        val, closed = fn(*args)
        out.append({"kind": kind, "args": list(args), "value": val, "closed_form": closed})

    for s, p in [(0.25, 2), (0.4, 2), (0.1, 1), (0.5, 1), (0.2, 3)]:
        add("cross_indicator", (s, p), cross_indicator)
        add("offset_indicator", (s, p), offset_indicator)
    add("offset_indicator_layers", (0.4, 2, 0.5, 0.5), offset_indicator_layers)
    add("offset_indicator_layers", (0.25, 2, 0.25, 1.0), offset_indicator_layers)
    for s, p in [(0.5, 2), (0.3, 1), (0.9, 2)]:
        add("offset_x1_omega", (s, p), offset_x1_omega)
    for s, p in [(0.5, 2), (0.25, 2)]:
        add("cross_sqrt", (s, p), cross_sqrt)
    for s, p in [(0.5, 2), (0.2, 1)]:
        for region in ("Omega", "OmegaComplement"):
            add("wnorm_const", (s, p, region), wnorm_const)
    add("wnorm_x1_beta", (2, 1.0), wnorm_x1_beta)
    add("wnorm_x1_beta", (1, -2.0), wnorm_x1_beta)
    path = Path(__file__).with_name("seminorm_1d.json")
    path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    for r in out:
        print(r)


if __name__ == "__main__":
    main()
