"""Test functions for the inequality checks.

Each member is a function on all of R^d together with what is known about
it: a sup bound, the constant it takes far away, smoothness, and membership
tags such as ``"W^{s,p}(Omega|Omega^c) iff s<1/p"``.  Members are restricted
to the complement when fed to the extension operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .extend import ComplementFunction, GridFunction
from .geometry import INF, as_points

BATTERY_NAMES = ("const", "x1", "indicator", "sqrt_example", "collar_0.25", "collar_0.5", "collar_1",
                 "bump", "random_grid")
SMOOTH = ("const", "x1", "bump")


@dataclass
class BatteryMember:
    name: str
    func: object
    sup: float | None
    far_value: float | None
    far_radius: float
    smooth: bool = False
    continuous_on_complement: bool = True
    modulus: object = None
    tags: dict = field(default_factory=dict)
    grid: object = None

    def __call__(self, x):
        return np.asarray(self.func(x), float)

    def complement_function(self):
        return ComplementFunction(self.func, self.name, self.sup, self.sup is not None, self.modulus,
                                  self.far_value, self.grid, self.far_radius)

    def field(self):
        from .seminorm import Field
        return Field(self.func, self.name, self.sup, self.far_value, self.far_radius)


def _outer_radius(domain):
    return float(max(np.max(np.abs(domain.bbox[0])), np.max(np.abs(domain.bbox[1]))))


def make_member(name, domain, seed=0, grid_cells=16):
    """Battery member ``name`` adapted to a bounded ``domain``."""
    d = domain.d
    R = _outer_radius(domain) if domain.bounded else 1.0
    if name == "const":
        return BatteryMember(name, lambda x: np.ones(len(x)), 1.0, 1.0, 0.0, smooth=True,
                             modulus=lambda r: 0.0 * r, tags={"all": True})
    if name == "x1":
        return BatteryMember(name, lambda x: as_points(x, d)[:, 0].copy(), None, None, INF, smooth=True,
                             modulus=lambda r: r, tags={"L^p": False})
    if name == "indicator":
        return BatteryMember(name, lambda x: domain.contains(as_points(x, d)).astype(float), 1.0, 0.0, R,
                             tags={"W^{s,p}(Omega|Omega^c)": "iff s<1/p"})
    if name == "sqrt_example":
        def f(x):
            r = np.linalg.norm(as_points(x, d), axis=1)
            return np.where((r > 1.0) & (r < 2.0), np.sqrt(np.clip(r - 1.0, 0.0, None)), 0.0)
        return BatteryMember(name, f, 1.0, 0.0, 2.0, modulus=lambda r: np.sqrt(r),
                             tags={"(1-s)-scaled cross seminorm": "bounded", "cross seminorm as s->1": "diverges"})
    if name.startswith("collar_"):
        alpha = float(name.split("_")[1])

        def f(x, a=alpha):
            return np.minimum(domain.delta(as_points(x, d)), 1.0) ** a
        return BatteryMember(name, f, 1.0, 1.0, R + 1.0, modulus=lambda r, a=alpha: r ** a,
                             tags={"alpha": alpha})
    if name == "bump":
        rad = 1.5 * R

        def f(x):
            t = np.sum(as_points(x, d) ** 2, axis=1) / rad ** 2
            out = np.zeros(len(t))
            m = t < 1.0
            out[m] = np.exp(1.0 - 1.0 / (1.0 - t[m]))
            return out
        # |f'| <= 2.6/rad bounds the modulus
        return BatteryMember(name, f, 1.0, 0.0, rad, smooth=True, modulus=lambda r: 2.6 * r / rad,
                             tags={"all": True})
    if name == "random_grid":
        rng = np.random.default_rng(seed)
        half = 2.0 * R
        grid = GridFunction(np.full(d, -half), np.full(d, 2 * half / grid_cells),
                            rng.random((grid_cells,) * d), 0.0)
        return BatteryMember(name, grid, 1.0, 0.0, half, continuous_on_complement=False, grid=grid,
                             tags={"seed": seed})
    raise KeyError(f"unknown battery member {name!r}; choose from {BATTERY_NAMES}")


def make_battery(domain, names=None, seed=0):
    names = BATTERY_NAMES if names is None else names
    return {n: make_member(n, domain, seed) for n in names}
