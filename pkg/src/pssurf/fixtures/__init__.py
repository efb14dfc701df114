"""Bundled systems for groups I-V, plus the sine-Gordon kink and its two coframes."""
from __future__ import annotations

from importlib import resources

import numpy as np

from ..system import PssSystem, parse_system

GROUPS = ("group1", "group2", "group3", "group4", "group5")


def names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files(__name__).iterdir() if p.name.endswith(".pss"))


def path(name: str):
    return resources.files(__name__) / f"{name}.pss"


def load(name: str) -> PssSystem:
    return parse_system(path(name).read_text(encoding="utf-8"), name=name)


# sine-Gordon u_xt = sin u

def kink(x, t, a: float = 1.0):
    """u = 4 atan(exp(a x + t / a)) with its exact first derivatives."""
    s = a * np.asarray(x, dtype=float) + np.asarray(t, dtype=float) / a
    u = 4.0 * np.arctan(np.exp(s))
    du = 2.0 / np.cosh(s)
    return u, a * du, du / a


def kink_grid(x0: float, t0: float, n: int = 128, h: float = 1e-2, a: float = 1.0):
    x = x0 + h * np.arange(n)
    t = t0 + h * np.arange(n)
    X, T = np.meshgrid(x, t)
    u, ux, ut = kink(X, T, a)
    return x, t, u, ux, ut


def sg_structure_forms(u, ux, ut, eta: float = 1.0) -> dict:
    """Coframe with f21 = eta (the parameter-carrying one)."""
    z = np.zeros_like(u)
    return {"f11": z, "f12": np.sin(u) / eta, "f21": np.full_like(u, eta),
            "f22": np.cos(u) / eta, "f31": ux, "f32": z}


def sg_immersion_forms(u, ux, ut) -> dict:
    """Coframe whose second fundamental form is diagonal in tan(u/2), -cot(u/2)."""
    c, s = np.cos(u / 2), np.sin(u / 2)
    return {"f11": c, "f12": c, "f21": s, "f22": -s, "f31": ux / 2, "f32": -ut / 2}


def sg_abc(u):
    return np.tan(u / 2), np.zeros_like(u), -1.0 / np.tan(u / 2)
