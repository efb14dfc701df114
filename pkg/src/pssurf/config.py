"""Default tolerances and run parameters shared by the command line tools."""
from __future__ import annotations

TOLERANCES = {
    "seq": 1e-10,          # lemma residuals SEq1n..SEq3n
    "det": 1e-10,          # obstruction determinant
    "codazzi": 1e-9,       # symbolic Codazzi residual for the sign pairing
    "compat": 1e-3,        # frame system integrability (warning only)
    "drift": 1e-6,         # frame orthonormality drift accepted by `immerse`
    "drift_abort": 1e-4,   # drift that aborts integration
    "path": 1e-5,          # path-independence defect at probe vertices
    "metric": 1e-4,        # relative first fundamental form mismatch
    "curvature": 0.02,     # |K + 1| on interior vertices
    "foliation": 1e-6,     # mean curvature spread along a foliation line (grid)
    "solve_error": 1e-5,   # max error against --exact
}

DEFAULTS = {
    "seed": 0,
    "samples": 100,
    "xmin": 0.0,
    "xmax": 6.283185307179586,
    "nx": 128,
    "boundary": "periodic",
    "dt": 1e-4,
    "tend": 0.5,
    "store_every": 1,
    "stencil": 4,
    "l": 3.0,
    "gamma": 1.0,
    "margin": 0.02,
    "interior_cells": 3,
}


def parse_tolerances(items) -> dict:
    """Apply ``NAME=VALUE`` overrides to a copy of :data:`TOLERANCES`."""
    tol = dict(TOLERANCES)
    for item in items or ():
        name, sep, value = item.partition("=")
        name = name.strip()
        if not sep or name not in tol:
            raise ValueError(f"bad tolerance override {item!r}; known names: {', '.join(sorted(tol))}")
        tol[name] = float(value)
    return tol
