"""Linear obstructions ruling out a second fundamental form for groups II-V.

For each non-consistent group the Codazzi equations reduce to a 2x2 system
M (a - c, 2b)^T = 0.  A nonzero determinant forces a = c and b = 0, so
ac - b^2 = a^2 >= 0 and the Gauss equation ac - b^2 = -1 cannot hold.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import jet
from .jet import DomainError, Expression, JetPoint, Num
from .system import (ETA, ZERO_TOL, DENOMINATOR_FLOOR, GroupLabel, PssSystem, _with_env,
                     classify, d, sample_points)

DET_TOL = 1e-10

INCONSISTENT = "inconsistent"
INCONCLUSIVE = "inconclusive"


class ConsistentGroupError(ValueError):
    """Group I admits the universal second fundamental form; see pssurf.immersion."""


class DegeneratePointError(ValueError):
    pass


@dataclass
class ObstructionWitness:
    group: GroupLabel
    matrix: np.ndarray
    point: JetPoint | None
    det: float
    conclusion: str
    branch: str = ""
    checked: int = 0
    skipped: int = 0

    def as_dict(self) -> dict:
        return {
            "group": str(self.group),
            "label": self.group.as_dict(),
            "branch": self.branch,
            "matrix": None if self.matrix is None else [[float(v) for v in row] for row in self.matrix],
            "det": self.det,
            "point": None if self.point is None else {k: float(v) for k, v in sorted(self.point.items())},
            "conclusion": self.conclusion,
            "samples_checked": self.checked,
            "samples_skipped": self.skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def _rotation_like(p: Expression, q: Expression) -> list[list[Expression]]:
    # [[p, -q], [q, p]]; determinant p^2 + q^2
    return [[p, jet.neg(q)], [q, p]]


def _branch(sys: PssSystem, label: GroupLabel, p) -> str:
    if label.group in ("II", "III"):
        return "terminal"
    if label.group == "IV":
        return "IV"
    v = jet.evaluate(d(sys.f12, sys.k - 1), _with_env(sys, p))
    return "primary" if abs(v) > ZERO_TOL else "terminal"


def obstruction_exprs(sys: PssSystem, label: GroupLabel, branch: str | None = None) -> list[list[Expression]]:
    """Matrix entries as expressions in the jets (and eta)."""
    g = label.group
    if g == "I":
        raise ConsistentGroupError(
            "group I systems admit the universal second fundamental form; use pssurf.immersion instead")
    if g not in ("II", "III", "IV", "V"):
        raise ValueError(f"unknown group {g!r}")
    f11, f31 = sys.f11, sys.f31
    if g == "IV":
        C = Num(label.C) if label.C is not None else jet.sub(jet.power(f31, 2.0), jet.power(f11, 2.0))
        return _rotation_like(jet.neg(jet.mul(ETA, sys.L)), jet.mul(C, d(f31, 0)))
    if g == "V" and branch == "primary":
        f11p = d(f11, 0)
        p = jet.mul(ETA, d(jet.div(d(f31, 0), f11p), 0))
        q = d(jet.div(sys.L, f11p), 0)
        return _rotation_like(p, q)
    return _rotation_like(ETA, f11)


def obstruction_matrix(sys: PssSystem, label: GroupLabel, p) -> np.ndarray:
    """The 2x2 matrix M with M (a - c, 2b)^T = 0, evaluated at p."""
    branch = _branch(sys, label, p) if label.group == "V" else None
    return _evaluate(sys, obstruction_exprs(sys, label, branch), label, branch, p)


def _evaluate(sys, M, label, branch, p) -> np.ndarray:
    q = _with_env(sys, p)
    if label.group == "V" and branch == "primary":
        if abs(jet.evaluate(d(sys.f11, 0), q)) <= DENOMINATOR_FLOOR:
            raise DegeneratePointError("f11_z0 vanishes at the sample point")
    try:
        out = np.array([[float(jet.evaluate(e, q)) for e in row] for row in M])
    except (DomainError, ZeroDivisionError) as exc:
        raise DegeneratePointError(str(exc)) from None
    if not np.all(np.isfinite(out)):
        raise DegeneratePointError("matrix entries are not finite at the sample point")
    return out


def verify_inconsistency(sys: PssSystem, samples: Sequence[JetPoint] | None = None,
                         label: GroupLabel | None = None, seed: int = 0,
                         tol: float = DET_TOL) -> ObstructionWitness:
    """Search the samples for a point where the obstruction matrix is invertible.

    Returns the witness with the largest |det|.  Never concludes consistency:
    if every sample is degenerate or singular the result is inconclusive.
    """
    if samples is None:
        samples = sample_points(sys, 100, seed=seed)
    if label is None:
        label = classify(sys, samples)
    if label.group == "I":
        raise ConsistentGroupError(
            "group I systems admit the universal second fundamental form; use pssurf.immersion instead")

    cache: dict[str | None, list] = {}
    best = None
    skipped = 0
    for p in samples:
        try:
            branch = _branch(sys, label, p) if label.group == "V" else None
            if branch not in cache:
                cache[branch] = obstruction_exprs(sys, label, branch)
            M = _evaluate(sys, cache[branch], label, branch, p)
        except (DegeneratePointError, DomainError):
            skipped += 1
            continue
        det = float(np.linalg.det(M))
        if best is None or abs(det) > abs(best[1]):
            best = (M, det, p, branch or _branch_name(label))
    checked = len(samples) - skipped
    if best is None:
        return ObstructionWitness(label, None, None, 0.0, INCONCLUSIVE, "", checked, skipped)
    M, det, p, branch = best
    conclusion = INCONSISTENT if abs(det) > tol else INCONCLUSIVE
    return ObstructionWitness(label, M, JetPoint(p), det, conclusion, branch, checked, skipped)


def _branch_name(label: GroupLabel) -> str:
    return "IV" if label.group == "IV" else "terminal"


def gauss_after_obstruction(a: float) -> float:
    """ac - b^2 once a - c = b = 0 is forced; never equals -1."""
    return a * a
