"""Candidate eta pseudo-spherical systems: structure conditions and classification.

A system is the order ``k``, the constants ``eta`` (the coefficient f21) and
``beta``, the sign choice of the admissible family, and the five remaining
coefficient expressions f11, f12, f22, f31, f32 of the 1-forms

    w1 = f11 dx + f12 dt,   w2 = eta dx + f22 dt,   w3 = f31 dx + f32 dt.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import jet
from .jet import (
    DomainError,
    Expression,
    JetPoint,
    Num,
    Var,
    add,
    differentiate,
    evaluate,
    is_zero,
    max_jet_order,
    mul,
    sub,
)

ZERO_TOL = 1e-12
DENOMINATOR_FLOOR = 1e-8


class SystemSpecError(ValueError):
    """Invalid system definition or violated precondition."""


class OrderMismatchError(SystemSpecError):
    pass


class PreconditionError(SystemSpecError):
    pass


class ClassificationError(RuntimeError):
    pass


ETA = Var("eta")
BETA = Var("beta")


@dataclass(frozen=True)
class PssSystem:
    k: int
    eta: float
    beta: float
    sign: int
    f11: Expression
    f12: Expression
    f22: Expression
    f31: Expression
    f32: Expression
    constants: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.k < 2:
            raise SystemSpecError(f"order k must be >= 2, got {self.k}")
        if self.eta == 0:
            raise SystemSpecError("eta must be nonzero")
        if self.sign not in (1, -1):
            raise SystemSpecError(f"sign must be +1 or -1, got {self.sign}")
        for fname in ("f11", "f12", "f22", "f31", "f32"):
            free = jet.variables(getattr(self, fname)) & {"x", "t"}
            if free:
                raise SystemSpecError(f"{fname} depends on {sorted(free)}; coefficients may depend on jets only")

    @property
    def f21(self) -> Expression:
        return ETA

    @property
    def env(self) -> dict:
        """Numeric values of eta, beta and user constants."""
        out = {"eta": float(self.eta), "beta": float(self.beta)}
        out.update({k: float(v) for k, v in self.constants.items()})
        return out

    def coefficients(self) -> dict[str, Expression]:
        return {"f11": self.f11, "f12": self.f12, "f21": self.f21,
                "f22": self.f22, "f31": self.f31, "f32": self.f32}

    def replace(self, **changes) -> "PssSystem":
        from dataclasses import replace
        return replace(self, **changes)

    def order_of_coefficients(self) -> int:
        return max(max_jet_order(e) for e in self.coefficients().values())

    # H and L of the classification, and the three Delta combinations
    @property
    def H(self) -> Expression:
        return sub(mul(self.f11, d(self.f11, 0)), mul(self.f31, d(self.f31, 0)))

    @property
    def L(self) -> Expression:
        return sub(mul(self.f11, d(self.f31, 0)), mul(self.f31, d(self.f11, 0)))

    @property
    def delta12(self) -> Expression:
        return sub(mul(self.f11, self.f22), mul(ETA, self.f12))

    @property
    def delta13(self) -> Expression:
        return sub(mul(self.f11, self.f32), mul(self.f31, self.f12))

    @property
    def delta23(self) -> Expression:
        return sub(mul(ETA, self.f32), mul(self.f31, self.f22))


def d(e: Expression, i: int) -> Expression:
    """Partial derivative with respect to z_i."""
    return differentiate(e, f"z{i}")


def _prolong_sum(e: Expression, upto: int) -> Expression:
    """sum_{i=0}^{upto} e_{z_i} z_{i+1}."""
    out: Expression = Num(0.0)
    for i in range(upto + 1):
        out = add(out, mul(d(e, i), jet.jet(i + 1)))
    return out


# ---------------------------------------------------------------------------
# System files
# ---------------------------------------------------------------------------

_LINE_RE = re.compile(r"^\s*(?:(const)\s+)?([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(.*?)\s*$")


def parse_system(text: str, name: str = "") -> PssSystem:
    """Read the ``key = value`` system format (``#`` starts a comment)."""
    entries: dict[str, tuple[str, int]] = {}
    constants: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise SystemSpecError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        is_const, key, value = m.groups()
        if is_const:
            if key in jet.RESERVED or key == "u" or jet.jet_index(key) is not None:
                raise SystemSpecError(f"line {lineno}: constant name '{key}' is reserved")
            constants[key] = _real(value, lineno)
        else:
            if key in entries:
                raise SystemSpecError(f"line {lineno}: duplicate key '{key}'")
            entries[key] = (value, lineno)

    required = ("k", "eta", "beta", "sign", "f11", "f12", "f22", "f31", "f32")
    missing = [k for k in required if k not in entries]
    if missing:
        raise SystemSpecError(f"missing keys: {', '.join(missing)}")
    unknown = set(entries) - set(required)
    if unknown:
        raise SystemSpecError(f"unknown keys: {', '.join(sorted(unknown))}")

    k_text, k_line = entries["k"]
    try:
        k = int(k_text)
    except ValueError:
        raise SystemSpecError(f"line {k_line}: k must be an integer") from None
    sign_text, sign_line = entries["sign"]
    if sign_text not in ("+", "-", "+1", "-1"):
        raise SystemSpecError(f"line {sign_line}: sign must be '+' or '-'")
    sign = -1 if sign_text.startswith("-") else 1

    exprs = {}
    for key in ("f11", "f12", "f22", "f31", "f32"):
        src, lineno = entries[key]
        try:
            exprs[key] = jet.parse(src, k, constants)
        except jet.ParseError as exc:
            raise SystemSpecError(f"line {lineno} ({key}): {exc}") from None
    return PssSystem(k=k, eta=_real(entries["eta"][0], entries["eta"][1]),
                     beta=_real(entries["beta"][0], entries["beta"][1]), sign=sign,
                     constants=constants, name=name, **exprs)


def _real(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise SystemSpecError(f"line {lineno}: not a real number: {text!r}") from None


def load_system(path: str | Path) -> PssSystem:
    path = Path(path)
    return parse_system(path.read_text(encoding="utf-8"), name=path.stem)


def format_system(sys: PssSystem) -> str:
    lines = [f"k = {sys.k}", f"eta = {sys.eta!r}", f"beta = {sys.beta!r}",
             f"sign = {'+' if sys.sign > 0 else '-'}"]
    lines += [f"const {k} = {v!r}" for k, v in sys.constants.items()]
    lines += [f"{k} = {getattr(sys, k)}" for k in ("f11", "f12", "f22", "f31", "f32")]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_points(sys: PssSystem, n: int = 100, seed: int = 0, order: int | None = None,
                  box: float = 2.0, avoid: Sequence[Expression] = ()) -> list[JetPoint]:
    """Uniform random jet points in [-box, box] per coordinate.

    Points where an expression in ``avoid`` is undefined or smaller than 1e-8
    in magnitude are rejected and redrawn.
    """
    order = sys.k + 1 if order is None else order
    rng = np.random.default_rng(seed)
    names = ["x", "t"] + [f"z{i}" for i in range(order + 1)]
    pts: list[JetPoint] = []
    attempts = 0
    while len(pts) < n:
        attempts += 1
        if attempts > 1000 * n:
            raise RuntimeError("could not draw generic sample points")
        p = JetPoint(sys.env)
        p.update(zip(names, rng.uniform(-box, box, len(names)).tolist()))
        try:
            if any(abs(evaluate(e, p)) < DENOMINATOR_FLOOR for e in avoid):
                continue
        except DomainError:
            continue
        pts.append(p)
    return pts


def _with_env(sys: PssSystem, p) -> dict:
    q = dict(sys.env)
    q.update(p)
    return q


# ---------------------------------------------------------------------------
# Admissible right-hand side and structure residuals
# ---------------------------------------------------------------------------

def evolution_rhs(sys: PssSystem) -> Expression:
    """F = (sum_{i<k} f12_{z_i} z_{i+1} - sign*(beta f11 - eta f12)) / f11_{z0}."""
    f11_z0 = d(sys.f11, 0)
    if is_zero(f11_z0):
        raise PreconditionError("f11_z0 vanishes identically")
    f12_zk1 = d(sys.f12, sys.k - 1)
    if is_zero(f12_zk1):
        raise PreconditionError(f"f12_z{sys.k - 1} vanishes identically")
    numer = sub(_prolong_sum(sys.f12, sys.k - 1),
                mul(Num(float(sys.sign)), sub(mul(BETA, sys.f11), mul(ETA, sys.f12))))
    return jet.div(numer, f11_z0)


def structure_rhs(sys: PssSystem) -> Expression:
    """F solved from the first (or, if f11_z0 = 0, the third) structure equation.

    Used when the system is outside the admissible family and
    :func:`evolution_rhs` does not apply.
    """
    f11_z0 = d(sys.f11, 0)
    if not is_zero(f11_z0):
        numer = sub(add(_prolong_sum(sys.f12, sys.k - 1), mul(ETA, sys.f32)), mul(sys.f31, sys.f22))
        return jet.div(numer, f11_z0)
    f31_z0 = d(sys.f31, 0)
    if is_zero(f31_z0):
        raise PreconditionError("f11_z0 and f31_z0 both vanish identically")
    numer = sub(add(_prolong_sum(sys.f32, sys.k - 1), mul(ETA, sys.f12)), mul(sys.f11, sys.f22))
    return jet.div(numer, f31_z0)


def default_rhs(sys: PssSystem) -> Expression:
    try:
        return evolution_rhs(sys)
    except PreconditionError:
        return structure_rhs(sys)


def structure_residual_exprs(sys: PssSystem, F: Expression) -> tuple[Expression, Expression, Expression]:
    k = sys.k
    r1 = add(sub(sub(mul(d(sys.f11, 0), F), _prolong_sum(sys.f12, k - 1)), mul(ETA, sys.f32)),
             mul(sys.f31, sys.f22))
    r2 = add(sub(_prolong_sum(sys.f22, k - 2), mul(sys.f11, sys.f32)), mul(sys.f31, sys.f12))
    r3 = add(sub(sub(mul(d(sys.f31, 0), F), _prolong_sum(sys.f32, k - 1)), mul(ETA, sys.f12)),
             mul(sys.f11, sys.f22))
    return r1, r2, r3


def structure_residuals(sys: PssSystem, F: Expression, p) -> tuple[float, float, float]:
    """Residuals of the three structure equations at ``p`` (all zero iff they hold)."""
    q = _with_env(sys, p)
    return tuple(evaluate(r, q) for r in structure_residual_exprs(sys, F))  # type: ignore[return-value]


def deltas(sys: PssSystem, p) -> tuple[float, float, float]:
    q = _with_env(sys, p)
    return evaluate(sys.delta12, q), evaluate(sys.delta13, q), evaluate(sys.delta23, q)


# ---------------------------------------------------------------------------
# Lemma conditions
# ---------------------------------------------------------------------------

SYMBOLIC_PASS = "symbolic-pass"
SAMPLED_PASS = "sampled-pass"
FAIL = "fail"


@dataclass
class ConditionResult:
    name: str
    status: str
    detail: str = ""
    witness: JetPoint | None = None
    max_residual: float | None = None

    @property
    def passed(self) -> bool:
        return self.status != FAIL

    def as_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "detail": self.detail,
                "witness": dict(self.witness) if self.witness is not None else None,
                "max_residual": self.max_residual}


@dataclass
class ConditionReport:
    system: str
    conditions: list[ConditionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failures(self) -> list[ConditionResult]:
        return [c for c in self.conditions if not c.passed]

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"system": self.system, "passed": self.passed,
                "conditions": [c.as_dict() for c in self.conditions]}


def _vanishing(name: str, e: Expression, label: str, samples, sys) -> ConditionResult:
    if is_zero(e):
        return ConditionResult(name, SYMBOLIC_PASS, f"{label} = 0")
    # survived simplification: look for a witness before concluding anything
    for p in samples:
        try:
            v = evaluate(e, _with_env(sys, p))
        except DomainError:
            continue
        if abs(v) > ZERO_TOL:
            return ConditionResult(name, FAIL, f"{label} = {e} is nonzero", witness=JetPoint(p),
                                   max_residual=abs(v))
    return ConditionResult(name, SAMPLED_PASS, f"{label} = {e} vanishes at all samples")


def lemma_check(sys: PssSystem, samples: Sequence[JetPoint], F: Expression | None = None,
                tol: float = 1e-10) -> ConditionReport:
    """Check the necessary and sufficient conditions for the structure equations.

    Vanishing-derivative conditions are decided on the simplified tree; the
    open conditions and the three structure equations (with ``F``, by default
    the system's admissible right-hand side) are evaluated at ``samples``.
    """
    if not samples:
        raise ValueError("samples must be non-empty")
    k = sys.k
    for key, e in sys.coefficients().items():
        if max_jet_order(e) > k:
            raise OrderMismatchError(f"{key} has jet order {max_jet_order(e)} > k = {k}")
    for p in samples:
        if JetPoint(p).order < k + 1:
            raise OrderMismatchError(f"sample has jet order {JetPoint(p).order}, need >= {k + 1}")

    results: list[ConditionResult] = []
    for fname in ("f11", "f31"):
        f = getattr(sys, fname)
        for i in range(1, k + 1):
            results.append(_vanishing(f"std1:{fname}_z{i}", d(f, i), f"{fname}_z{i}", samples, sys))
    results.append(_vanishing(f"std2:f12_z{k}", d(sys.f12, k), f"f12_z{k}", samples, sys))
    results.append(_vanishing(f"std2:f22_z{k}", d(sys.f22, k), f"f22_z{k}", samples, sys))
    results.append(_vanishing(f"std2:f22_z{k - 1}", d(sys.f22, k - 1), f"f22_z{k - 1}", samples, sys))
    results.append(_vanishing(f"std2:f32_z{k}", d(sys.f32, k), f"f32_z{k}", samples, sys))

    std7 = add(jet.power(d(sys.f11, 0), 2.0), jet.power(d(sys.f31, 0), 2.0))
    results.append(_nonvanishing("std7", std7, "f11_z0^2 + f31_z0^2", samples, sys))
    results.append(_nonvanishing("Delta12", sys.delta12, "f11 f22 - eta f12", samples, sys))

    if F is None:
        try:
            F = default_rhs(sys)
        except PreconditionError as exc:
            results.append(ConditionResult("SEq", FAIL, f"no right-hand side: {exc}", witness=JetPoint(samples[0])))
            return ConditionReport(sys.name, results)
    for name, r in zip(("SEq1n", "SEq2n", "SEq3n"), structure_residual_exprs(sys, F)):
        results.append(_residual(name, r, samples, sys, tol))
    return ConditionReport(sys.name, results)


def _nonvanishing(name: str, e: Expression, label: str, samples, sys) -> ConditionResult:
    smallest = math.inf
    for p in samples:
        try:
            v = evaluate(e, _with_env(sys, p))
        except DomainError as exc:
            return ConditionResult(name, FAIL, f"{label} undefined: {exc}", witness=JetPoint(p))
        if abs(v) <= ZERO_TOL:
            return ConditionResult(name, FAIL, f"{label} vanishes", witness=JetPoint(p), max_residual=abs(v))
        smallest = min(smallest, abs(v))
    return ConditionResult(name, SAMPLED_PASS, f"{label} != 0 at all {len(samples)} samples (min |.| = {smallest:.3g})")


def _residual(name: str, r: Expression, samples, sys, tol: float) -> ConditionResult:
    if is_zero(r):
        return ConditionResult(name, SYMBOLIC_PASS, "residual simplifies to 0", max_residual=0.0)
    worst, witness = 0.0, None
    for p in samples:
        try:
            v = abs(evaluate(r, _with_env(sys, p)))
        except DomainError as exc:
            return ConditionResult(name, FAIL, f"residual undefined: {exc}", witness=JetPoint(p))
        if v > worst or witness is None:
            worst, witness = v, p
    if worst > tol:
        return ConditionResult(name, FAIL, f"max |residual| = {worst:.3g} > {tol:g}",
                               witness=JetPoint(witness), max_residual=worst)
    return ConditionResult(name, SAMPLED_PASS, f"max |residual| = {worst:.3g}", max_residual=worst)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupLabel:
    group: str  # I .. V
    lam: float | None = None
    C: float | None = None
    vanishing: str | None = None  # for group III: "f11" or "f31"

    def __str__(self):
        if self.group in ("I", "II"):
            return f"{self.group} (lambda={self.lam:g})"
        if self.group == "III":
            return f"III ({self.vanishing} = 0)"
        if self.group == "IV":
            return f"IV (C={self.C:g})"
        return self.group

    def as_dict(self) -> dict:
        return {"group": self.group, "lambda": self.lam, "C": self.C, "vanishing": self.vanishing}


def _values(e: Expression, sys: PssSystem, samples) -> np.ndarray:
    out = []
    for p in samples:
        try:
            out.append(evaluate(e, _with_env(sys, p)))
        except DomainError:
            out.append(np.nan)
    return np.asarray(out, dtype=float)


def _identically_zero(e: Expression, sys, samples) -> bool:
    if is_zero(e):
        return True
    v = _values(e, sys, samples)
    return bool(np.all(np.isfinite(v)) and np.all(np.abs(v) <= ZERO_TOL))


def classify(sys: PssSystem, samples: Sequence[JetPoint] | None = None, seed: int = 0) -> GroupLabel:
    """Assign one of the five groups I-V from the vanishing pattern of H and L."""
    if samples is None:
        samples = sample_points(sys, 100, seed=seed)
    if not samples:
        raise ValueError("samples must be non-empty")
    f11, f31 = sys.f11, sys.f31

    if _identically_zero(f11, sys, samples):
        return GroupLabel("III", vanishing="f11")
    if _identically_zero(f31, sys, samples):
        return GroupLabel("III", vanishing="f31")

    # proportionality f31 = lambda f11, detected on 10 points where f11 != 0
    v11 = _values(f11, sys, samples)
    v31 = _values(f31, sys, samples)
    ok = np.isfinite(v11) & np.isfinite(v31) & (np.abs(v11) > DENOMINATOR_FLOOR)
    ratios = (v31[ok] / v11[ok])[:10]
    if ratios.size:
        lam = float(ratios[0])
        if np.all(np.abs(ratios - lam) <= ZERO_TOL * max(1.0, abs(lam))):
            gap = sub(f31, mul(Num(lam), f11))
            scale = 1.0 + np.abs(v31) + np.abs(lam * v11)
            gv = _values(gap, sys, samples)
            if is_zero(gap) or (np.all(np.isfinite(gv)) and np.all(np.abs(gv) <= 1e-10 * scale)):
                if abs(lam * lam - 1.0) <= 1e-12:
                    return GroupLabel("I", lam=float(round(lam)))
                return GroupLabel("II", lam=lam)

    H = _values(sys.H, sys, samples)
    L = _values(sys.L, sys, samples)
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(L))):
        raise ClassificationError("H or L undefined at some samples")
    h_scale = 1.0 + np.abs(_values(mul(f11, d(f11, 0)), sys, samples)) + np.abs(_values(mul(f31, d(f31, 0)), sys, samples))
    h_zero = np.abs(H) <= 1e-10 * h_scale
    l_zero = np.abs(L) <= ZERO_TOL
    if np.all(h_zero) and not np.any(l_zero):
        C = _values(sub(jet.power(f31, 2.0), jet.power(f11, 2.0)), sys, samples)
        if np.ptp(C) <= 1e-9 * max(1.0, float(np.max(np.abs(C)))) and abs(C.mean()) > ZERO_TOL:
            return GroupLabel("IV", C=float(C.mean()))
        raise ClassificationError("H vanishes but f31^2 - f11^2 is not a nonzero constant")
    if not np.any(h_zero) and not np.any(l_zero):
        return GroupLabel("V")
    raise ClassificationError(
        f"ambiguous: H vanishes at {int(h_zero.sum())} and L at {int(l_zero.sum())} of {len(samples)} samples")
