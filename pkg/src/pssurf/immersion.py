"""Second fundamental form, Gauss-Codazzi checks and surface reconstruction.

Forms are handled as coefficient pairs ``(cx, ct)`` of ``cx dx + ct dt``.  All
grids are indexed ``[t][x]`` like the solver output.  The moving frame is a
3x3 array whose rows are e1, e2, e3 and obeys

    dX = w1 e1 + w2 e2,   d e_i = sum_j w_ij e_j,   w_ij = -w_ji,

with w12 the Levi-Civita form w3 and w13 = a w1 + b w2, w23 = b w1 + c w2.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import jet
from .jet import DomainError, Expression, JetPoint, Num, Var, max_jet_order
from .solver import SolutionField, first_derivative
from .system import PssSystem, _with_env, d


class ImmersionError(RuntimeError):
    pass


class OutsideStripError(ImmersionError, ValueError):
    def __init__(self, message: str, bounds: "StripBounds | None" = None):
        super().__init__(message)
        self.bounds = bounds


class EmptyStripError(ImmersionError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Universal coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StripBounds:
    """Open interval for sign*(eta x + beta t); ``upper`` may be +inf."""

    lower: float
    upper: float
    margin: float = 0.02

    def __post_init__(self):
        if not self.lower < self.upper:
            raise EmptyStripError("strip has empty interior")

    def inner(self) -> tuple[float, float]:
        """Bounds shrunk by ``margin`` times the width on each side."""
        if math.isinf(self.upper):
            return self.lower + self.margin, self.upper
        w = self.upper - self.lower
        return self.lower + self.margin * w, self.upper - self.margin * w

    def contains(self, s, inner: bool = False):
        lo, hi = self.inner() if inner else (self.lower, self.upper)
        s = np.asarray(s)
        return (s > lo) & (s < hi)


def _check_lg(l: float, gamma: float) -> None:
    if not l > 0:
        raise ValueError(f"l must be positive, got {l}")
    if l * l == 4 * gamma * gamma:
        raise EmptyStripError(f"l^2 = 4 gamma^2 (l={l}, gamma={gamma}): the strip has empty interior")
    if not l * l > 4 * gamma * gamma:
        raise ValueError(f"need l^2 > 4 gamma^2, got l={l}, gamma={gamma}")


def strip_bounds(l: float, gamma: float, margin: float = 0.02) -> StripBounds:
    """Where l E - gamma^2 E^2 - 1 > 0 with E = exp(2 sigma s), as bounds on sigma*s."""
    _check_lg(l, gamma)
    root = math.sqrt(l * l - 4 * gamma * gamma)
    # (l - root) / (2 gamma^2) = 2 / (l + root): no cancellation, and gamma = 0 gives -ln(l)/2
    lower = 0.5 * math.log(2.0 / (l + root))
    if gamma == 0:
        return StripBounds(lower, math.inf, margin)
    upper = 0.5 * (math.log(l + root) - math.log(2.0) - 2.0 * math.log(abs(gamma)))
    return StripBounds(lower, upper, margin)


@dataclass(frozen=True)
class ClosedForm:
    l: float
    gamma: float
    sign: int = 1

    def __post_init__(self):
        _check_lg(self.l, self.gamma)
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def strip(self, margin: float = 0.02) -> StripBounds:
        return strip_bounds(self.l, self.gamma, margin)

    def abc(self, s):
        return universal_abc(self.l, self.gamma, self.sign, s)

    def expressions(self) -> tuple[Expression, Expression, Expression]:
        """a, b, c as expressions of x and t (with eta, beta symbolic)."""
        s = jet.add(jet.mul(Var("eta"), Var("x")), jet.mul(Var("beta"), Var("t")))
        E = jet.func("exp", jet.mul(Num(2.0 * self.sign), s))
        g2E2 = jet.mul(Num(self.gamma ** 2), jet.power(E, 2.0))
        a = jet.func("sqrt", jet.sub(jet.sub(jet.mul(Num(self.l), E), g2E2), Num(1.0)))
        b = jet.mul(Num(self.gamma), E)
        c = jet.div(jet.sub(g2E2, Num(1.0)), a)
        return a, b, c


def universal_abc(l: float, gamma: float, sign: int, s):
    """(a, b, c) at s = eta x + beta t; a is the positive root.  Works on arrays."""
    _check_lg(l, gamma)
    s = np.asarray(s, dtype=float)
    E = np.exp(sign * 2.0 * s)
    rad = l * E - gamma * gamma * E * E - 1.0
    if np.any(~(rad > 0)):
        bounds = strip_bounds(l, gamma)
        lo, hi = bounds.lower, bounds.upper
        raise OutsideStripError(
            f"s outside the strip: need {lo:.7g} < {'+' if sign > 0 else '-'}s < {hi:.7g}", bounds)
    a = np.sqrt(rad)
    b = gamma * E
    c = (gamma * gamma * E * E - 1.0) / a
    if s.ndim == 0:
        return float(a), float(b), float(c)
    return a, b, c


def abc_derivatives(l: float, gamma: float, sign: int, s):
    """d/ds of (a, b, c); x- and t-derivatives follow by multiplying with eta and beta."""
    a, b, c = universal_abc(l, gamma, sign, s)
    E = np.exp(sign * 2.0 * np.asarray(s, dtype=float))
    g2E2 = gamma * gamma * E * E
    a_s = sign * (l * E - 2.0 * g2E2) / a
    b_s = 2.0 * sign * b
    c_s = (4.0 * sign * g2E2 * a - (g2E2 - 1.0) * a_s) / (a * a)
    if np.ndim(s) == 0:
        return float(a_s), float(b_s), float(c_s)
    return a_s, b_s, c_s


def gauss_residual(a, b, c):
    """a c - b^2 + 1 (zero for a pseudo-spherical immersion)."""
    return np.asarray(a) * c - np.asarray(b) ** 2 + 1.0 if isinstance(a, np.ndarray) else a * c - b * b + 1.0


def mean_curvature(a, b, c):
    return 0.5 * (a + c)


# ---------------------------------------------------------------------------
# Codazzi equations
# ---------------------------------------------------------------------------

def codazzi_residual_exprs(sys: PssSystem, a: Expression, b: Expression, c: Expression):
    """Both Codazzi residuals for universal a, b, c (functions of x, t only)."""
    for name, e in (("a", a), ("b", b), ("c", c)):
        if max_jet_order(e) >= 0:
            raise ValueError(f"{name} depends on jet variables; use codazzi_residuals_grid")
    ax, bx, cx = (jet.differentiate(e, "x") for e in (a, b, c))
    at, bt, ct = (jet.differentiate(e, "t") for e in (a, b, c))
    eta = Var("eta")
    amc = jet.sub(a, c)
    two_b = jet.mul(Num(2.0), b)
    r1 = (sys.f11 * at + eta * bt - sys.f12 * ax - sys.f22 * bx
          - two_b * sys.delta13 + amc * sys.delta23)
    r2 = (sys.f11 * bt + eta * ct - sys.f12 * bx - sys.f22 * cx
          + amc * sys.delta13 + two_b * sys.delta23)
    return r1, r2


def codazzi_residuals_symbolic(sys: PssSystem, a: Expression, b: Expression, c: Expression,
                               p: Mapping[str, float]) -> tuple[float, float]:
    r1, r2 = codazzi_residual_exprs(sys, a, b, c)
    q = _with_env(sys, p)
    return jet.evaluate(r1, q), jet.evaluate(r2, q)


def strip_points(sys: PssSystem, form: ClosedForm, n: int = 50, seed: int = 0,
                 margin: float = 0.02, box: float = 2.0) -> list[JetPoint]:
    """Random jet points whose (x, t) lies inside the shrunken strip of ``form``."""
    rng = np.random.default_rng(seed)
    lo, hi = form.strip(margin).inner()
    if math.isinf(hi):
        hi = lo + 2.0
    pts = []
    for _ in range(n):
        s = form.sign * rng.uniform(lo, hi)
        if sys.beta != 0:
            x = rng.uniform(-box, box)
            t = (s - sys.eta * x) / sys.beta
        else:
            t = rng.uniform(-box, box)
            x = s / sys.eta
        p = JetPoint(sys.env)
        p.update(x=float(x), t=float(t))
        p.update({f"z{i}": float(v) for i, v in enumerate(rng.uniform(-box, box, sys.k + 2))})
        pts.append(p)
    return pts


@dataclass
class SignPairing:
    selected: int | None
    max_residual: dict  # sign -> max |residual|
    tol: float

    @property
    def unique(self) -> bool:
        return self.selected is not None


def select_sign_pairing(sys: PssSystem, l: float, gamma: float, n: int = 50, seed: int = 0,
                        tol: float = 1e-9) -> SignPairing:
    """Try both signs of the universal coefficients against the system's Codazzi equations."""
    worst = {}
    for sign in (1, -1):
        form = ClosedForm(l, gamma, sign)
        r1, r2 = codazzi_residual_exprs(sys, *form.expressions())
        f1, f2 = jet.compile_expr(r1), jet.compile_expr(r2)
        vals = []
        for p in strip_points(sys, form, n, seed):
            q = _with_env(sys, p)
            vals.append(max(abs(f1(q)), abs(f2(q))))
        worst[sign] = float(np.max(vals))
    passing = [s for s, v in worst.items() if v <= tol]
    return SignPairing(passing[0] if len(passing) == 1 else None, worst, tol)


def _ddx(g: np.ndarray, h: float, axis: int, order: int) -> np.ndarray:
    return first_derivative(g, h, order, periodic=False, axis=axis)


def _crop(g: np.ndarray, e: int) -> np.ndarray:
    return g[e:-e, e:-e] if e else g


_FORM_KEYS = ("f11", "f12", "f21", "f22", "f31", "f32")


def _grids(forms: Mapping[str, np.ndarray], shape=None) -> dict:
    out = {}
    for k in _FORM_KEYS:
        v = np.asarray(forms[k], dtype=float)
        if shape is None:
            shape = v.shape if v.ndim == 2 else None
        out[k] = v
    if shape is None:
        raise ValueError("at least one form grid must be two-dimensional")
    for k, v in out.items():
        if v.ndim == 0:
            out[k] = np.full(shape, float(v))
        elif v.shape != shape:
            raise ValueError(f"grid {k} has shape {v.shape}, expected {shape}")
    return out


def codazzi_residuals_grid(forms: Mapping[str, np.ndarray], a, b, c, dx: float, dt: float,
                           order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Codazzi residuals with D_x, D_t replaced by centered differences (4th order by default).

    ``forms`` maps f11 .. f32 to [t][x] grids (scalars are broadcast).  The
    residuals are returned on interior nodes only.
    """
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    if not (a.shape == b.shape == c.shape) or a.ndim != 2:
        raise ValueError("a, b, c must be 2-D grids of equal shape")
    f = _grids(forms, a.shape)
    e = order // 2
    at, bt, ct = (_ddx(v, dt, 0, order) for v in (a, b, c))
    ax, bx, cx = (_ddx(v, dx, 1, order) for v in (a, b, c))
    d13 = f["f11"] * f["f32"] - f["f31"] * f["f12"]
    d23 = f["f21"] * f["f32"] - f["f31"] * f["f22"]
    r1 = f["f11"] * at + f["f21"] * bt - f["f12"] * ax - f["f22"] * bx - 2 * b * d13 + (a - c) * d23
    r2 = f["f11"] * bt + f["f21"] * ct - f["f12"] * bx - f["f22"] * cx + (a - c) * d13 + 2 * b * d23
    return _crop(r1, e), _crop(r2, e)


def structure_residuals_grid(forms: Mapping[str, np.ndarray], dx: float, dt: float,
                             order: int = 4) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """dw1 - w3^w2, dw2 - w1^w3, dw3 - w1^w2 as dx^dt coefficients on interior nodes."""
    f = _grids(forms)
    e = order // 2

    def ext(px, pt):  # d(px dx + pt dt)
        return _ddx(pt, dx, 1, order) - _ddx(px, dt, 0, order)

    def wedge(ax, at, bx, bt):
        return ax * bt - at * bx

    r1 = ext(f["f11"], f["f12"]) - wedge(f["f31"], f["f32"], f["f21"], f["f22"])
    r2 = ext(f["f21"], f["f22"]) - wedge(f["f11"], f["f12"], f["f31"], f["f32"])
    r3 = ext(f["f31"], f["f32"]) - wedge(f["f11"], f["f12"], f["f21"], f["f22"])
    return _crop(r1, e), _crop(r2, e), _crop(r3, e)


# ---------------------------------------------------------------------------
# Frame integration
# ---------------------------------------------------------------------------

FORM_NAMES = ("w1", "w2", "w12", "w13", "w23")


@dataclass
class FrameState:
    X: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray

    @classmethod
    def standard(cls) -> "FrameState":
        I = np.eye(3)
        return cls(np.zeros(3), I[0], I[1], I[2])

    def matrix(self) -> np.ndarray:
        return np.array([self.e1, self.e2, self.e3], dtype=float)


@dataclass
class SurfaceMesh:
    x: np.ndarray
    t: np.ndarray
    X: np.ndarray          # [t][x][3]
    frames: np.ndarray     # [t][x][3][3], rows e1, e2, e3
    drift: np.ndarray      # [t][x] max |R R^T - I|
    forms: dict
    base: tuple[int, int]
    probes: list = field(default_factory=list)   # (j, i, position defect, frame defect)
    abc: tuple | None = None
    params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape[:2]

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def path_defect(self) -> float:
        return max((p[2] for p in self.probes), default=0.0)

    @property
    def max_drift(self) -> float:
        return float(self.drift.max())

    def metric_error(self) -> np.ndarray:
        """Relative mismatch between the mesh metric and (w1)^2 + (w2)^2 per vertex."""
        E, F, G = first_fundamental_form(self.X, self.dx, self.dt)
        (p1, q1), (p2, q2) = self.forms["w1"], self.forms["w2"]
        E0 = p1 * p1 + p2 * p2
        F0 = p1 * q1 + p2 * q2
        G0 = q1 * q1 + q2 * q2
        num = np.maximum(np.maximum(np.abs(E - E0), np.abs(F - F0)), np.abs(G - G0))
        return num / (E0 + G0)

    def mean_curvature(self) -> np.ndarray | None:
        return None if self.abc is None else mean_curvature(*self.abc)

    def gram_schmidt_frames(self) -> np.ndarray:
        """Re-orthonormalized copy of the frames (export only)."""
        Q, R = np.linalg.qr(np.swapaxes(self.frames, -1, -2))
        Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[..., None, :]
        return np.swapaxes(Q, -1, -2)


def _rates(w: np.ndarray, X: np.ndarray, R: np.ndarray):
    # w: (B,5) = w1, w2, w12, w13, w23
    dX = w[:, 0, None] * R[:, 0] + w[:, 1, None] * R[:, 1]
    Om = np.zeros(R.shape)
    Om[:, 0, 1], Om[:, 0, 2], Om[:, 1, 2] = w[:, 2], w[:, 3], w[:, 4]
    Om[:, 1, 0], Om[:, 2, 0], Om[:, 2, 1] = -w[:, 2], -w[:, 3], -w[:, 4]
    return dX, Om @ R


def _midpoints(W: np.ndarray) -> np.ndarray:
    """Cubic-interpolated values halfway between consecutive nodes along axis 0."""
    n = W.shape[0]
    if n < 4:
        return 0.5 * (W[:-1] + W[1:])
    M = np.empty((n - 1,) + W.shape[1:])
    M[1:-1] = (-W[:-3] + 9 * W[1:-2] + 9 * W[2:-1] - W[3:]) / 16
    M[0] = (5 * W[0] + 15 * W[1] - 5 * W[2] + W[3]) / 16
    M[-1] = (W[-4] - 5 * W[-3] + 15 * W[-2] + 5 * W[-1]) / 16
    return M


def _integrate_line(W: np.ndarray, h: float, X0: np.ndarray, R0: np.ndarray):
    """RK4 along a path with coefficient samples W (n, B, 5); returns states at all nodes."""
    n = W.shape[0]
    M = _midpoints(W)
    Xs = np.empty((n,) + X0.shape)
    Rs = np.empty((n,) + R0.shape)
    X, R = X0.copy(), R0.copy()
    Xs[0], Rs[0] = X, R
    for i in range(n - 1):
        k1x, k1r = _rates(W[i], X, R)
        k2x, k2r = _rates(M[i], X + 0.5 * h * k1x, R + 0.5 * h * k1r)
        k3x, k3r = _rates(M[i], X + 0.5 * h * k2x, R + 0.5 * h * k2r)
        k4x, k4r = _rates(W[i + 1], X + h * k3x, R + h * k3r)
        X = X + (h / 6) * (k1x + 2 * k2x + 2 * k3x + k4x)
        R = R + (h / 6) * (k1r + 2 * k2r + 2 * k3r + k4r)
        Xs[i + 1], Rs[i + 1] = X, R
    return Xs, Rs


def integrate_path(W: np.ndarray, h: float, initial: FrameState | None = None):
    """RK4 along one path; ``W`` holds (w1, w2, w12, w13, w23) per node, shape (n, 5).

    Returns positions (n, 3) and frames (n, 3, 3).  ``h`` may be negative.
    """
    W = np.asarray(W, dtype=float)
    initial = initial or FrameState.standard()
    X, R = _integrate_line(W[:, None, :], h, np.asarray(initial.X, dtype=float)[None], initial.matrix()[None])
    return X[:, 0], R[:, 0]


def orthonormality_drift(R: np.ndarray) -> np.ndarray:
    return np.max(np.abs(R @ np.swapaxes(R, -1, -2) - np.eye(3)), axis=(-2, -1))


def _integrate_from(W: np.ndarray, h: float, start: int, X0, R0):
    """Integrate both ways from node ``start`` along axis 0 of W."""
    n = W.shape[0]
    Xs = np.empty((n,) + X0.shape)
    Rs = np.empty((n,) + R0.shape)
    fx, fr = _integrate_line(W[start:], h, X0, R0)
    Xs[start:], Rs[start:] = fx, fr
    if start > 0:
        bx, br = _integrate_line(W[start::-1], -h, X0, R0)
        Xs[:start + 1], Rs[:start + 1] = bx[::-1], br[::-1]
    return Xs, Rs


def _stack_forms(forms: Mapping[str, tuple], comp: int) -> np.ndarray:
    return np.stack([np.asarray(forms[k][comp], dtype=float) for k in FORM_NAMES], axis=-1)


def compatibility_residuals(forms: Mapping[str, tuple], dx: float, dt: float,
                            order: int = 4) -> dict[str, float]:
    """Max interior violation of the integrability conditions of the frame system."""
    def ext(w):
        return _ddx(w[1], dx, 1, order) - _ddx(w[0], dt, 0, order)

    def wedge(u, v):
        return u[0] * v[1] - u[1] * v[0]

    w1, w2, w12, w13, w23 = (tuple(np.asarray(c, dtype=float) for c in forms[k]) for k in FORM_NAMES)
    order = _auto_order(w1[0].shape, order)
    res = {
        "dw1": ext(w1) - wedge(w12, w2),
        "dw2": ext(w2) - wedge(w1, w12),
        "dw12": ext(w12) + wedge(w13, w23),
        "dw13": ext(w13) - wedge(w12, w23),
        "dw23": ext(w23) + wedge(w12, w13),
        "symmetry": wedge(w1, w13) + wedge(w2, w23),
    }
    return {k: float(np.max(np.abs(_crop(v, order // 2)))) for k, v in res.items()}


def frame_integrate(forms: Mapping[str, tuple], x: np.ndarray, t: np.ndarray,
                    initial: FrameState | None = None, base: tuple[int, int] = (0, 0),
                    drift_tol: float = 1e-4, check_tol: float | None = 1e-3,
                    n_probes: int = 9) -> SurfaceMesh:
    """Reconstruct X from the five forms: along the base t-row, then up/down every x-column.

    ``base`` is (t index, x index).  The path-independence defect is measured
    at ``n_probes`` vertices by integrating along the transposed path.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    nt, nx = t.size, x.size
    for k in FORM_NAMES:
        for comp in forms[k]:
            if np.shape(comp) != (nt, nx):
                raise ValueError(f"form {k} has shape {np.shape(comp)}, expected {(nt, nx)}")
    hx = float(x[1] - x[0])
    ht = float(t[1] - t[0])
    if check_tol is not None and min(nt, nx) >= 5:
        comp = compatibility_residuals(forms, hx, ht)
        bad = {k: v for k, v in comp.items() if v > check_tol}
        if bad:
            warnings.warn(f"forms are not compatible within {check_tol:g}: {bad}", RuntimeWarning, stacklevel=2)

    initial = initial or FrameState.standard()
    j0, i0 = base
    Wx = _stack_forms(forms, 0)   # [t][x][5] dx-coefficients
    Wt = _stack_forms(forms, 1)

    X0 = np.asarray(initial.X, dtype=float)[None]
    R0 = initial.matrix()[None]
    row_X, row_R = _integrate_from(Wx[j0][:, None, :], hx, i0, X0, R0)     # (nx, 1, ...)
    X, R = _integrate_from(Wt, ht, j0, row_X[:, 0], row_R[:, 0])          # (nt, nx, ...)

    drift = orthonormality_drift(R)
    if drift.max() > drift_tol:
        jj, ii = np.unravel_index(int(np.argmax(drift)), drift.shape)
        raise ImmersionError(f"frame orthonormality drift {drift.max():.3g} > {drift_tol:g} at t[{jj}], x[{ii}]")

    mesh = SurfaceMesh(x, t, X, R, drift, {k: tuple(np.asarray(c, dtype=float) for c in forms[k]) for k in FORM_NAMES},
                       (j0, i0))
    mesh.probes = _probe_paths(mesh, Wx, Wt, hx, ht, X0, R0, n_probes)
    return mesh


def _probe_paths(mesh: SurfaceMesh, Wx, Wt, hx, ht, X0, R0, n_probes: int) -> list:
    nt, nx = mesh.shape
    j0, i0 = mesh.base
    side = max(1, int(round(math.sqrt(n_probes))))
    fr = np.linspace(0.25, 1.0, side) if side > 1 else np.array([1.0])
    js = sorted({int(round(f * (nt - 1))) for f in fr})
    iis = sorted({int(round(f * (nx - 1))) for f in fr})
    col_X, col_R = _integrate_from(Wt[:, i0][:, None, :], ht, j0, X0, R0)  # along the base column
    out = []
    for j in js:
        rX, rR = _integrate_from(Wx[j][:, None, :], hx, i0, col_X[j], col_R[j])
        for i in iis:
            dpos = float(np.max(np.abs(rX[i, 0] - mesh.X[j, i])))
            dfr = float(np.max(np.abs(rR[i, 0] - mesh.frames[j, i])))
            out.append((j, i, dpos, dfr))
    return out


# ---------------------------------------------------------------------------
# Mesh geometry
# ---------------------------------------------------------------------------

def _auto_order(shape, order: int) -> int:
    # fall back to second order on grids too small for the wide closures
    return order if min(shape[:2]) >= 2 * order + 1 else 2


def first_fundamental_form(X: np.ndarray, du: float, dv: float, order: int = 4):
    """E, F, G of X[v][u] with u along axis 1 and v along axis 0."""
    order = _auto_order(X.shape, order)
    Xu = _ddx(X, du, 1, order)
    Xv = _ddx(X, dv, 0, order)
    return (np.einsum("...k,...k", Xu, Xu), np.einsum("...k,...k", Xu, Xv), np.einsum("...k,...k", Xv, Xv))


def brioschi_curvature(X: np.ndarray, du: float, dv: float, order: int = 4) -> np.ndarray:
    """Gaussian curvature from the metric alone (Brioschi), X indexed [v][u]."""
    order = _auto_order(X.shape, order)
    E, F, G = first_fundamental_form(X, du, dv, order)

    def Du(g):
        return _ddx(g, du, 1, order)

    def Dv(g):
        return _ddx(g, dv, 0, order)

    Eu, Ev, Fu, Fv, Gu, Gv = Du(E), Dv(E), Du(F), Dv(F), Du(G), Dv(G)
    Evv, Fuv, Guu = Dv(Ev), Dv(Fu), Du(Gu)
    M1 = np.stack([
        np.stack([-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev], -1),
        np.stack([Fv - 0.5 * Gu, E, F], -1),
        np.stack([0.5 * Gv, F, G], -1),
    ], -2)
    M2 = np.stack([
        np.stack([np.zeros_like(E), 0.5 * Ev, 0.5 * Gu], -1),
        np.stack([0.5 * Ev, E, F], -1),
        np.stack([0.5 * Gu, F, G], -1),
    ], -2)
    return (np.linalg.det(M1) - np.linalg.det(M2)) / (E * G - F * F) ** 2


def gaussian_curvature_mesh(mesh: SurfaceMesh) -> np.ndarray:
    return brioschi_curvature(mesh.X, mesh.dx, mesh.dt)


def interior(g: np.ndarray, cells: int = 3) -> np.ndarray:
    return g[cells:-cells, cells:-cells]


# ---------------------------------------------------------------------------
# Solutions of the admissible family
# ---------------------------------------------------------------------------

def system_forms(sys: PssSystem, sol: SolutionField, form: ClosedForm, margin: float = 0.02):
    """Form coefficient grids and a, b, c over a solution's stored frames."""
    X, T = np.meshgrid(sol.x, sol.times)
    s = sys.eta * X + sys.beta * T
    strip = form.strip(margin)
    inside = strip.contains(form.sign * s, inner=True)
    if not np.all(inside):
        lo, hi = strip.inner()
        raise OutsideStripError(
            f"{int((~inside).sum())} of {inside.size} grid nodes lie outside the strip "
            f"{lo:.6g} < {'+' if form.sign > 0 else '-'}(eta x + beta t) < {hi:.6g} "
            f"(data spans s in [{s.min():.6g}, {s.max():.6g}])", strip)
    a, b, c = universal_abc(form.l, form.gamma, form.sign, s)

    env = dict(sys.env)
    env.update(x=X, t=T)
    env.update({f"z{i}": sol.z(i) for i in range(sol.k + 1)})

    def grid(e: Expression):
        return np.broadcast_to(np.asarray(jet.compile_expr(e)(env), dtype=float), X.shape).copy()

    f11, f12, f22, f31, f32 = (grid(getattr(sys, k)) for k in ("f11", "f12", "f22", "f31", "f32"))
    eta = np.full(X.shape, float(sys.eta))
    coeffs = {"f11": f11, "f12": f12, "f21": eta, "f22": f22, "f31": f31, "f32": f32}
    return frame_forms(coeffs, a, b, c), (a, b, c), coeffs


def frame_forms(coeffs: Mapping[str, np.ndarray], a, b, c) -> dict:
    """The five frame forms from f11 .. f32 grids and the second fundamental form."""
    f = _grids(coeffs, np.shape(a))
    return {
        "w1": (f["f11"], f["f12"]),
        "w2": (f["f21"], f["f22"]),
        "w12": (f["f31"], f["f32"]),
        "w13": (a * f["f11"] + b * f["f21"], a * f["f12"] + b * f["f22"]),
        "w23": (b * f["f11"] + c * f["f21"], b * f["f12"] + c * f["f22"]),
    }


def immerse_solution(sys: PssSystem, sol: SolutionField, form: ClosedForm, margin: float = 0.02,
                     base: tuple[int, int] | None = None, **kwargs) -> SurfaceMesh:
    forms, abc, _ = system_forms(sys, sol, form, margin)
    mesh = frame_integrate(forms, sol.x, sol.times, base=base or (0, 0), **kwargs)
    mesh.abc = abc
    mesh.params = {"eta": sys.eta, "beta": sys.beta, "l": form.l, "gamma": form.gamma,
                   "abc_sign": form.sign, "margin": margin}
    return mesh


# ---------------------------------------------------------------------------
# Mean curvature along the foliation eta x + beta t = delta
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridForm:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    x: np.ndarray
    t: np.ndarray


@dataclass
class LineStats:
    delta: float
    status: str          # ok | misses-strip | misses-domain
    n_points: int = 0
    mean: float = math.nan
    max_deviation: float = math.nan
    note: str = ""

    def as_dict(self) -> dict:
        return {"delta": self.delta, "status": self.status, "n_points": self.n_points,
                "mean": self.mean, "max_deviation": self.max_deviation, "note": self.note}


def _line_points(eta: float, beta: float, delta: float, box, n: int):
    xmin, xmax, tmin, tmax = box
    pts = []
    if beta != 0:
        xs = np.linspace(xmin, xmax, n)
        ts = (delta - eta * xs) / beta
        pts.append((xs, ts))
    if eta != 0:
        ts = np.linspace(tmin, tmax, n)
        xs = (delta - beta * ts) / eta
        pts.append((xs, ts))
    best = None
    for xs, ts in pts:
        keep = (xs >= xmin) & (xs <= xmax) & (ts >= tmin) & (ts <= tmax)
        if best is None or keep.sum() > best[0].size:
            best = (xs[keep], ts[keep])
    return best


def foliation_report(source, eta: float, beta: float, deltas: Sequence[float], n: int = 64,
                     domain: tuple[float, float, float, float] | None = None,
                     margin: float = 0.02) -> list[LineStats]:
    """Mean curvature statistics along each line eta x + beta t = delta.

    ``source`` is a :class:`ClosedForm` (evaluated exactly; ``domain`` =
    (xmin, xmax, tmin, tmax) defaults to [-1, 1]^2), a :class:`GridForm`, or a
    :class:`SurfaceMesh` carrying a, b, c (both interpolated bicubically).
    """
    if isinstance(source, SurfaceMesh):
        if source.abc is None:
            raise ValueError("mesh has no second fundamental form attached")
        a, b, c = source.abc
        source = GridForm(a, b, c, source.x, source.t)

    out = []
    if isinstance(source, ClosedForm):
        strip = source.strip(margin)
        box = domain or (-1.0, 1.0, -1.0, 1.0)
        for delta in deltas:
            if not strip.contains(source.sign * delta, inner=True):
                lo, hi = strip.inner()
                out.append(LineStats(delta, "misses-strip",
                                     note=f"{'+' if source.sign > 0 else '-'}delta outside ({lo:.7g}, {hi:.7g}); "
                                          f"strip ({strip.lower:.7g}, {strip.upper:.7g}) less margin {margin:g}"))
                continue
            xs, ts = _line_points(eta, beta, delta, box, n)
            if xs.size == 0:
                out.append(LineStats(delta, "misses-domain"))
                continue
            a, b, c = universal_abc(source.l, source.gamma, source.sign, eta * xs + beta * ts)
            H = mean_curvature(a, b, c)
            out.append(_stats(delta, H))
        return out

    if not isinstance(source, GridForm):
        raise TypeError("source must be a ClosedForm, GridForm or SurfaceMesh")
    H = mean_curvature(np.asarray(source.a), np.asarray(source.b), np.asarray(source.c))
    spline = RectBivariateSpline(source.t, source.x, H, kx=3, ky=3)
    box = (source.x[0], source.x[-1], source.t[0], source.t[-1])
    for delta in deltas:
        xs, ts = _line_points(eta, beta, delta, box, n)
        if xs.size < 2:
            out.append(LineStats(delta, "misses-domain", note="line does not cross the grid"))
            continue
        out.append(_stats(delta, spline.ev(ts, xs)))
    return out


def _stats(delta: float, H: np.ndarray) -> LineStats:
    H = np.asarray(H, dtype=float)
    mean = float(H.mean())
    return LineStats(delta, "ok", int(H.size), mean, float(np.max(np.abs(H - mean))))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def write_obj(mesh: SurfaceMesh, path: str | Path, orthonormalize: bool = False) -> None:
    """Vertices row-major over (t, x); each grid quad split into two triangles."""
    nt, nx = mesh.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# surface mesh {nt} x {nx} (rows: t, columns: x)\n")
        for p in mesh.X.reshape(-1, 3):
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for j in range(nt - 1):
            for i in range(nx - 1):
                v00 = j * nx + i + 1
                v01 = v00 + 1
                v10 = v00 + nx
                v11 = v10 + 1
                fh.write(f"f {v00} {v01} {v11}\n")
                fh.write(f"f {v00} {v11} {v10}\n")


def mesh_diagnostics(mesh: SurfaceMesh) -> dict[str, np.ndarray]:
    Xg, Tg = np.meshgrid(mesh.x, mesh.t)
    eta = mesh.params.get("eta", math.nan)
    beta = mesh.params.get("beta", math.nan)
    nanv = np.full(Xg.shape, math.nan)
    a, b, c = mesh.abc if mesh.abc is not None else (nanv, nanv, nanv)
    return {
        "x": Xg, "t": Tg, "s": eta * Xg + beta * Tg, "a": a, "b": b, "c": c,
        "H_mean": mean_curvature(a, b, c), "K_est": gaussian_curvature_mesh(mesh),
        "metric_err": mesh.metric_error(),
    }


def write_diagnostics_csv(mesh: SurfaceMesh, path: str | Path) -> None:
    cols = mesh_diagnostics(mesh)
    header = ["x", "t", "s", "a", "b", "c", "H_mean", "K_est", "metric_err"]
    flat = [cols[h].ravel() for h in header]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*flat):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
