"""Method-of-lines solver for z0_t = F(z0, ..., zk) on a uniform 1-D grid.

Spatial jets come from repeatedly applying one first-derivative stencil
(2nd or 4th order), so z_{i+1} is the difference of z_i.  Time stepping is
classical RK4 with a fixed step; every stage recomputes the jets.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import jet
from .jet import Expression, max_jet_order
from .system import PssSystem, default_rhs, structure_residual_exprs


class SolverError(RuntimeError):
    pass


class GridTooSmallError(SolverError, ValueError):
    pass


class SolverAbort(SolverError):
    """Non-finite values appeared; ``field`` holds the frames stored so far."""

    def __init__(self, message: str, last_valid_time: float, field: "SolutionField | None" = None):
        super().__init__(message)
        self.last_valid_time = last_valid_time
        self.field = field


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    nx: int
    boundary: str = "periodic"  # or "dirichlet"
    left: Callable[[float], float] | None = None
    right: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.nx < 8:
            raise ValueError("nx must be >= 8")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.boundary == "dirichlet" and (self.left is None or self.right is None):
            raise ValueError("dirichlet grid needs left and right boundary functions of t")

    @classmethod
    def periodic(cls, x_min: float, x_max: float, nx: int) -> "Grid":
        return cls(x_min, x_max, nx, "periodic")

    @classmethod
    def dirichlet(cls, x_min: float, x_max: float, nx: int, left, right) -> "Grid":
        return cls(x_min, x_max, nx, "dirichlet", left, right)

    @property
    def h(self) -> float:
        span = self.x_max - self.x_min
        return span / self.nx if self.boundary == "periodic" else span / (self.nx - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.nx)


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    t_end: float
    scheme: str = "RK4"
    jet_stencil_order: int = 4
    store_every: int = 1
    t_start: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme != "RK4":
            raise ValueError("only RK4 is available")
        if self.jet_stencil_order not in (2, 4):
            raise ValueError("jet_stencil_order must be 2 or 4")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")
        if self.t_end < self.t_start:
            raise ValueError("t_end precedes t_start")


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

# one-sided closures, rows for the first nodes of the left boundary
_CLOSURE = {
    2: np.array([[-3.0, 4.0, -1.0]]) / 2.0,
    4: np.array([[-25.0, 48.0, -36.0, 16.0, -3.0],
                 [-3.0, -10.0, 18.0, -6.0, 1.0]]) / 12.0,
}


def first_derivative(v: np.ndarray, h: float, order: int = 4, periodic: bool = True,
                     axis: int = -1) -> np.ndarray:
    """Central first derivative along ``axis``, one-sided of equal order at open ends."""
    v = np.moveaxis(np.asarray(v, dtype=float), axis, -1)
    n = v.shape[-1]
    if periodic:
        if order == 2:
            out = (np.roll(v, -1, -1) - np.roll(v, 1, -1)) / (2 * h)
        else:
            out = (8 * (np.roll(v, -1, -1) - np.roll(v, 1, -1))
                   - (np.roll(v, -2, -1) - np.roll(v, 2, -1))) / (12 * h)
        return np.moveaxis(out, -1, axis)

    if n < 2 * order + 1:
        raise GridTooSmallError(f"need at least {2 * order + 1} points for order-{order} closures, got {n}")
    out = np.empty_like(v)
    if order == 2:
        out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2 * h)
        nb = 1
    else:
        out[..., 2:-2] = (8 * (v[..., 3:-1] - v[..., 1:-3]) - (v[..., 4:] - v[..., :-4])) / (12 * h)
        nb = 2
    rows = _CLOSURE[order]
    width = rows.shape[1]
    # rows sum to zero, so apply them to differences from the end node (exact on constants)
    left = v[..., 1:width] - v[..., :1]
    right = v[..., ::-1][..., 1:width] - v[..., -1:]
    for r in range(nb):
        out[..., r] = left @ rows[r, 1:] / h
        # mirrored closure at the right end flips sign
        out[..., n - 1 - r] = -(right @ rows[r, 1:]) / h
    return np.moveaxis(out, -1, axis)


def spatial_jets(u_row: np.ndarray, grid: Grid, k: int, stencil_order: int = 4) -> list[np.ndarray]:
    """[z1, ..., zk] for one time slice, each the derivative of the previous."""
    out = []
    z = np.asarray(u_row, dtype=float)
    periodic = grid.boundary == "periodic"
    if not periodic and grid.nx < 2 * stencil_order + 1:
        raise GridTooSmallError(f"dirichlet grid needs nx >= {2 * stencil_order + 1}")
    for _ in range(k):
        z = first_derivative(z, grid.h, stencil_order, periodic)
        out.append(z)
    return out


# ---------------------------------------------------------------------------
# Solution container
# ---------------------------------------------------------------------------

@dataclass
class SolutionField:
    grid: Grid
    times: np.ndarray
    u: np.ndarray                # [time][x]
    jets: np.ndarray             # [time][order-1][x] : z1..zk
    stencil_order: int = 4
    residuals: np.ndarray | None = None   # max structure residual per stored frame
    params: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.jets.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def z(self, i: int) -> np.ndarray:
        """z_i over all stored frames, shape [time][x]."""
        return self.u if i == 0 else self.jets[:, i - 1, :]

    def recompute_jets(self) -> np.ndarray:
        return np.stack([np.stack(spatial_jets(row, self.grid, self.k, self.stencil_order)) if self.k
                         else np.empty((0, self.grid.nx)) for row in self.u])

    def frame_env(self, j: int) -> dict:
        env = dict(self.params)
        env.update({"x": self.x, "t": float(self.times[j]), "z0": self.u[j]})
        env.update({f"z{i + 1}": self.jets[j, i] for i in range(self.k)})
        return env

    def to_csv(self, path: str | Path) -> None:
        write_csv(self, path)


def write_csv(field_: SolutionField, path: str | Path) -> None:
    """Header ``t,x,u,z1..zk``; rows sorted by (t, x); 17 significant digits."""
    header = ["t", "x", "u"] + [f"z{i}" for i in range(1, field_.k + 1)]
    x = field_.x
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for j, t in enumerate(field_.times):
            cols = [np.full(x.shape, t), x, field_.u[j]] + [field_.jets[j, i] for i in range(field_.k)]
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path: str | Path, grid: Grid | None = None, stencil_order: int = 4) -> SolutionField:
    """Load a dump written by :func:`write_csv`.

    Without ``grid`` a periodic-free (dirichlet-like) grid is inferred from the
    x column; boundary functions are then unknown and only the data is usable.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    if header[:3] != ["t", "x", "u"]:
        raise ValueError(f"unexpected header {header}")
    k = len(header) - 3
    times = np.unique(data[:, 0])
    xs = np.unique(data[:, 1])
    nt, nx = times.size, xs.size
    if data.shape[0] != nt * nx:
        raise ValueError("CSV is not a complete (t, x) grid")
    u = data[:, 2].reshape(nt, nx)
    jets = data[:, 3:].reshape(nt, nx, k).transpose(0, 2, 1).copy()
    if grid is None:
        const = float(xs[0])
        grid = Grid(float(xs[0]), float(xs[-1]), nx, "dirichlet", lambda t: const, lambda t: const)
    return SolutionField(grid, times, u, jets, stencil_order)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------

class _Rhs:
    def __init__(self, F: Expression, grid: Grid, k: int, stencil_order: int, params: Mapping[str, float]):
        if max_jet_order(F) > k:
            raise SolverError(f"F has jet order {max_jet_order(F)} > k = {k}")
        self.fn = jet.compile_expr(F)
        self.grid = grid
        self.k = k
        self.order = stencil_order
        self.env = dict(params)
        self.env["x"] = grid.x
        self.needs = max(max_jet_order(F), 0)

    def __call__(self, u: np.ndarray, t: float) -> np.ndarray:
        env = self.env
        env["t"] = t
        env["z0"] = u
        for i, z in enumerate(spatial_jets(u, self.grid, self.needs, self.order), 1):
            env[f"z{i}"] = z
        out = self.fn(env)
        out = np.broadcast_to(np.asarray(out, dtype=float), u.shape).copy()
        if self.grid.boundary == "dirichlet":
            out[0] = out[-1] = 0.0
        return out


def _apply_bc(u: np.ndarray, grid: Grid, t: float) -> np.ndarray:
    if grid.boundary == "dirichlet":
        u[0] = grid.left(t)
        u[-1] = grid.right(t)
    return u


def step(u: np.ndarray, t: float, rhs: Callable[[np.ndarray, float], np.ndarray], dt: float,
         grid: Grid) -> np.ndarray:
    """One RK4 step of the semi-discrete system."""
    k1 = rhs(u, t)
    k2 = rhs(_apply_bc(u + 0.5 * dt * k1, grid, t + 0.5 * dt), t + 0.5 * dt)
    k3 = rhs(_apply_bc(u + 0.5 * dt * k2, grid, t + 0.5 * dt), t + 0.5 * dt)
    k4 = rhs(_apply_bc(u + dt * k3, grid, t + dt), t + dt)
    return _apply_bc(u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), grid, t + dt)


def solve(system_or_F: PssSystem | Expression, u0, grid: Grid, cfg: StepperConfig,
          params: Mapping[str, float] | None = None, k: int | None = None) -> SolutionField:
    """Integrate from ``cfg.t_start`` to ``cfg.t_end`` and store every ``store_every`` steps.

    ``u0`` is a callable of x or an array of grid values.  With a
    :class:`PssSystem` the right-hand side is its admissible F and the maximum
    structure residual over the grid (interior nodes for dirichlet) is recorded
    for every stored frame.
    """
    system = system_or_F if isinstance(system_or_F, PssSystem) else None
    if system is not None:
        F = default_rhs(system)
        env = system.env
        k = system.k
    else:
        F = system_or_F
        env = {}
        k = max(max_jet_order(F), 0) if k is None else k
    env.update(params or {})

    x = grid.x
    u = np.asarray(u0(x) if callable(u0) else u0, dtype=float).copy()
    if u.shape != x.shape:
        raise ValueError("initial data does not match the grid")
    t = cfg.t_start
    u = _apply_bc(u, grid, t)

    rhs = _Rhs(F, grid, k, cfg.jet_stencil_order, env)
    res_fns = None
    if system is not None:
        res_fns = [jet.compile_expr(r) for r in structure_residual_exprs(system, F)]

    nsteps = int(round((cfg.t_end - cfg.t_start) / cfg.dt))
    if nsteps and not math.isclose(nsteps * cfg.dt, cfg.t_end - cfg.t_start, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_end - t_start must be a whole number of steps")

    times, frames = [t], [u.copy()]

    def build(stored_times, stored_frames):
        U = np.array(stored_frames)
        J = (np.stack([np.stack(spatial_jets(row, grid, k, cfg.jet_stencil_order)) for row in U])
             if k else np.empty((U.shape[0], 0, grid.nx)))
        sol = SolutionField(grid, np.array(stored_times), U, J, cfg.jet_stencil_order, params=dict(env))
        if res_fns is not None:
            sol.residuals = np.array([_frame_residual(sol, j, res_fns) for j in range(U.shape[0])])
        return sol

    if not np.all(np.isfinite(u)):
        raise SolverAbort("initial data is not finite", t)
    with np.errstate(all="ignore"):
        for n in range(1, nsteps + 1):
            t_next = cfg.t_start + n * cfg.dt
            u_next = step(u, t, rhs, cfg.dt, grid)
            if not np.all(np.isfinite(u_next)):
                raise SolverAbort(f"non-finite values at t = {t_next:.6g}; last valid time {t:.6g}", t,
                                  build(times, frames))
            u, t = u_next, t_next
            if n % cfg.store_every == 0 or n == nsteps:
                if times[-1] != t:
                    times.append(t)
                    frames.append(u.copy())
    return build(times, frames)


def _frame_residual(sol: SolutionField, j: int, fns) -> float:
    env = sol.frame_env(j)
    worst = 0.0
    sl = slice(None) if sol.grid.boundary == "periodic" else slice(1, -1)
    for fn in fns:
        r = np.broadcast_to(np.asarray(fn(env), dtype=float), sol.x.shape)[sl]
        worst = max(worst, float(np.max(np.abs(r))) if r.size else 0.0)
    return worst


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

def convergence_order(F: Expression, exact: Callable[[np.ndarray, float], np.ndarray],
                      grids: Sequence[Grid], t_end: float, dt_factor: float = 0.2,
                      stencil_order: int = 4, params: Mapping[str, float] | None = None) -> float:
    """Least-squares slope of log(max error) against log(h) with dt = dt_factor*h^2.

    Raises :class:`ValueError` when the error vanishes (order undefined).
    """
    if len(grids) < 3:
        raise ValueError("need at least three grid resolutions")
    hs, errs = [], []
    for g in grids:
        nsteps = max(1, int(math.ceil(t_end / (dt_factor * g.h ** 2))))
        cfg = StepperConfig(dt=t_end / nsteps, t_end=t_end, jet_stencil_order=stencil_order, store_every=nsteps)
        sol = solve(F, lambda x: exact(x, 0.0), g, cfg, params=params)
        err = float(np.max(np.abs(sol.u[-1] - exact(g.x, sol.times[-1]))))
        hs.append(g.h)
        errs.append(err)
    errs_arr = np.array(errs)
    if np.any(errs_arr == 0) or not np.all(np.isfinite(errs_arr)):
        raise ValueError("error is zero or non-finite on some grid; convergence order undefined")
    slope, _ = np.polyfit(np.log(hs), np.log(errs_arr), 1)
    return float(slope)
