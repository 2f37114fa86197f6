"""Finite-difference solvers for the controlled reaction-diffusion equation.

One spatial dimension, the 2D strip R x [0,1] with Neumann side walls, and
the rescaled plane equation u_t = f(u)/eps + eps*Lap(u) - u*alpha.  All
solvers use operator splitting: implicit (tridiagonal) diffusion sweeps,
explicit reaction and control.  Implicit diffusion keeps the time step
limited by the reaction scale only, which matters for eps sweeps.

Boundary handling: far-field values are pinned to the initial boundary
values (profile tails 0 and 1 in 1D and on the strip, 0 outside the box in
plane runs); a Neumann option is available where conservation is wanted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from frontctrl.errors import (
    CFLViolationError,
    FrontCtrlError,
    FrontHitBoundaryError,
    InvalidParameterError,
    LayerResolutionError,
)
from frontctrl.optimal_control import ControlMeasure
from frontctrl.reaction_models import ControlCoupling, ReactionModel

ATOM_WIDTH_CELLS = 4
BOUNDARY_GUARD_CELLS = 10


@dataclass(frozen=True)
class Grid1D:
    x_lo: float
    x_hi: float
    n: int

    def __post_init__(self):
        if self.n < 2 or self.x_hi <= self.x_lo:
            raise InvalidParameterError("grid needs x_hi > x_lo and n >= 2")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n + 1)


@dataclass
class Field:
    """Sampled scalar field with its time stamp."""

    grid: Grid1D
    values: np.ndarray
    t: float = 0.0

    def max_principle_violation(self) -> float:
        return float(max(np.max(self.values) - 1.0, -np.min(self.values), 0.0))


@dataclass
class FrontTrace:
    """Positions of the u = 1/2 level over time with a fitted speed."""

    times: np.ndarray
    positions: np.ndarray
    speed: float = math.nan
    residual: float = math.nan

    def fit(self):
        """Least squares over the second half of the window."""
        n = len(self.times)
        if n < 4:
            return self
        k = n // 2
        t, x = self.times[k:], self.positions[k:]
        A = np.column_stack([t, np.ones_like(t)])
        sol, *_ = np.linalg.lstsq(A, x, rcond=None)
        self.speed = float(sol[0])
        self.residual = float(np.sqrt(np.mean((x - A @ sol) ** 2)))
        return self


def step_profile(grid: Grid1D, x0: float = 0.0, width: float = 1.0) -> Field:
    """Smoothed step from 0 (left) to 1 (right) centered at x0."""
    x = grid.nodes
    return Field(grid, 0.5 * (1.0 + np.tanh((x - x0) / width)))


def _tridiag_factors(n, lam, bc):
    """Banded matrix for (I - lam * D2) with the given boundary condition."""
    ab = np.zeros((3, n))
    ab[0, 1:] = -lam
    ab[1, :] = 1.0 + 2.0 * lam
    ab[2, :-1] = -lam
    if bc == "neumann":
        ab[1, 0] = 1.0 + lam
        ab[1, -1] = 1.0 + lam
    elif bc == "pinned":
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
    else:
        raise InvalidParameterError(f"unknown boundary condition {bc!r}")
    return ab


def _diffuse(values, lam, bc, axis=0):
    """Implicit diffusion solve along one axis; values may be 1D or 2D."""
    if values.ndim == 1:
        ab = _tridiag_factors(values.size, lam, bc)
        return solve_banded((1, 1), ab, values)
    v = np.moveaxis(values, axis, 0)
    ab = _tridiag_factors(v.shape[0], lam, bc)
    out = solve_banded((1, 1), ab, v.reshape(v.shape[0], -1))
    return np.moveaxis(out.reshape(v.shape), 0, axis)


def pure_diffusion_1d(u0: Field, T: float, dt: float, bc: str = "neumann") -> Field:
    """Diffusion-only run, exposed for conservation checks."""
    u = u0.values.copy()
    t = 0.0
    while t < T - 1e-14:
        step = min(dt, T - t)
        u = _diffuse(u, step / u0.grid.dx**2, bc)
        t += step
    return Field(u0.grid, u, u0.t + t)


def _atom_hat(x, center, dx):
    """Triangular bump of unit mass and width ATOM_WIDTH_CELLS * dx.

    Support starts at ``center`` and extends rightward, into the side
    where the generating profile is positive; a symmetric bump would put
    sink mass where u vanishes, which the monostable reaction amplifies
    into blow-up.
    """
    half = 0.5 * ATOM_WIDTH_CELLS * dx
    h = np.maximum(0.0, 1.0 - np.abs(x - (center + half)) / half)
    s = h.sum() * dx
    return h / s if s > 0 else h


def control_sink_1d(control: ControlMeasure, x: np.ndarray, shift: float,
                    dx: float) -> np.ndarray:
    """Measure density of the control on the grid, translated by ``shift``.

    Atoms are mollified to mass-preserving triangular bumps; the sampled
    density is interpolated.  Returns mu(x): the additive sink, or the
    numerator of the multiplicative field alpha = mu/u.
    """
    out = np.zeros_like(x)
    if control is None:
        return out
    for atom in control.atoms:
        out += atom.mass * _atom_hat(x, atom.x + shift, dx)
    if np.any(control.density > 0):
        out += np.interp(x - shift, control.x, control.density,
                         left=0.0, right=0.0)
    return out


def control_alpha_1d(control: ControlMeasure, profile_U, x: np.ndarray,
                     shift: float) -> np.ndarray:
    """Multiplicative control field alpha(x) = mu(x)/U(x) on the grid."""
    if control is None:
        return np.zeros_like(x)
    if control.atoms:
        raise InvalidParameterError(
            "multiplicative coupling with atomic control has unbounded alpha")
    dens = np.interp(x - shift, control.x, control.density, left=0.0, right=0.0)
    uu = np.interp(x - shift, control.x, profile_U, left=1.0, right=1.0)
    return dens / np.maximum(uu, 1e-12)


@dataclass
class Run1DResult:
    u_final: Field
    trace: FrontTrace


def run_1d(model: ReactionModel, coupling: ControlCoupling,
           control: ControlMeasure | None, u0: Field, T: float,
           dt: float, control_speed: float = 0.0,
           profile_U: np.ndarray | None = None,
           scheme: str = "imex", bc: str = "pinned",
           trace_every: int = 5) -> Run1DResult:
    """Advance u_t = f(u) + u_xx - g(u, alpha) and track the front.

    The control measure translates rigidly at ``control_speed``.  With the
    default semi-implicit scheme any dt below the reaction scale is
    stable; ``scheme="explicit"`` enforces the diffusive CFL limit.
    """
    grid = u0.grid
    dx = grid.dx
    x = grid.nodes
    u = u0.values.copy()

    if scheme == "explicit" and dt > 0.4 * dx * dx:
        raise CFLViolationError(
            f"explicit scheme needs dt <= 0.4 dx^2 = {0.4*dx*dx:g}, got {dt:g}")

    n_steps = int(round(T / dt))
    lam = dt / dx**2
    times, positions = [], []
    guard = BOUNDARY_GUARD_CELLS * dx

    if control is not None and coupling is ControlCoupling.MULTIPLICATIVE:
        if profile_U is None:
            raise InvalidParameterError(
                "multiplicative coupling needs the generating profile values")

    for k in range(n_steps):
        t = k * dt
        if control is not None:
            shift = control_speed * t
            if coupling is ControlCoupling.ADDITIVE:
                sink = control_sink_1d(control, x, shift, dx)
            else:
                sink = control_alpha_1d(control, profile_U, x, shift) * u
        else:
            sink = 0.0
        u = u + dt * (np.asarray(model.f(u)) - sink)
        if scheme == "explicit":
            lap = np.empty_like(u)
            lap[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx**2
            lap[0] = lap[-1] = 0.0
            u = u + dt * lap
            u[0], u[-1] = u0.values[0], u0.values[-1]
        else:
            if bc == "pinned":
                u[0], u[-1] = u0.values[0], u0.values[-1]
            u = _diffuse(u, lam, bc)

        if k % trace_every == 0 or k == n_steps - 1:
            xf = _front_position(x, u)
            if xf is not None:
                if xf < grid.x_lo + guard or xf > grid.x_hi - guard:
                    raise FrontHitBoundaryError(
                        f"front at x={xf:g} within {BOUNDARY_GUARD_CELLS} cells "
                        "of the domain edge")
                times.append(t + dt)
                positions.append(xf)

    trace = FrontTrace(np.array(times), np.array(positions)).fit()
    return Run1DResult(Field(grid, u, u0.t + n_steps * dt), trace)


def _front_position(x, u, level: float = 0.5):
    du = u - level
    idx = np.nonzero(du[:-1] * du[1:] <= 0)[0]
    if idx.size == 0:
        return None
    i = idx[0]
    if du[i + 1] == du[i]:
        return float(x[i])
    return float(x[i] - du[i] * (x[i + 1] - x[i]) / (du[i + 1] - du[i]))


@dataclass(frozen=True)
class Grid2D:
    x_lo: float
    x_hi: float
    nx: int
    y_lo: float
    y_hi: float
    ny: int

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_hi - self.y_lo) / self.ny

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx + 1)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_lo, self.y_hi, self.ny + 1)


@dataclass
class Field2D:
    grid: Grid2D
    values: np.ndarray  # shape (nx+1, ny+1)
    t: float = 0.0

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.dx * self.grid.dy)


@dataclass
class StripRunResult:
    u_final: Field2D
    trace: FrontTrace
    l1_control: float
    mc_residual: float
    settled: bool


def run_strip_2d(model: ReactionModel, z, c: float, u0: Field2D, T: float,
                 dt: float, settle_tol: float = 5e-3,
                 trace_every: int = 5) -> StripRunResult:
    """Strip run u_t = f(u) + Lap(u) - z(x1 - c t, x2), Neumann side walls.

    ``z`` is a callable of co-moving coordinates (X1, X2) returning the
    sink density.  After the run settles to a traveling state the mass
    identity |z|_L1 = integral of f(u) + c holds; its residual is
    evaluated on the final field.
    """
    grid = u0.grid
    dx, dy = grid.dx, grid.dy
    u = u0.values.copy()
    X1, X2 = np.meshgrid(grid.x, grid.y, indexing="ij")
    n_steps = int(round(T / dt))
    times, positions = [], []
    guard = BOUNDARY_GUARD_CELLS * dx

    for k in range(n_steps):
        t = k * dt
        sink = z(X1 - c * t, X2)
        u = u + dt * (np.asarray(model.f(u)) - sink)
        u[0, :], u[-1, :] = u0.values[0, :], u0.values[-1, :]
        u = _diffuse(u, dt / dx**2, "pinned", axis=0)
        u = _diffuse(u, dt / dy**2, "neumann", axis=1)
        if not np.all(np.isfinite(u[:: max(1, grid.nx // 64), 0])):
            raise FrontCtrlError(f"strip run blew up at t={t + dt:g}")

        if k % trace_every == 0 or k == n_steps - 1:
            prof = u.mean(axis=1)
            xf = _front_position(grid.x, prof)
            if xf is not None:
                if xf < grid.x_lo + guard or xf > grid.x_hi - guard:
                    raise FrontHitBoundaryError(f"front at x={xf:g} near edge")
                times.append(t + dt)
                positions.append(xf)

    trace = FrontTrace(np.array(times), np.array(positions)).fit()
    settled = np.isfinite(trace.residual) and trace.residual < settle_tol
    if not settled:
        warnings.warn("strip run did not settle to a traveling state",
                      UserWarning, stacklevel=2)

    z0 = z(X1, X2)
    l1 = float(np.trapezoid(np.trapezoid(np.abs(z0), grid.y, axis=1), grid.x))
    f_int = float(np.trapezoid(np.trapezoid(np.asarray(model.f(u)), grid.y, axis=1), grid.x))
    mc_residual = abs(l1 - f_int - c)
    return StripRunResult(Field2D(grid, u, u0.t + n_steps * dt), trace,
                          l1, mc_residual, settled)


@dataclass
class PlaneRunResult:
    snapshots: list
    control_mass: np.ndarray     # at snapshot times
    snapshot_times: np.ndarray


def run_plane_2d(model: ReactionModel, eps: float, alpha, u0: Field2D,
                 T: float, dt: float, snapshot_times=None,
                 bc: str = "pinned") -> PlaneRunResult:
    """Rescaled plane equation u_t = f(u)/eps + eps Lap(u) - u alpha.

    ``alpha`` is a callable (t, X, Y) returning the multiplicative control
    field (or None).  Snapshots (copies) are collected at the requested
    times; the control mass integral is recorded alongside.
    """
    grid = u0.grid
    dx, dy = grid.dx, grid.dy
    if dx > eps / 4 + 1e-12 or dy > eps / 4 + 1e-12:
        raise LayerResolutionError(
            f"dx={max(dx, dy):g} too coarse for the O(eps) layer; need <= eps/4")
    lf = _max_df(model)
    if dt * lf / eps > 0.6:
        raise CFLViolationError(
            f"explicit reaction needs dt <= 0.6 eps / max|f'| = {0.6*eps/lf:g}")

    u = u0.values.copy()
    X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
    n_steps = int(round(T / dt))
    if snapshot_times is None:
        snapshot_times = np.linspace(0.0, T, 11)
    snapshot_times = np.asarray(sorted(snapshot_times), dtype=float)

    snaps, masses, taken = [], [], 0
    lam_x = eps * dt / dx**2
    lam_y = eps * dt / dy**2

    def record(t_now, a_field):
        nonlocal taken
        while taken < len(snapshot_times) and snapshot_times[taken] <= t_now + dt * 0.5:
            snaps.append(Field2D(grid, u.copy(), t_now))
            m = float(np.sum(a_field) * dx * dy) if a_field is not None else 0.0
            masses.append(m)
            taken += 1

    a0 = alpha(0.0, X, Y) if alpha is not None else None
    record(0.0, a0)
    for k in range(n_steps):
        t = k * dt
        a = alpha(t, X, Y) if alpha is not None else None
        sink = u * a if a is not None else 0.0
        u = u + dt * (np.asarray(model.f(u)) / eps - sink)
        if bc == "pinned":
            u[0, :], u[-1, :] = u0.values[0, :], u0.values[-1, :]
            u[:, 0], u[:, -1] = u0.values[:, 0], u0.values[:, -1]
            u = _diffuse(u, lam_x, "pinned", axis=0)
            u = _diffuse(u, lam_y, "pinned", axis=1)
        else:
            u = _diffuse(u, lam_x, "neumann", axis=0)
            u = _diffuse(u, lam_y, "neumann", axis=1)
        record(t + dt, a)

    return PlaneRunResult(snaps, np.array(masses), snapshot_times[:taken])


def _max_df(model) -> float:
    uu = np.linspace(0.0, 1.0, 257)
    return float(np.max(np.abs(model.df(uu))))
