"""Moving sets, boundary effort, and the vanishing-layer verification.

A moving set is a time-indexed closed boundary curve x(t, xi), xi on the
unit circle with normalized arc measure (total measure 1), oriented
counterclockwise.  The inward unit normal is x_xi rotated by 90 degrees
over |x_xi|; the normal velocity beta is its inner product with x_t, so
beta > 0 means the set is locally shrinking.

The layer construction drives the rescaled equation
u_t = f(u)/eps + eps*Lap(u) - u*alpha with controls assembled from a bank
of lower/upper traveling profiles:

- lower profiles: uncontrolled trajectories at a speed c1 below the
  boundary speeds, running from u = 0 (with positive slope p_n) up to the
  plateau 1 - 1/n;
- upper profiles: controlled profiles whose phase path follows the
  switching curve between two uncontrolled trajectory legs, from the
  plateau 1/n up to u = 1, one per sampled speed.

Profiles are rescaled by eps and laid across an annulus around the moving
boundary; the smallest control field keeping the composed upper function
a supersolution is the positive part of its residual divided by the
field, evaluated by finite differences on the simulation grid.  As eps
shrinks, the solution converges to the set indicator and the control mass
to the boundary effort integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from frontctrl.errors import (
    AnnulusOverlapError,
    DegenerateParameterizationError,
    FrontCtrlError,
    InvalidParameterError,
    ProfileFitError,
)
from frontctrl.optimal_control import ECurve
from frontctrl.pde_sim import Field2D, Grid2D, run_plane_2d, _diffuse
from frontctrl.phase_plane import find_cstar, switching_curve
from frontctrl.reaction_models import EffortCostFunction, ReactionModel

ANNULUS_FACTOR = 4.0  # annulus half-width in units of sqrt(eps)


@dataclass
class MovingSet:
    """Closed boundary curves on a (t, xi) tensor grid.

    boundary has shape (nt, nxi, 2); xi_grid is uniform on [0, 1) and the
    curve is periodic in xi.  An optional analytic ``chart`` maps grid
    nodes to annulus coordinates; builders provide one, generic data falls
    back to nearest-boundary search.
    """

    t_grid: np.ndarray
    xi_grid: np.ndarray
    boundary: np.ndarray
    chart: object | None = None

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.xi_grid = np.asarray(self.xi_grid, dtype=float)
        self.boundary = np.asarray(self.boundary, dtype=float)
        nt, nxi = len(self.t_grid), len(self.xi_grid)
        if self.boundary.shape != (nt, nxi, 2):
            raise InvalidParameterError("boundary must have shape (nt, nxi, 2)")
        xs = self.x_xi()
        norms = np.hypot(xs[..., 0], xs[..., 1])
        if np.any(norms < 1e-8):
            raise DegenerateParameterizationError("x_xi vanishes somewhere")
        if np.any(self.signed_areas() <= 0):
            raise InvalidParameterError("boundary must be counterclockwise")

    def x_xi(self) -> np.ndarray:
        """Derivative in xi by spectral differentiation (periodic)."""
        nxi = len(self.xi_grid)
        k = 2j * math.pi * np.fft.fftfreq(nxi, d=1.0 / nxi)
        out = np.empty_like(self.boundary)
        for comp in range(2):
            coef = np.fft.fft(self.boundary[:, :, comp], axis=1)
            out[:, :, comp] = np.real(np.fft.ifft(coef * k[None, :], axis=1))
        return out

    def x_t(self) -> np.ndarray:
        if len(self.t_grid) == 1:
            return np.zeros_like(self.boundary)
        return np.gradient(self.boundary, self.t_grid, axis=0)

    def signed_areas(self) -> np.ndarray:
        """Shoelace area per time row (positive for counterclockwise)."""
        x = self.boundary[:, :, 0]
        y = self.boundary[:, :, 1]
        xn = np.roll(x, -1, axis=1)
        yn = np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * yn - xn * y, axis=1)

    def max_radius(self) -> float:
        return float(np.max(np.hypot(self.boundary[..., 0], self.boundary[..., 1])))


@dataclass
class NormalData:
    """Inward unit normals and normal velocity on the (t, xi) grid."""

    n: np.ndarray      # (nt, nxi, 2)
    beta: np.ndarray   # (nt, nxi)
    x_xi_norm: np.ndarray  # (nt, nxi)


def normal_data(ms: MovingSet) -> NormalData:
    """n = rot90(x_xi)/|x_xi| (inward for counterclockwise curves),
    beta = <n, x_t>; positive beta means the set is locally shrinking."""
    xs = ms.x_xi()
    norms = np.hypot(xs[..., 0], xs[..., 1])
    if np.any(norms < 1e-8):
        raise DegenerateParameterizationError("x_xi vanishes somewhere")
    n = np.empty_like(xs)
    n[..., 0] = -xs[..., 1] / norms
    n[..., 1] = xs[..., 0] / norms
    xt = ms.x_t()
    beta = np.einsum("tki,tki->tk", n, xt)
    return NormalData(n, beta, norms)


class CircleChart:
    """Annulus coordinates for a shrinking/translating circular boundary."""

    def __init__(self, radius_fn, center_fn, beta_fn):
        self.radius_fn = radius_fn
        self.center_fn = center_fn
        self.beta_fn = beta_fn

    def coords(self, t, X, Y):
        cx, cy = self.center_fn(t)
        r = np.hypot(X - cx, Y - cy)
        y = self.radius_fn(t) - r
        with np.errstate(invalid="ignore"):
            theta = np.arctan2(Y - cy, X - cx)
        beta = self.beta_fn(t, theta)
        return y, beta

    def curvature_radius_min(self, t_grid):
        return float(min(self.radius_fn(t) for t in t_grid))


def shrinking_circle(R0: float, v: float, T: float, nt: int = 33,
                     nxi: int = 256) -> MovingSet:
    """Circle of radius R0 - v t, counterclockwise, shrinking for v > 0."""
    t = np.linspace(0.0, T, nt)
    xi = np.arange(nxi) / nxi
    ang = 2 * math.pi * xi
    R = R0 - v * t
    if np.any(R <= 0):
        raise InvalidParameterError("circle vanishes inside [0, T]")
    boundary = R[:, None, None] * np.stack(
        [np.cos(ang), np.sin(ang)], axis=-1)[None, :, :]
    chart = CircleChart(lambda tt: R0 - v * tt, lambda tt: (0.0, 0.0),
                        lambda tt, theta: np.full_like(np.asarray(theta, dtype=float), v))
    return MovingSet(t, xi, boundary, chart)


def translating_disc(R: float, w: float, T: float, nt: int = 33,
                     nxi: int = 256) -> MovingSet:
    """Disc of fixed radius translating at velocity (w, 0)."""
    t = np.linspace(0.0, T, nt)
    xi = np.arange(nxi) / nxi
    ang = 2 * math.pi * xi
    circ = R * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    boundary = circ[None, :, :] + np.stack(
        [w * t, np.zeros_like(t)], axis=-1)[:, None, :]
    chart = CircleChart(lambda tt: R, lambda tt: (w * tt, 0.0),
                        lambda tt, theta: -w * np.cos(theta))
    return MovingSet(t, xi, boundary, chart)


def ellipse_set(a: float, b: float, T: float, nt: int = 9,
                nxi: int = 256) -> MovingSet:
    """Static ellipse (generic-chart exercise; beta = 0)."""
    t = np.linspace(0.0, T, nt)
    xi = np.arange(nxi) / nxi
    ang = 2 * math.pi * xi
    boundary = np.stack([a * np.cos(ang), b * np.sin(ang)], axis=-1)
    boundary = np.repeat(boundary[None, :, :], nt, axis=0)
    return MovingSet(t, xi, boundary, None)


class GenericChart:
    """Nearest-boundary annulus coordinates from sampled data."""

    def __init__(self, ms: MovingSet, nd: NormalData):
        self.ms = ms
        self.nd = nd

    def coords(self, t, X, Y):
        i = int(np.clip(np.searchsorted(self.ms.t_grid, t), 0,
                        len(self.ms.t_grid) - 1))
        bx = self.ms.boundary[i, :, 0]
        by = self.ms.boundary[i, :, 1]
        P = np.stack([X.ravel(), Y.ravel()], axis=1)
        d2 = (P[:, 0:1] - bx[None, :]) ** 2 + (P[:, 1:2] - by[None, :]) ** 2
        j = np.argmin(d2, axis=1)
        nearest = np.stack([bx[j], by[j]], axis=1)
        nvec = self.nd.n[i, j]
        y = np.einsum("ki,ki->k", nvec, P - nearest)
        beta = self.nd.beta[i, j]
        return y.reshape(X.shape), beta.reshape(X.shape)

    def curvature_radius_min(self, t_grid):
        # crude but safe: an inscribed-circle bound from the boundary span
        return 0.25 * float(np.min(np.ptp(self.ms.boundary[..., 0], axis=1)))


def get_chart(ms: MovingSet):
    if ms.chart is not None:
        return ms.chart
    return GenericChart(ms, normal_data(ms))


def instantaneous_effort(ms: MovingSet, ecurve: ECurve, t: float) -> float:
    """Integral over the boundary of E(beta) |x_xi| d xi (trapezoid on the
    periodic xi grid; speeds at or below c* contribute zero)."""
    nd = normal_data(ms)
    beta_t = _interp_rows(ms.t_grid, nd.beta, t)
    norm_t = _interp_rows(ms.t_grid, nd.x_xi_norm, t)
    vals = ecurve(beta_t) * norm_t
    return float(np.mean(vals))


def _interp_rows(t_grid, arr, t):
    if len(t_grid) == 1:
        return arr[0]
    i = np.clip(np.searchsorted(t_grid, t) - 1, 0, len(t_grid) - 2)
    w = (t - t_grid[i]) / (t_grid[i + 1] - t_grid[i])
    w = min(max(w, 0.0), 1.0)
    return (1 - w) * arr[i] + w * arr[i + 1]


def total_cost(ms: MovingSet, ecurve: ECurve, cost: EffortCostFunction) -> float:
    """Running effort cost plus area penalties:
    integral of phi(effort) dt + kappa1 * integral of area dt
    + kappa2 * area(T)."""
    efforts = np.array([instantaneous_effort(ms, ecurve, t) for t in ms.t_grid])
    areas = ms.signed_areas()
    J = float(np.trapezoid([cost.phi(e) for e in efforts], ms.t_grid))
    J += cost.kappa1 * float(np.trapezoid(areas, ms.t_grid))
    J += cost.kappa2 * float(areas[-1])
    return J


@dataclass
class LowerProfile:
    y: np.ndarray
    U: np.ndarray
    a_n: float
    b_n: float
    p_n: float


@dataclass
class UpperProfile:
    c: float
    y: np.ndarray
    U: np.ndarray
    alpha: np.ndarray
    a_sharp: float
    b_sharp: float


@dataclass
class ProfileBank:
    """Lower profile at speed c1 and upper profiles over [c2, c3]."""

    model: ReactionModel
    n: int
    c1: float
    c_samples: np.ndarray
    lower: LowerProfile
    uppers: list
    c_star: float

    def width(self) -> float:
        w_low = self.lower.b_n - self.lower.a_n
        w_up = max(up.b_sharp - up.a_sharp for up in self.uppers)
        return w_low + w_up

    def upper_at(self, c: float, y: np.ndarray) -> np.ndarray:
        """Upper profile at speed c (monotone interpolation between the
        sampled speeds) evaluated at y."""
        cs = self.c_samples
        if c <= cs[0]:
            lo = hi = 0
            w = 0.0
        elif c >= cs[-1]:
            lo = hi = len(cs) - 1
            w = 0.0
        else:
            hi = int(np.searchsorted(cs, c))
            lo = hi - 1
            w = (c - cs[lo]) / (cs[hi] - cs[lo])
        n_inv = 1.0 / self.n
        va = np.interp(y, self.uppers[lo].y, self.uppers[lo].U,
                       left=n_inv, right=1.0)
        if hi == lo:
            return va
        vb = np.interp(y, self.uppers[hi].y, self.uppers[hi].U,
                       left=n_inv, right=1.0)
        return (1 - w) * va + w * vb

    def lower_at(self, y: np.ndarray) -> np.ndarray:
        return np.interp(y, self.lower.y, self.lower.U,
                         left=0.0, right=1.0 - 1.0 / self.n)


def _y_from_xsamples(samples, x):
    U = samples[:, 0]
    keep = np.concatenate([[True], np.diff(U) > 1e-14])
    return U[keep], samples[keep, 1], x[keep]


def build_profile_bank(model: ReactionModel, n: int, c_bracket,
                       n_c_samples: int = 5, c1: float = None,
                       c_star: float | None = None) -> ProfileBank:
    """Construct the lower/upper traveling profiles for plateau level 1/n.

    The lower profile integrates the uncontrolled system at c1 backward
    from (1 - 1/n, 0) to the P axis; each upper profile follows a
    trajectory from (1/n, 0), the switching-curve arc, and a trajectory
    into (1, 1/n) at its sampled speed.  All profiles are centered so the
    value at y = 0 is the interior zero of f.
    """
    model.require_bistable("build_profile_bank")
    if c_star is None:
        c_star = find_cstar(model)
    c2, c3 = float(c_bracket[0]), float(c_bracket[-1])
    if not c_star < c2 <= c3:
        raise InvalidParameterError("need c* < c2 <= c3")
    if n < 2 or 1.0 - 1.0 / n <= model.u_star:
        raise InvalidParameterError(
            f"plateau 1 - 1/n must exceed u_star; n={n} too small")
    if c1 is None:
        c1 = c2 - 0.1 * (c2 - c_star)
    if not c_star < c1 < c2:
        raise InvalidParameterError("need c* < c1 < c2")

    lower = _build_lower_profile(model, n, c1)
    cs = np.linspace(c2, c3, n_c_samples) if c3 > c2 else np.array([c2])
    uppers = [_build_upper_profile(model, n, c) for c in cs]
    return ProfileBank(model, n, c1, cs, lower, uppers, c_star)


def _build_lower_profile(model, n, c1) -> LowerProfile:
    from scipy.integrate import solve_ivp

    u_top = 1.0 - 1.0 / n

    def rhs(t, yv):  # backward in y
        return [-yv[1], c1 * yv[1] + model.f(yv[0])]

    def hit_axis(t, yv):
        return yv[0]
    hit_axis.terminal = True

    sol = solve_ivp(rhs, (0.0, 500.0), [u_top, 0.0], rtol=1e-10, atol=1e-12,
                    events=[hit_axis], dense_output=True, max_step=0.25)
    if not sol.t_events[0].size:
        raise FrontCtrlError("lower profile did not reach u = 0")
    tau_end = sol.t_events[0][0]
    tau = np.linspace(0.0, tau_end, 2000)
    states = sol.sol(tau)
    y = -tau[::-1]
    U = states[0][::-1]
    P = states[1][::-1]
    p_n = float(P[0])
    if p_n <= 0:
        raise FrontCtrlError("lower profile slope p_n must be positive")
    y0 = float(np.interp(model.u_star, U, y))
    y = y - y0
    return LowerProfile(y, U, float(y[0]), float(y[-1]), p_n)


def _build_upper_profile(model, n, c) -> UpperProfile:
    from scipy.integrate import solve_ivp

    us = model.u_star
    curve = switching_curve(model)
    n_inv = 1.0 / n

    def rhs_fwd(t, yv):
        return [yv[1], -c * yv[1] - model.f(yv[0])]

    # the leg approaches the switching curve from above; direction -1
    # keeps the touch at the launch point (P = P* = 0) from firing
    def hit_curve(t, yv):
        return yv[1] - curve(yv[0])
    hit_curve.terminal = True
    hit_curve.direction = -1

    sol1 = solve_ivp(rhs_fwd, (0.0, 500.0), [n_inv, 0.0], rtol=1e-10,
                     atol=1e-12, events=[hit_curve], dense_output=True,
                     max_step=0.25)
    if not sol1.t_events[0].size:
        raise FrontCtrlError(
            f"upper-profile leg from ({n_inv:g}, 0) missed the switching curve "
            f"at c={c:g}; speed too close to c*")
    t1 = sol1.t_events[0][0]
    tau1 = np.linspace(0.0, t1, 1200)
    s1 = sol1.sol(tau1)
    uA = float(s1[0, -1])

    def rhs_bwd(t, yv):
        return [-yv[1], c * yv[1] + model.f(yv[0])]

    # near U = 1 the 1/n offset puts this leg below the switching curve
    # (the curve has a sqrt cusp there), producing a spurious immediate
    # crossing; the junction with the arc is the later upward crossing,
    # which converges to the optimal-path corner as n grows
    def hit_curve_up(t, yv):
        return yv[1] - curve(yv[0])
    hit_curve_up.terminal = True
    hit_curve_up.direction = 1

    sol2 = solve_ivp(rhs_bwd, (0.0, 500.0), [1.0, n_inv], rtol=1e-10,
                     atol=1e-12, events=[hit_curve_up], dense_output=True,
                     max_step=0.25)
    if not sol2.t_events[0].size:
        raise FrontCtrlError(
            f"upper-profile leg into (1, {n_inv:g}) missed the switching curve "
            f"at c={c:g}")
    t2 = sol2.t_events[0][0]
    tau2 = np.linspace(0.0, t2, 1200)
    s2 = sol2.sol(tau2)
    uB = float(s2[0, -1])
    if not us < uA <= uB < 1.0:
        raise FrontCtrlError(
            f"switching-curve arc [{uA:g}, {uB:g}] is malformed at c={c:g}")

    # arc in y: du/dy = P*(u); sqrt substitution regularizes the u_star end
    sA = math.sqrt(uA - us)
    sB = math.sqrt(uB - us)
    svals = np.linspace(sA, sB, 1200)
    u_arc = us + svals**2
    p_arc = np.sqrt(np.maximum(u_arc * model.f(u_arc), 0.0))
    dyds = np.where(p_arc > 0, 2.0 * svals / np.maximum(p_arc, 1e-300), 0.0)
    if sA == 0.0:
        dyds[0] = 2.0 / math.sqrt(us * float(model.df(us)))
    y_arc = np.concatenate([[0.0], np.cumsum(
        0.5 * (dyds[1:] + dyds[:-1]) * np.diff(svals))])

    # multiplicative control on the arc: alpha = z* P* / u
    alpha_arc = (0.5 * (3.0 * model.f(u_arc) + u_arc * model.df(u_arc))
                 + c * p_arc) / u_arc

    # leg 1 ends where the arc starts; leg 2 (integrated backward from
    # (1, 1/n)) starts where the arc ends
    y1 = tau1 - tau1[-1]
    y2 = y_arc[-1] + (tau2[-1] - tau2[::-1])
    y_all = np.concatenate([y1[:-1], y_arc, y2[1:]])
    U_all = np.concatenate([s1[0, :-1], u_arc, s2[0][::-1][1:]])
    alpha_all = np.concatenate([np.zeros(len(tau1) - 1), alpha_arc,
                                np.zeros(len(tau2) - 1)])

    order = np.argsort(y_all)
    y_all, U_all, alpha_all = y_all[order], U_all[order], alpha_all[order]
    keep = np.concatenate([[True], np.diff(U_all) > 1e-14])
    y_all, U_all, alpha_all = y_all[keep], U_all[keep], alpha_all[keep]

    y0 = float(np.interp(us, U_all, y_all))
    y_all = y_all - y0
    return UpperProfile(float(c), y_all, U_all, alpha_all,
                        float(y_all[0]), float(y_all[-1]))


def radial_cutoff(R: float):
    """1 inside radius R, exponential decay outside; an integrable
    stationary supersolution of the rescaled equation wherever its value
    is at most the interior zero of f."""
    def phi(X, Y):
        r = np.hypot(X, Y)
        return np.where(r <= R, 1.0, np.exp(R - r))
    return phi


@dataclass
class ControlBundle:
    """Lower/upper envelopes and the minimal supersolution control field
    for one layer thickness eps.

    The tubular neighbourhood of the boundary is asymmetric: the inward
    half-width is capped by the curvature radius (inward normal rays cross
    at the medial axis), while the outward tube of a convex boundary is
    globally injective and can extend as far as the transitions need.
    """

    ms: MovingSet
    bank: ProfileBank
    eps: float
    dt_eval: float
    cutoff_R: float
    half_in: float
    half_out: float

    def __post_init__(self):
        eps = self.eps
        rt = math.sqrt(eps)
        chart = get_chart(self.ms)
        rmin = chart.curvature_radius_min(self.ms.t_grid)
        if self.half_in >= rmin:
            raise AnnulusOverlapError(
                f"inward annulus half-width {self.half_in:g} exceeds the "
                f"curvature radius {rmin:g}")
        lo = self.bank.lower
        if eps * lo.b_n + rt > self.half_in or eps * abs(lo.a_n) - rt > self.half_out:
            raise ProfileFitError(
                f"lower transition does not fit the annulus at eps={eps:g}, "
                f"n={self.bank.n}")
        for u in self.bank.uppers:
            if (eps * abs(u.a_sharp) + rt > self.half_out
                    or eps * u.b_sharp - rt > self.half_in):
                raise ProfileFitError(
                    f"upper transition does not fit the annulus at eps={eps:g}, "
                    f"n={self.bank.n}")

    def u_lower(self, t, X, Y):
        y, _ = get_chart(self.ms).coords(t, X, Y)
        return self.bank.lower_at((y - math.sqrt(self.eps)) / self.eps)

    def u_upper(self, t, X, Y):
        y, beta = get_chart(self.ms).coords(t, X, Y)
        arg = (y + math.sqrt(self.eps)) / self.eps
        if np.isscalar(beta) or np.ndim(beta) == 0:
            v = self.bank.upper_at(float(beta), arg)
        else:
            v = np.empty_like(arg)
            flat_b = np.asarray(beta).ravel()
            flat_a = arg.ravel()
            vv = np.empty_like(flat_a)
            if np.ptp(flat_b) < 1e-12:
                vv = self.bank.upper_at(float(flat_b[0]), flat_a)
            else:
                for bval in np.unique(np.round(flat_b, 12)):
                    mask = np.abs(flat_b - bval) < 1e-12
                    vv[mask] = self.bank.upper_at(float(bval), flat_a[mask])
            v = vv.reshape(arg.shape)
        cut = radial_cutoff(self.cutoff_R)(X, Y)
        return np.minimum(v, cut)

    def alpha(self, t, X, Y, dx=None):
        """Minimal control keeping the upper envelope a supersolution:
        [eps Lap(v) + f(v)/eps - v_t]_+ / v by finite differences.

        The residual vanishes identically on the uncontrolled legs of the
        profile, so rectification of raw truncation noise there would add
        an eps-independent spurious mass; a fourth-order Laplacian and a
        binomial smoothing of the residual suppress it before the positive
        part is taken.
        """
        eps = self.eps
        dte = self.dt_eval
        v0 = self.u_upper(t, X, Y)
        vp = self.u_upper(t + dte, X, Y)
        vm = self.u_upper(max(t - dte, 0.0), X, Y)
        denom = dte + min(t, dte)
        vt = (vp - vm) / denom
        if dx is None:
            dx = float(X[1, 0] - X[0, 0])
        lap = _laplacian4(v0, dx)
        model = self.bank.model
        resid = eps * lap + np.asarray(model.f(v0)) / eps - vt
        resid = _binomial_smooth(resid)
        return np.maximum(resid, 0.0) / np.maximum(v0, 1e-12)


def _laplacian4(v, dx):
    """Fourth-order 5-point Laplacian per axis; second-order one cell from
    the edge, zero on the frame (plateau regions in practice)."""
    lap = np.zeros_like(v)
    if v.ndim == 1:
        lap[2:-2] = (-v[4:] + 16 * v[3:-1] - 30 * v[2:-2]
                     + 16 * v[1:-3] - v[:-4]) / (12 * dx * dx)
        lap[1] = (v[2] - 2 * v[1] + v[0]) / dx**2
        lap[-2] = (v[-1] - 2 * v[-2] + v[-3]) / dx**2
        return lap
    for ax in (0, 1):
        w = np.moveaxis(v, ax, 0)
        out = np.zeros_like(w)
        out[2:-2] = (-w[4:] + 16 * w[3:-1] - 30 * w[2:-2]
                     + 16 * w[1:-3] - w[:-4]) / (12 * dx * dx)
        out[1] = (w[2] - 2 * w[1] + w[0]) / dx**2
        out[-2] = (w[-1] - 2 * w[-2] + w[-3]) / dx**2
        lap += np.moveaxis(out, 0, ax)
    return lap


def _binomial_smooth(v, passes: int = 2):
    """Separable [1, 2, 1]/4 smoothing, ``passes`` times per axis."""
    out = v
    for _ in range(passes):
        if out.ndim == 1:
            padded = np.pad(out, 1, mode="edge")
            out = 0.25 * (padded[:-2] + 2 * padded[1:-1] + padded[2:])
        else:
            padded = np.pad(out, ((1, 1), (0, 0)), mode="edge")
            out = 0.25 * (padded[:-2] + 2 * padded[1:-1] + padded[2:])
            padded = np.pad(out, ((0, 0), (1, 1)), mode="edge")
            out = 0.25 * (padded[:, :-2] + 2 * padded[:, 1:-1] + padded[:, 2:])
    return out


def build_controls(ms: MovingSet, bank: ProfileBank, eps: float,
                   dt_eval: float, cutoff_margin: float = 0.5,
                   annulus_factor: float = ANNULUS_FACTOR) -> ControlBundle:
    """Assemble lower/upper envelopes and the control field for one eps.

    Raises ProfileFitError when the rescaled transitions do not fit the
    annulus (choose a smaller plateau parameter n or a smaller eps) and
    AnnulusOverlapError when the inward tube would self-intersect.
    """
    R = ms.max_radius() + cutoff_margin + 2.0 * eps * bank.width()
    chart = get_chart(ms)
    rmin = chart.curvature_radius_min(ms.t_grid)
    half_in = min(annulus_factor * math.sqrt(eps), 0.9 * rmin)
    half_out = max(2.0 * annulus_factor * math.sqrt(eps),
                   eps * abs(bank.lower.a_n) + 2.0 * math.sqrt(eps),
                   max(eps * abs(u.a_sharp) for u in bank.uppers)
                   + 2.0 * math.sqrt(eps))
    return ControlBundle(ms, bank, eps, dt_eval,
                         cutoff_R=R, half_in=half_in, half_out=half_out)


N_LADDER = (50, 40, 32, 24, 16, 12, 10, 8, 6, 5, 4)


def pick_plateau_n(model: ReactionModel, ms: MovingSet, c_bracket, eps: float,
                   c_star: float | None = None, c1: float | None = None,
                   annulus_factor: float = ANNULUS_FACTOR,
                   bank_cache: dict | None = None) -> ProfileBank:
    """Largest plateau parameter from the ladder whose profiles fit the
    eps annulus, mirroring the paper-style coupling of n and eps."""
    last_err = None
    for n in N_LADDER:
        key = (n, None if c1 is None else round(c1, 9))
        bank = None if bank_cache is None else bank_cache.get(key)
        if bank is None:
            try:
                bank = build_profile_bank(model, n, c_bracket, c1=c1,
                                          c_star=c_star)
            except (FrontCtrlError, InvalidParameterError) as e:
                last_err = e
                continue
            if bank_cache is not None:
                bank_cache[key] = bank
        try:
            build_controls(ms, bank, eps, dt_eval=1e-3,
                           annulus_factor=annulus_factor)
            return bank
        except (ProfileFitError, AnnulusOverlapError) as e:
            last_err = e
    raise ProfileFitError(
        f"no plateau parameter fits eps={eps:g}: {last_err}")


@dataclass
class LimitReportRow:
    eps: float
    n: int
    l1_error: float
    mass_gap: float
    control_mass: np.ndarray
    effort: np.ndarray
    times: np.ndarray
    sandwich_violation: float


def verify_limit(ms: MovingSet, model: ReactionModel, ecurve: ECurve,
                 eps_list, grids, dt_factor: float = 0.4,
                 snapshot_count: int = 9, bank: ProfileBank | None = None,
                 c_bracket=None, check_sandwich: bool = True) -> list:
    """Run the rescaled equation with constructed controls for each eps.

    For each eps: pick (or take) a profile bank, build the control bundle,
    seed the field at the lower envelope, advance to T, and report the
    worst indicator-function L1 error, the control-mass-versus-effort gap,
    and the comparison-sandwich violation at snapshot times.
    """
    T = float(ms.t_grid[-1])
    rows = []
    cache: dict = {}
    nd = normal_data(ms)
    if c_bracket is None:
        lo = float(np.min(nd.beta)); hi = float(np.max(nd.beta))
        pad = max(0.05 * (abs(hi) + 1), 1e-3)
        c_bracket = (lo - pad, hi + pad)
    c_star = find_cstar(model)
    if float(np.min(nd.beta)) <= c_star:
        raise InvalidParameterError(
            "normal velocity must exceed c* everywhere for the layer construction")

    chart = get_chart(ms)
    rmin = chart.curvature_radius_min(ms.t_grid)
    for eps, grid in zip(eps_list, grids):
        # the subsolution needs its speed margin over c1 to absorb the
        # curvature term eps/r of the annular Laplacian
        c2 = float(c_bracket[0])
        c1 = min(c2 - 0.1 * (c2 - c_star), c2 - 2.0 * eps / rmin)
        if c1 <= c_star:
            raise InvalidParameterError(
                f"eps={eps:g} too coarse: the curvature margin pushes the "
                f"lower-profile speed below c*")
        bank_eps = bank if bank is not None else pick_plateau_n(
            model, ms, c_bracket, eps, c_star=c_star, c1=c1, bank_cache=cache)
        lf = max(abs(float(model.df(u))) for u in np.linspace(0, 1, 101))
        dt = dt_factor * eps / lf
        n_steps = max(1, int(round(T / dt)))
        dt = T / n_steps
        bundle = build_controls(ms, bank_eps, eps, dt_eval=dt)

        X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
        u0 = Field2D(grid, bundle.u_lower(0.0, X, Y))
        snap_times = np.linspace(0.0, T, snapshot_count)
        result = run_plane_2d(model, eps, bundle.alpha, u0, T, dt,
                              snapshot_times=snap_times)

        cell = grid.dx * grid.dy
        l1_err = 0.0
        gap = 0.0
        sandwich = 0.0
        efforts = []
        for snap, m in zip(result.snapshots, result.control_mass):
            y, _ = get_chart(ms).coords(snap.t, X, Y)
            indicator = (y > 0).astype(float)
            l1_err = max(l1_err, float(np.sum(np.abs(snap.values - indicator)) * cell))
            eff = instantaneous_effort(ms, ecurve, snap.t)
            efforts.append(eff)
            gap = max(gap, abs(m - eff))
            if check_sandwich:
                lo_v = bundle.u_lower(snap.t, X, Y)
                hi_v = bundle.u_upper(snap.t, X, Y)
                sandwich = max(sandwich,
                               float(np.max(lo_v - snap.values)),
                               float(np.max(snap.values - hi_v)))
        rows.append(LimitReportRow(
            eps=eps, n=bank_eps.n, l1_error=l1_err, mass_gap=gap,
            control_mass=result.control_mass, effort=np.array(efforts),
            times=result.snapshot_times, sandwich_violation=sandwich))
    return rows


def line_control_mass(model: ReactionModel, n: int, c: float, eps: float,
                      dx: float, T: float = 0.5,
                      dt_factor: float = 0.3) -> float:
    """One-dimensional reduction: drive a straight front at speed c with
    the upper-profile control and return the maximal control mass per unit
    boundary length over the run (compare with E(c))."""
    bank = build_profile_bank(model, n, (c, c))
    up = bank.uppers[0]
    L = 24.0 * math.sqrt(eps)
    nx = int(round(2 * L / dx))
    x = np.linspace(-L, L, nx + 1)
    lf = max(abs(float(model.df(u))) for u in np.linspace(0, 1, 101))
    dt = dt_factor * eps / lf
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps

    def v_at(t):
        # front at x_f(t) = -c t; y measured inward (to the left)
        y = (-c * t - x + math.sqrt(eps))
        return np.interp(y / eps, up.y, up.U, left=1.0 / n, right=1.0)

    u = v_at(0.0)
    masses = []
    for k in range(n_steps):
        t = k * dt
        v0, vp, vm = v_at(t), v_at(t + dt), v_at(max(t - dt, 0.0))
        vt = (vp - vm) / (dt + min(t, dt))
        lap = _laplacian4(v0, dx)
        resid = _binomial_smooth(eps * lap + np.asarray(model.f(v0)) / eps - vt)
        alpha = np.maximum(resid, 0.0) / np.maximum(v0, 1e-12)
        masses.append(float(np.trapezoid(alpha, x)))
        u = u + dt * (np.asarray(model.f(u)) / eps - u * alpha)
        u[0], u[-1] = u[1], u[-2]
        u = _diffuse(u, eps * dt / dx**2, "neumann")
    return float(np.max(masses))
