"""Closed-form optimal controlled traveling profiles and the effort curve.

Two optimization problems over positive measure-valued controls mu in
U'' + c U' + f(U) = mu are solved in closed form via phase-plane paths:

- minimum total mass (an atom at the single point where f vanishes along
  the profile), for monostable and bistable sources;
- minimum density-weighted mass, i.e. the L1 norm of the multiplicative
  control alpha with sink alpha*u, for bistable sources satisfying the
  curvature condition of ``check_optimality_condition``.

The weighted problem's optimal control is absolutely continuous and
supported where the path rides the switching curve P*(U) = sqrt(U f(U)).
For speeds beyond the node threshold 2 sqrt(f'(u_star)) the unstable
manifold of the origin is absorbed into (u_star, 0) rather than crossing
the switching curve; the support then starts exactly at u_star and the
effort integrand has an integrable (u - u_star)^(-1/2) endpoint
singularity, removed by the substitution u = u_star + s^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, optimize

from frontctrl.errors import (
    ExtrapolationRefusedError,
    FrontCtrlError,
    InvalidParameterError,
    NoControlNeededError,
    OptimalityConditionError,
)
from frontctrl.phase_plane import (
    Equilibrium,
    PATH_TOL,
    PhasePath,
    PathSegment,
    SegmentKind,
    StopCondition,
    eigen_at,
    find_cstar,
    integrate_manifold,
    jump_segment,
    switching_curve,
)
from frontctrl.reaction_models import (
    ModelKind,
    ReactionModel,
    check_optimality_condition,
)

QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-11, limit=200)
ARC_SAMPLES = 801
TAIL_SPAN = 10.0


@dataclass(frozen=True)
class ControlAtom:
    x: float
    mass: float


@dataclass
class ControlMeasure:
    """Atoms plus a sampled density of the control measure in x.

    ``density`` is the measure's density mu(x); under the multiplicative
    coupling the applied control field is alpha(x) = mu(x)/u(x).
    total_J0 = sum of masses + integral of the density;
    total_J1 = sum of mass/u(atom) + integral of density/u.
    """

    atoms: list[ControlAtom]
    x: np.ndarray
    density: np.ndarray
    total_J0: float
    total_J1: float

    def __post_init__(self):
        if any(a.mass <= 0 for a in self.atoms):
            raise InvalidParameterError("atom masses must be positive")
        if np.any(self.density < -1e-12):
            raise InvalidParameterError("control density must be nonnegative")


@dataclass
class TravelingProfile:
    """Controlled traveling profile: speed, sampled U and P = U', the
    attached control measure, and the generating phase path."""

    c: float
    x_grid: np.ndarray
    U: np.ndarray
    P: np.ndarray
    control: ControlMeasure
    phase_path: PhasePath
    model: ReactionModel

    def alpha_density(self) -> np.ndarray:
        """Multiplicative control field alpha(x) = mu(x)/U(x) on x_grid."""
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(self.U > 1e-12, self.control.density / np.maximum(self.U, 1e-12), 0.0)
        return out


def zstar(model: ReactionModel, c: float, u):
    """Slope surplus needed to ride the switching curve: the optimal
    control density in the U coordinate on its support."""
    u = np.asarray(u, dtype=float)
    prod = np.maximum(u * model.f(u), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (3.0 * model.f(u) + u * model.df(u)) / (2.0 * np.sqrt(prod)) + c
    return val


def _quad_split(fn, u_lo, u_hi, u_star):
    """Integrate fn(u) du over [u_lo, u_hi] with sqrt desingularization at
    both the u_star end (u = u_star + s^2) and the u = 1 end (u = 1 - r^2)."""
    if u_hi <= u_lo:
        return 0.0
    mid = 0.5 * (u_lo + u_hi)

    def lower(s):
        u = u_star + s * s
        return fn(u) * 2.0 * s

    def upper(r):
        u = 1.0 - r * r
        return fn(u) * 2.0 * r

    s_lo = math.sqrt(max(u_lo - u_star, 0.0))
    s_mid = math.sqrt(mid - u_star)
    r_mid = math.sqrt(1.0 - mid)
    r_hi = math.sqrt(max(1.0 - u_hi, 0.0))
    v1, _ = integrate.quad(lower, s_lo, s_mid, **QUAD_OPTS)
    v2, _ = integrate.quad(upper, r_hi, r_mid, **QUAD_OPTS)
    return v1 + v2


def effort_value(model: ReactionModel, c: float, u_minus: float, u_plus: float) -> float:
    """Weighted cost of the switching-curve arc: integral of z*(u)/u du."""
    return _quad_split(lambda u: float(zstar(model, c, u)) / u, u_minus, u_plus, model.u_star)


def arc_mass(model: ReactionModel, c: float, u_minus: float, u_plus: float) -> float:
    """Unweighted mass of the arc control: integral of z*(u) du."""
    return _quad_split(lambda u: float(zstar(model, c, u)), u_minus, u_plus, model.u_star)


@dataclass(frozen=True)
class SwitchingData:
    u_minus: float
    u_plus: float
    left: PhasePath | None    # origin manifold up to the switching curve (or absorption)
    right: PhasePath | None   # stable manifold of (1,0), backward to the switching curve
    absorbed: bool            # left manifold absorbed into (u_star, 0)


def _meet_curve_fast(model: ReactionModel, c: float, equilibrium: Equilibrium):
    """Terminal-only meeting point of a manifold with the switching curve.

    Returns (u_meet, absorbed).  Uses a stiff-capable integrator for large
    speeds, where the origin manifold crawls along P ~ |f|/c for a long
    stretch of x before crossing or absorption.
    """
    us = model.u_star
    curve = switching_curve(model)
    if equilibrium is Equilibrium.ORIGIN:
        eig = eigen_at(model, c, 0.0)
        v = eig.eigvec_plus / np.hypot(*eig.eigvec_plus)
        y0 = 1e-6 * v
        sgn = 1.0
    else:
        eig = eigen_at(model, c, 1.0)
        v = eig.eigvec_minus / np.hypot(*eig.eigvec_minus)
        y0 = np.array([1.0, 0.0]) - 1e-6 * v
        sgn = -1.0

    def rhs(t, y):
        return sgn * np.array([y[1], -c * y[1] - model.f(y[0])])

    def jac(t, y):
        return sgn * np.array([[0.0, 1.0], [-model.df(y[0]), -c]])

    def ev_curve(t, y):
        return y[1] - curve(y[0])
    ev_curve.terminal = True

    def ev_eq(t, y):
        return math.hypot(y[0] - us, y[1]) - 1e-9
    ev_eq.terminal = True

    span = max(2000.0, 100.0 * (1.0 + c * c))
    method = "LSODA" if abs(c) > 3.0 else "RK45"
    kwargs = dict(rtol=1e-10, atol=1e-13, events=[ev_curve, ev_eq])
    if method == "LSODA":
        kwargs["jac"] = jac
    sol = integrate.solve_ivp(rhs, (0.0, span), y0, method=method, **kwargs)
    if sol.t_events[0].size:
        return float(sol.y_events[0][0][0]), False
    if sol.t_events[1].size:
        return us, True
    raise FrontCtrlError(
        f"manifold did not meet the switching curve at c={c:g}")


def switching_interval(model: ReactionModel, c: float, c_star: float | None = None,
                       with_paths: bool = True) -> SwitchingData:
    """Locate the support [u_minus, u_plus] of the weighted-optimal control.

    u_minus is the first meeting of the origin's unstable manifold with the
    switching curve; for speeds in the absorbed regime this degenerates to
    u_star itself.  u_plus is the meeting of the backward stable manifold
    of (1,0) with the curve.  ``with_paths=False`` skips dense sampling of
    the manifolds (enough for cost evaluation, much faster at high speed).
    """
    model.require_bistable("switching_interval")
    if c_star is None:
        c_star = find_cstar(model)
    if c <= c_star:
        raise NoControlNeededError(
            f"c={c:g} <= c*={c_star:g}: the uncontrolled profile suffices")

    if not with_paths:
        u_minus, absorbed = _meet_curve_fast(model, c, Equilibrium.ORIGIN)
        u_plus, _ = _meet_curve_fast(model, c, Equilibrium.ONE)
        if not u_minus <= u_plus <= 1.0:
            raise FrontCtrlError(
                f"switching interval [{u_minus:g}, {u_plus:g}] is malformed at c={c:g}")
        return SwitchingData(u_minus, u_plus, None, None, absorbed)

    curve = switching_curve(model)
    left = integrate_manifold(model, c, Equilibrium.ORIGIN, StopCondition.at_curve(curve))
    if left.stop_reason == "equilibrium":
        u_minus = model.u_star
        absorbed = True
    elif left.stop_reason == "stop":
        u_minus = float(left.segments[0].samples[-1, 0])
        absorbed = False
    else:
        raise FrontCtrlError("origin manifold ended without meeting the switching curve")
    right = integrate_manifold(model, c, Equilibrium.ONE, StopCondition.at_curve(curve))
    if right.stop_reason != "stop":
        raise FrontCtrlError("backward manifold did not meet the switching curve")
    u_plus = float(right.segments[0].samples[0, 0])
    if not u_minus <= u_plus <= 1.0:
        raise FrontCtrlError(
            f"switching interval [{u_minus:g}, {u_plus:g}] is malformed at c={c:g}")
    return SwitchingData(u_minus, u_plus, left, right, absorbed)


def _anchor_x(seg: PathSegment, anchor_U: float) -> np.ndarray:
    """x samples of a trajectory segment shifted so x(anchor_U) = 0."""
    U, x = seg.samples[:, 0], seg.x
    x0 = float(np.interp(anchor_U, U, x))
    return x - x0


def _trim_crawl(samples: np.ndarray, x: np.ndarray, p_floor: float = 1e-5):
    """Drop the trailing quasi-equilibrium crawl of an absorbed manifold:
    keep samples until P first falls below p_floor past the P maximum."""
    P = samples[:, 1]
    imax = int(np.argmax(P))
    tail = np.nonzero(P[imax:] < p_floor)[0]
    if tail.size == 0:
        return samples, x
    end = imax + tail[0] + 1
    return samples[:end], x[:end]


def solve_min_mass(model: ReactionModel, c: float, c_star: float | None = None) -> TravelingProfile:
    """Profile driven at speed c by the smallest total control mass.

    The optimal measure is a single atom located where f vanishes along the
    profile: at the contact point with u = 0 (monostable) or at the
    crossing of u_star (bistable).  The atom mass equals the jump of U'.
    """
    if c_star is None:
        c_star = find_cstar(model)
    if c <= c_star:
        raise NoControlNeededError(
            f"c={c:g} <= c*={c_star:g}: the uncontrolled profile suffices")

    if model.kind is ModelKind.MONOSTABLE:
        right = integrate_manifold(model, c, Equilibrium.ONE, StopCondition.at_U(0.0))
        seg = right.segments[0]
        b = float(seg.samples[0, 1])
        x_right = seg.x - seg.x[0]
        n_tail = 64
        x_left = np.linspace(-TAIL_SPAN, 0.0, n_tail, endpoint=False)
        x_grid = np.concatenate([x_left, x_right])
        U = np.concatenate([np.zeros(n_tail), seg.samples[:, 0]])
        P = np.concatenate([np.zeros(n_tail), seg.samples[:, 1]])
        path = PhasePath([jump_segment(0.0, 0.0, b), seg], c)
        control = ControlMeasure(
            atoms=[ControlAtom(0.0, b)],
            x=x_grid, density=np.zeros_like(x_grid),
            total_J0=b, total_J1=math.inf,
        )
        return TravelingProfile(c, x_grid, U, P, control, path, model)

    us = model.u_star
    left = integrate_manifold(model, c, Equilibrium.ORIGIN, StopCondition.at_U(us))
    lseg = left.segments[0]
    if left.stop_reason == "equilibrium":
        a = float(lseg.samples[-1, 1])
        samples, xs = _trim_crawl(lseg.samples, lseg.x)
        x_left = xs - xs[-1]
        lseg = PathSegment(SegmentKind.TRAJECTORY, samples, x_left)
    else:
        a = float(lseg.samples[-1, 1])
        x_left = lseg.x - lseg.x[-1]
        lseg = PathSegment(SegmentKind.TRAJECTORY, lseg.samples, x_left)
    right = integrate_manifold(model, c, Equilibrium.ONE, StopCondition.at_U(us))
    rseg = right.segments[0]
    b = float(rseg.samples[0, 1])
    rseg = PathSegment(SegmentKind.TRAJECTORY, rseg.samples, rseg.x - rseg.x[0])
    if b <= a:
        raise FrontCtrlError(f"no upward jump at c={c:g}; expected b > a")

    x_grid = np.concatenate([lseg.x, rseg.x])
    U = np.concatenate([lseg.samples[:, 0], rseg.samples[:, 0]])
    P = np.concatenate([lseg.samples[:, 1], rseg.samples[:, 1]])
    path = PhasePath([lseg, jump_segment(us, a, b), rseg], c)
    control = ControlMeasure(
        atoms=[ControlAtom(0.0, b - a)],
        x=x_grid, density=np.zeros_like(x_grid),
        total_J0=b - a, total_J1=(b - a) / us,
    )
    return TravelingProfile(c, x_grid, U, P, control, path, model)


def _arc_segment(model: ReactionModel, c: float, u_lo: float, u_hi: float,
                 x_start: float, n: int = ARC_SAMPLES):
    """Sample the switching-curve arc between u_lo and u_hi.

    Returns (segment, x, density) where x is the physical parameterization
    (dx = du / P*(u), started at x_start) and density the control measure
    density mu(x) = z*(u) P*(u), which stays bounded at the u_star end.
    """
    us = model.u_star
    s_lo = math.sqrt(max(u_lo - us, 0.0))
    s_hi = math.sqrt(u_hi - us)
    s = np.linspace(s_lo, s_hi, n)
    u = us + s * s
    pstar = np.sqrt(np.maximum(u * model.f(u), 0.0))

    # dx/ds = 2 s / P*(u* + s^2) has a finite limit at s = 0
    dxds = np.empty_like(s)
    mask = pstar > 0
    dxds[mask] = 2.0 * s[mask] / pstar[mask]
    if not mask.all():
        kappa = float(model.df(us))
        dxds[~mask] = 2.0 / math.sqrt(us * kappa)
    x = x_start + integrate.cumulative_trapezoid(dxds, s, initial=0.0)

    # z* P* = (3f + u f')/2 + c P*: bounded and smooth on the whole arc
    dens = 0.5 * (3.0 * model.f(u) + u * model.df(u)) + c * pstar
    samples = np.column_stack([u, pstar])
    return PathSegment(SegmentKind.TRAJECTORY, samples, x), x, dens


def solve_min_effort(model: ReactionModel, c: float, c_star: float | None = None) -> TravelingProfile:
    """Profile driven at speed c by the smallest L1 multiplicative control.

    Requires a bistable model passing ``check_optimality_condition``.  The
    optimal control is absolutely continuous, supported on [u_minus,
    u_plus] where the phase path rides the switching curve; there its
    density in the U coordinate is ``zstar``.
    """
    report = check_optimality_condition(model)
    if not report.holds:
        raise OptimalityConditionError(
            "curvature condition fails (worst margin "
            f"{report.worst_margin:g}); closed form is not guaranteed optimal")
    sw = switching_interval(model, c, c_star)
    us = model.u_star

    lseg = sw.left.segments[0]
    if sw.absorbed:
        samples, xs = _trim_crawl(lseg.samples, lseg.x)
        lseg = PathSegment(SegmentKind.TRAJECTORY, samples, xs - xs[-1])
    else:
        lseg = PathSegment(SegmentKind.TRAJECTORY, lseg.samples, _anchor_x(lseg, us))

    arc_seg, x_arc, dens_arc = _arc_segment(model, c, sw.u_minus, sw.u_plus,
                                            x_start=float(lseg.x[-1]))

    rseg = sw.right.segments[0]
    rseg = PathSegment(SegmentKind.TRAJECTORY, rseg.samples,
                       rseg.x - rseg.x[0] + x_arc[-1])

    x_grid = np.concatenate([lseg.x, x_arc, rseg.x])
    U = np.concatenate([lseg.samples[:, 0], arc_seg.samples[:, 0], rseg.samples[:, 0]])
    P = np.concatenate([lseg.samples[:, 1], arc_seg.samples[:, 1], rseg.samples[:, 1]])
    density = np.concatenate([np.zeros(len(lseg.x)), dens_arc, np.zeros(len(rseg.x))])

    total_J1 = effort_value(model, c, sw.u_minus, sw.u_plus)
    total_J0 = arc_mass(model, c, sw.u_minus, sw.u_plus)
    control = ControlMeasure(atoms=[], x=x_grid, density=density,
                             total_J0=total_J0, total_J1=total_J1)
    path = PhasePath([lseg, arc_seg, rseg], c)
    return TravelingProfile(c, x_grid, U, P, control, path, model)


@dataclass
class ECurve:
    """Sampled minimum-effort curve E(c) with control-support endpoints."""

    c: np.ndarray
    E: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray
    c_star: float
    _interp: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        order = np.argsort(self.c)
        self.c = np.asarray(self.c, dtype=float)[order]
        self.E = np.asarray(self.E, dtype=float)[order]
        self.u_minus = np.asarray(self.u_minus, dtype=float)[order]
        self.u_plus = np.asarray(self.u_plus, dtype=float)[order]

    def __call__(self, c):
        """Monotone interpolation of E; zero below c_star, refuses
        extrapolation above the sampled range."""
        c = np.asarray(c, dtype=float)
        if np.any(c > self.c[-1] + 1e-12):
            raise ExtrapolationRefusedError(
                f"E(c) sampled up to c={self.c[-1]:g}, requested {float(np.max(c)):g}")
        if self._interp is None:
            cs = np.concatenate([[self.c_star], self.c[self.c > self.c_star]])
            Es = np.concatenate([[0.0], self.E[self.c > self.c_star]])
            cs, idx = np.unique(cs, return_index=True)
            self._interp = interpolate.PchipInterpolator(cs, Es[idx])
        out = np.where(c <= self.c_star, 0.0, self._interp(np.minimum(c, self.c[-1])))
        return float(out) if out.ndim == 0 else out


def compute_ecurve(model: ReactionModel, c_values) -> ECurve:
    """Evaluate the minimum-effort curve on the given speeds.

    E(c) = 0 for c <= c*; above, the closed-form arc cost via adaptive
    quadrature with endpoint desingularization.
    """
    report = check_optimality_condition(model)
    if not report.holds:
        raise OptimalityConditionError("curvature condition fails; no closed form")
    c_star = find_cstar(model)
    u_bar_val = None
    cs, Es,ums, ups = [], [], [], []
    for c in sorted(float(x) for x in c_values):
        if c <= c_star:
            if u_bar_val is None:
                u_bar_val = u_bar(model, c_star)
            cs.append(c); Es.append(0.0)
            ums.append(u_bar_val); ups.append(u_bar_val)
            continue
        sw = switching_interval(model, c, c_star, with_paths=False)
        cs.append(c)
        Es.append(effort_value(model, c, sw.u_minus, sw.u_plus))
        ums.append(sw.u_minus)
        ups.append(sw.u_plus)
    return ECurve(np.array(cs), np.array(Es), np.array(ums), np.array(ups), c_star)


def u_bar(model: ReactionModel, c_star: float | None = None) -> float:
    """Meeting point of the critical-speed heteroclinic with the switching
    curve; the common limit of u_minus(c) and u_plus(c) as c drops to c*."""
    model.require_bistable("u_bar")
    if c_star is None:
        c_star = find_cstar(model)
    path = integrate_manifold(model, c_star, Equilibrium.ORIGIN,
                              StopCondition.at_curve(switching_curve(model)))
    if path.stop_reason == "stop":
        return float(path.segments[0].samples[-1, 0])
    return float(model.u_star)


@dataclass(frozen=True)
class SlopeAtCstar:
    """Right-derivative of the effort curve at the critical speed, with the
    ingredients of the linearized-manifold formula."""

    slope: float
    u_bar: float
    y_minus: float
    y_plus: float

    def __float__(self):
        return self.slope


def ecurve_slope_at_cstar(model: ReactionModel, c_star: float | None = None,
                          delta: float = 1e-5) -> SlopeAtCstar:
    """dE/dc at c* from first-order perturbation of the manifolds.

    Integrates dY/dU = f(U)/Pbar(U)^2 * Y - 1 along the critical
    heteroclinic Pbar, forward from the origin (Y -> 0) and backward from
    U = 1 (Y -> 0), and returns (Y+ - Y-)/u_bar evaluated at the
    heteroclinic's meeting point with the switching curve.
    """
    model.require_bistable("ecurve_slope_at_cstar")
    if c_star is None:
        c_star = find_cstar(model)
    het = integrate_manifold(model, c_star, Equilibrium.ORIGIN,
                             StopCondition.at_U(1.0 - 1e-7))
    seg = het.segments[0]
    U, P = seg.samples[:, 0], seg.samples[:, 1]
    keep = np.concatenate([[True], np.diff(U) > 1e-14])
    pbar = interpolate.PchipInterpolator(U[keep], P[keep])

    ub = u_bar(model, c_star)

    def rhs(u, y):
        return model.f(u) / pbar(u) ** 2 * y - 1.0

    lam_p0 = eigen_at(model, c_star, 0.0).lambda_plus
    k0 = float(model.df(0.0)) / lam_p0**2
    y0 = delta / (k0 - 1.0)
    sol_m = integrate.solve_ivp(rhs, (delta, ub), [y0], rtol=1e-10, atol=1e-13)
    y_minus = float(sol_m.y[0, -1])

    lam_m1 = eigen_at(model, c_star, 1.0).lambda_minus
    m1 = -float(model.df(1.0)) / lam_m1**2
    y1 = delta / (1.0 + m1)
    sol_p = integrate.solve_ivp(rhs, (1.0 - delta, ub), [y1], rtol=1e-10, atol=1e-13)
    y_plus = float(sol_p.y[0, -1])

    return SlopeAtCstar((y_plus - y_minus) / ub, ub, y_minus, y_plus)


@dataclass
class P1CostCurve:
    """Minimum control mass versus speed for a monostable source, with the
    second differences used by the convexity diagnostic."""

    c: np.ndarray
    C_min: np.ndarray
    second_differences: np.ndarray


def p1_cost_curve(model: ReactionModel, c_values) -> P1CostCurve:
    """C_min(c) = P(0) of the backward stable manifold of (1, 0)."""
    if model.kind is not ModelKind.MONOSTABLE:
        raise InvalidParameterError("p1_cost_curve expects a monostable model")
    c_star = find_cstar(model)
    cs = np.array(sorted(float(x) for x in c_values))
    if cs[0] < c_star - 1e-12:
        raise InvalidParameterError(
            f"speeds below c*={c_star:g} need no control; got c={cs[0]:g}")
    vals = []
    for c in cs:
        path = integrate_manifold(model, c, Equilibrium.ONE, StopCondition.at_U(0.0))
        if path.stop_reason == "equilibrium":
            vals.append(0.0)
        else:
            vals.append(float(path.segments[0].samples[0, 1]))
    vals = np.array(vals)
    d2 = np.diff(vals, 2) if len(vals) >= 3 else np.array([])
    return P1CostCurve(cs, vals, d2)
