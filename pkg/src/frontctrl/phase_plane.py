"""Phase-plane integration for traveling-wave profiles.

The traveling-wave equation U'' + c U' + f(U) = 0 becomes the first-order
system U' = P, P' = -c P - f(U) in the (U, P) half-plane P >= 0.  This
module integrates saddle manifolds of the equilibria (0,0) and (1,0),
represents monotone phase paths with explicit vertical-jump segments, and
locates the critical speed c* at which the uncontrolled heteroclinic
connection exists.

Integration is carried out in the x parameterization (regular where the
U-parameterized slope -c - f/P is stiff near P = 0); sampled output is
dense enough that linear interpolation stays within ``path_tol``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from frontctrl.errors import (
    BlowUpError,
    BracketFailureError,
    FrontCtrlError,
    NoRealEigenvectorError,
)
from frontctrl.reaction_models import ModelKind, ReactionModel

LAUNCH_OFFSET = 1e-6
PATH_TOL = 1e-6
RTOL = 1e-9
ATOL = 1e-12
CSTAR_TOL = 1e-8
CSTAR_RANGE = (-20.0, 20.0)


@dataclass(frozen=True)
class PhasePoint:
    U: float
    P: float


class SegmentKind(enum.Enum):
    TRAJECTORY = "trajectory"
    VERTICAL_JUMP = "vertical_jump"


@dataclass(frozen=True)
class PathSegment:
    """One monotone-in-U piece of a phase path.

    Trajectory segments carry their x parameterization (x increases with U);
    vertical jumps have constant U, increasing P, and no x extent.
    """

    kind: SegmentKind
    samples: np.ndarray          # (n, 2) array of (U, P), U nondecreasing
    x: np.ndarray | None = None  # (n,) for trajectory segments

    @property
    def first(self) -> PhasePoint:
        return PhasePoint(*self.samples[0])

    @property
    def last(self) -> PhasePoint:
        return PhasePoint(*self.samples[-1])


def jump_segment(U: float, P_lo: float, P_hi: float) -> PathSegment:
    if P_hi <= P_lo:
        raise FrontCtrlError("vertical jumps must increase P")
    samples = np.array([[U, P_lo], [U, P_hi]])
    return PathSegment(SegmentKind.VERTICAL_JUMP, samples)


@dataclass
class PhasePath:
    """Concatenation of trajectory and vertical-jump segments at speed c.

    ``stop_reason`` records how the last integration ended: "stop" for the
    requested stop condition, "equilibrium" when the trajectory was absorbed
    into an equilibrium before reaching it, "arclen" for a span cap.
    """

    segments: list[PathSegment]
    c: float
    stop_reason: str = "stop"

    @property
    def first(self) -> PhasePoint:
        return self.segments[0].first

    @property
    def last(self) -> PhasePoint:
        return self.segments[-1].last

    def points(self) -> np.ndarray:
        """All samples concatenated, shape (n, 2)."""
        return np.concatenate([s.samples for s in self.segments])

    def is_heteroclinic(self, tol: float = 1e-5) -> bool:
        p0, p1 = self.first, self.last
        return (
            abs(p0.U) < tol and abs(p0.P) < tol
            and abs(p1.U - 1.0) < tol and abs(p1.P) < tol
        )

    def check_monotone(self, tol: float = 1e-12):
        pts = self.points()
        if np.any(np.diff(pts[:, 0]) < -tol):
            raise FrontCtrlError("path is not monotone in U")
        for seg in self.segments:
            if seg.kind is SegmentKind.VERTICAL_JUMP:
                if np.ptp(seg.samples[:, 0]) > tol:
                    raise FrontCtrlError("jump segment must have constant U")
                if np.any(np.diff(seg.samples[:, 1]) <= 0):
                    raise FrontCtrlError("jump segment must increase P")

    def ode_residual(self, model: ReactionModel) -> float:
        """Max |P' + cP + f(U)| over trajectory samples (midpoint FD)."""
        worst = 0.0
        for seg in self.segments:
            if seg.kind is not SegmentKind.TRAJECTORY or seg.x is None:
                continue
            U, P = seg.samples[:, 0], seg.samples[:, 1]
            dx = np.diff(seg.x)
            good = dx > 1e-14
            dP = np.diff(P)[good]
            Um = 0.5 * (U[1:] + U[:-1])[good]
            Pm = 0.5 * (P[1:] + P[:-1])[good]
            res = dP / dx[good] + self.c * Pm + model.f(Um)
            if res.size:
                worst = max(worst, float(np.max(np.abs(res))))
        return worst


@dataclass(frozen=True)
class Eigenstructure:
    """Roots of lambda^2 + c lambda + f'(U) = 0 with eigenvectors (1, lambda)."""

    lambda_plus: float
    lambda_minus: float
    eigvec_plus: np.ndarray
    eigvec_minus: np.ndarray
    complex_pair: bool

    @property
    def is_saddle(self) -> bool:
        return (not self.complex_pair) and self.lambda_minus < 0.0 < self.lambda_plus


def eigen_at(model: ReactionModel, c: float, U: float) -> Eigenstructure:
    """Linearization eigenstructure of the traveling-wave system at (U, 0)."""
    fp = float(model.df(U))
    disc = c * c - 4.0 * fp
    if disc < 0.0:
        re = -c / 2.0
        return Eigenstructure(re, re, np.array([1.0, re]), np.array([1.0, re]), True)
    root = math.sqrt(disc)
    lam_p = (-c + root) / 2.0
    lam_m = (-c - root) / 2.0
    return Eigenstructure(
        lam_p, lam_m,
        np.array([1.0, lam_p]), np.array([1.0, lam_m]),
        False,
    )


class Equilibrium(enum.Enum):
    ORIGIN = "origin"
    ONE = "one"


@dataclass(frozen=True)
class StopCondition:
    """Stop condition for manifold integration.

    Exactly one of the fields is set.  ``curve`` receives U and returns the
    target P value (clipped to zero where undefined).
    """

    P_zero: bool = False
    U_target: float | None = None
    curve: Callable | None = None
    arclen: float | None = None

    @staticmethod
    def at_P0() -> "StopCondition":
        return StopCondition(P_zero=True)

    @staticmethod
    def at_U(target: float) -> "StopCondition":
        return StopCondition(U_target=float(target))

    @staticmethod
    def at_curve(fn: Callable) -> "StopCondition":
        return StopCondition(curve=fn)

    @staticmethod
    def at_arclen(s: float) -> "StopCondition":
        return StopCondition(arclen=float(s))


def _blowup_bound(model: ReactionModel, c: float) -> float:
    base = 1.0 + abs(model.f_min) / max(abs(c), 1e-3)
    # unstable-manifold excursions scale with the positive eigenvalue; the
    # base formula is a stable-manifold bound and undershoots for c << 0
    lf = max(abs(float(model.df(0.0))), abs(float(model.df(1.0))), 1.0)
    eig = abs(c) + math.sqrt(c * c + 4.0 * lf)
    return max(base, eig + 1.0)


def _densify(sol, t0, t1, path_tol, forward_sign):
    """Sample a dense solution so linear interpolation is within path_tol."""
    ts = [t0, t1]
    stack = [(t0, t1)]
    depth = 0
    while stack and depth < 60:
        nxt = []
        for a, b in stack:
            m = 0.5 * (a + b)
            ya, yb, ym = sol(a), sol(b), sol(m)
            err = np.max(np.abs(0.5 * (ya + yb) - ym))
            if err > path_tol and abs(b - a) > 1e-12:
                ts.append(m)
                nxt.extend([(a, m), (m, b)])
        stack = nxt
        depth += 1
    ts = np.array(sorted(set(ts)))
    y = sol(ts)
    return ts * forward_sign, y.T  # x values, (n, 2) states


EQUILIBRIUM_TOL = 1e-8


def integrate_manifold(
    model: ReactionModel,
    c: float,
    equilibrium: Equilibrium | str,
    until: StopCondition,
    launch_offset: float = LAUNCH_OFFSET,
    path_tol: float = PATH_TOL,
    max_span: float | None = None,
    rtol: float = RTOL,
    atol: float = ATOL,
    equilibrium_tol: float = EQUILIBRIUM_TOL,
) -> PhasePath:
    """Integrate the relevant saddle manifold up to a stop condition.

    The unstable manifold of the origin is followed forward in x; the stable
    manifold of (1, 0) is entered backward in x.  Returned samples are in
    increasing-U order with their x parameterization (x = 0 at the launch
    point; callers re-anchor as needed).

    Trajectories may instead be absorbed into an equilibrium before the stop
    condition fires (e.g. the origin manifold spiralling into the interior
    zero of a bistable f at large speeds); this is reported through
    ``stop_reason == "equilibrium"`` rather than as an error.
    """
    if isinstance(equilibrium, str):
        equilibrium = Equilibrium(equilibrium)

    if equilibrium is Equilibrium.ORIGIN:
        eig = eigen_at(model, c, 0.0)
        if eig.complex_pair or eig.lambda_plus <= 0:
            raise NoRealEigenvectorError(
                f"origin has no real unstable direction at c={c:g}")
        v = eig.eigvec_plus / np.hypot(*eig.eigvec_plus)
        y0 = launch_offset * v
        backward = False
    else:
        eig = eigen_at(model, c, 1.0)
        if eig.complex_pair or eig.lambda_minus >= 0:
            raise NoRealEigenvectorError(
                f"(1,0) has no real stable direction at c={c:g}")
        v = eig.eigvec_minus / np.hypot(*eig.eigvec_minus)
        y0 = np.array([1.0, 0.0]) - launch_offset * v
        backward = True

    sgn = -1.0 if backward else 1.0
    bound = _blowup_bound(model, c)

    def rhs(t, y):
        return sgn * np.array([y[1], -c * y[1] - model.f(y[0])])

    events = []

    def ev_blow(t, y):
        return abs(y[1]) - bound
    ev_blow.terminal = True
    events.append(ev_blow)

    # absorption guards: the launch equilibrium is excluded (we start a
    # launch_offset away and move off), the other two can capture the orbit
    eq_points = []
    if equilibrium is Equilibrium.ORIGIN:
        eq_points.append((1.0, 0.0))
    else:
        eq_points.append((0.0, 0.0))
    if model.u_star is not None:
        eq_points.append((model.u_star, 0.0))

    eq_indices = []
    for (ue, pe) in eq_points:
        def ev_eq(t, y, ue=ue, pe=pe):
            return math.hypot(y[0] - ue, y[1] - pe) - equilibrium_tol
        ev_eq.terminal = True
        events.append(ev_eq)
        eq_indices.append(len(events) - 1)

    stop_index = None
    if until.P_zero:
        def ev(t, y):
            return y[1]
        ev.terminal = True
        events.append(ev)
        stop_index = len(events) - 1
    elif until.U_target is not None:
        tgt = until.U_target

        def ev(t, y):
            return y[0] - tgt
        ev.terminal = True
        events.append(ev)
        stop_index = len(events) - 1
    elif until.curve is not None:
        fn = until.curve

        def ev(t, y):
            return y[1] - fn(y[0])
        ev.terminal = True
        events.append(ev)
        stop_index = len(events) - 1

    if max_span is None:
        # slow crawls past quasi-equilibria stretch the x span roughly
        # quadratically in the speed
        max_span = max(2000.0, 100.0 * (1.0 + c * c))
    t_end = until.arclen if until.arclen is not None else max_span
    sol = integrate.solve_ivp(
        rhs, (0.0, t_end), y0, method="RK45",
        rtol=rtol, atol=atol, dense_output=True, events=events,
    )
    if not sol.success:
        raise FrontCtrlError(f"manifold integration failed: {sol.message}")
    if sol.t_events[0].size:
        raise BlowUpError(
            f"|P| exceeded {bound:g} before the stop condition at c={c:g}")

    reason = "stop"
    if stop_index is not None and sol.t_events[stop_index].size:
        t1 = sol.t_events[stop_index][0]
    else:
        eq_hits = [sol.t_events[i][0] for i in eq_indices if sol.t_events[i].size]
        if eq_hits:
            t1 = min(eq_hits)
            reason = "equilibrium"
        elif until.arclen is not None:
            t1 = sol.t[-1]
            reason = "arclen"
        else:
            raise FrontCtrlError(
                f"stop condition not reached within span {t_end:g} at c={c:g}")

    xs, states = _densify(sol.sol, 0.0, t1, path_tol, sgn)
    if backward:
        xs, states = xs[::-1], states[::-1]
    seg = PathSegment(SegmentKind.TRAJECTORY, states, xs)
    return PhasePath([seg], c, stop_reason=reason)


def _manifold_P_at(model, c, equilibrium, U_stop, rtol=RTOL):
    """P where the manifold first reaches U_stop; 0 if absorbed before.

    Terminal value only (no dense sampling), for speed-critical bisection.
    """
    if equilibrium is Equilibrium.ORIGIN:
        eig = eigen_at(model, c, 0.0)
        v = eig.eigvec_plus / np.hypot(*eig.eigvec_plus)
        y0 = LAUNCH_OFFSET * v
        sgn = 1.0
        others = [(1.0, 0.0)]
    else:
        eig = eigen_at(model, c, 1.0)
        v = eig.eigvec_minus / np.hypot(*eig.eigvec_minus)
        y0 = np.array([1.0, 0.0]) - LAUNCH_OFFSET * v
        sgn = -1.0
        others = [(0.0, 0.0)]
    if model.u_star is not None:
        others.append((model.u_star, 0.0))

    def rhs(t, y):
        return sgn * np.array([y[1], -c * y[1] - model.f(y[0])])

    def ev_stop(t, y):
        return y[0] - U_stop
    ev_stop.terminal = True

    events = [ev_stop]
    for (ue, pe) in others:
        def ev_eq(t, y, ue=ue, pe=pe):
            return math.hypot(y[0] - ue, y[1] - pe) - EQUILIBRIUM_TOL
        ev_eq.terminal = True
        events.append(ev_eq)

    span = max(2000.0, 100.0 * (1.0 + c * c))
    sol = integrate.solve_ivp(rhs, (0.0, span), y0, method="RK45",
                              rtol=rtol, atol=1e-12, events=events)
    if sol.t_events[0].size:
        return float(sol.y_events[0][0][1])
    return 0.0


def find_cstar(model: ReactionModel, tol: float = CSTAR_TOL) -> float:
    """Critical speed of the uncontrolled traveling profile.

    Bistable: the unique speed at which the unstable manifold of the origin
    meets the stable manifold of (1,0), located by bisection on the vertical
    gap at u_star.  Monostable: the linearization threshold -2 sqrt(f'(0))
    (smallest |c| with a real departing direction at the origin); profiles
    exist for every c at or below it.
    """
    if model.kind is ModelKind.MONOSTABLE:
        return -2.0 * math.sqrt(float(model.df(0.0)))

    us = model.u_star

    def gap(c, rtol):
        a = _manifold_P_at(model, c, Equilibrium.ORIGIN, us, rtol)
        b = _manifold_P_at(model, c, Equilibrium.ONE, us, rtol)
        return a - b

    # gap is positive below c*, negative above; expand a bracket outward
    # from 0 before refining (extreme speeds crawl and cost real time)
    lo, hi = CSTAR_RANGE
    coarse = 1e-6
    g0 = gap(0.0, coarse)
    if g0 == 0.0:
        return 0.0
    bracket = None
    step, prev_c, prev_g = 0.5, 0.0, g0
    direction = 1.0 if g0 > 0 else -1.0
    c = direction * step
    while lo <= c <= hi:
        g = gap(c, coarse)
        if g == 0.0:
            return float(c)
        if g * prev_g < 0:
            bracket = (min(prev_c, c), max(prev_c, c))
            break
        prev_c, prev_g = c, g
        step *= 2.0
        c = prev_c + direction * step
        c = min(max(c, lo), hi)
        if c == prev_c:
            break
    if bracket is None:
        raise BracketFailureError(
            f"no sign change of the manifold gap for c in [{lo:g}, {hi:g}]")
    # coarse pass locates c* cheaply; a tight-tolerance pass polishes it
    c0 = float(optimize.brentq(lambda c: gap(c, coarse), *bracket, xtol=100 * tol))
    lo2, hi2 = c0 - 500 * tol, c0 + 500 * tol
    glo, ghi = gap(lo2, RTOL), gap(hi2, RTOL)
    if glo * ghi > 0:
        return c0
    return float(optimize.brentq(lambda c: gap(c, RTOL), lo2, hi2, xtol=tol))


def wave_speed_sign(model: ReactionModel, tol: float = 1e-9) -> int:
    """Sign of the bistable critical speed: -sign of the integral of f."""
    model.require_bistable("wave_speed_sign")
    total, _ = integrate.quad(model.f, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10)
    if abs(total) <= tol:
        return 0
    return -1 if total > 0 else 1


def switching_curve(model: ReactionModel) -> Callable:
    """P*(U) = sqrt(U f(U)) clipped to zero where U f(U) < 0."""
    def fn(U):
        val = U * model.f(U)
        return math.sqrt(val) if val > 0.0 else 0.0
    return fn
