"""Source terms, control couplings, and effort cost functions.

A reaction model bundles the source f with its first two derivatives and a
classification:

- monostable: f > 0 on (0,1), concave, with f(0) = f(1) = 0;
- bistable: f(0) = f(1) = 0, f'(0) < 0, f'(1) < 0, and a single interior
  zero u_star with f'(u_star) > 0.

Models carry analytic derivatives; user-supplied models are polynomials
given by coefficient lists (low order first).  All values are immutable
after construction and safe to share between workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize

from frontctrl.errors import InvalidParameterError, WrongKindError

ROOT_TOL = 1e-10
ROOT_SCAN_RESOLUTION = 1e-4
DEFAULT_CHECK_GRID = 10_000


class ModelKind(enum.Enum):
    MONOSTABLE = "monostable"
    BISTABLE = "bistable"


class ControlCoupling(enum.Enum):
    """How the control enters the equation: a plain sink, or a sink
    proportional to the local density."""

    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"

    def sink(self, u, alpha):
        """Removal rate g(u, alpha)."""
        if self is ControlCoupling.ADDITIVE:
            return alpha
        return alpha * np.asarray(u)


@dataclass(frozen=True)
class ReactionModel:
    """Source term with derivatives and classification.

    Attributes
    ----------
    f, df, d2f : callables accepting scalars or arrays on [0, 1]
    kind : ModelKind
    u_star : interior zero of f (bistable only)
    f_min : cached minimum of f over [0, 1]
    """

    f: Callable
    df: Callable
    d2f: Callable
    kind: ModelKind
    u_star: float | None = None
    f_min: float = field(default=0.0)
    name: str = "custom"

    def __post_init__(self):
        _validate(self)

    @property
    def is_bistable(self) -> bool:
        return self.kind is ModelKind.BISTABLE

    def require_bistable(self, what: str):
        if not self.is_bistable:
            raise WrongKindError(f"{what} requires a bistable model, got {self.kind.value}")

    def scan_roots(self, resolution: float = ROOT_SCAN_RESOLUTION) -> list[float]:
        """Brute-force zero scan of f on [0, 1]; endpoints included."""
        n = int(round(1.0 / resolution))
        u = np.linspace(0.0, 1.0, n + 1)
        v = np.asarray(self.f(u), dtype=float)
        roots = []
        if abs(v[0]) <= ROOT_TOL:
            roots.append(0.0)
        sign = np.sign(v)
        for i in range(1, n):
            if sign[i] == 0.0 and resolution < u[i] < 1.0 - resolution:
                roots.append(u[i])
            elif sign[i] * sign[i + 1] < 0 and u[i + 1] < 1.0:
                roots.append(optimize.brentq(self.f, u[i], u[i + 1], xtol=1e-14))
        if abs(v[-1]) <= ROOT_TOL:
            roots.append(1.0)
        return roots


def _f_minimum(f, n=2048):
    """Grid scan plus golden-section refinement of min f on [0, 1]."""
    u = np.linspace(0.0, 1.0, n + 1)
    v = np.asarray(f(u), dtype=float)
    i = int(np.argmin(v))
    if i == 0 or i == n:
        return float(v[i])
    xmin = optimize.golden(f, brack=(u[i - 1], u[i], u[i + 1]))
    return float(min(v[i], f(xmin)))


def _check_derivatives(f, df, d2f):
    """Spot-check analytic derivatives against centered differences."""
    h = 1e-5
    for u in (0.11, 0.33, 0.52, 0.71, 0.89):
        fd1 = (f(u + h) - f(u - h)) / (2 * h)
        fd2 = (f(u + h) - 2 * f(u) + f(u - h)) / h**2
        if abs(df(u) - fd1) > 1e-6 * (1 + abs(fd1)):
            raise InvalidParameterError(f"df inconsistent with f near u={u}")
        if abs(d2f(u) - fd2) > 1e-3 * (1 + abs(fd2)):
            raise InvalidParameterError(f"d2f inconsistent with f near u={u}")


def _validate(m: ReactionModel):
    if abs(m.f(0.0)) > ROOT_TOL or abs(m.f(1.0)) > ROOT_TOL:
        raise InvalidParameterError("f must vanish at 0 and 1")
    _check_derivatives(m.f, m.df, m.d2f)
    u = np.linspace(0.0, 1.0, 512)
    if m.kind is ModelKind.MONOSTABLE:
        interior = u[1:-1]
        if np.any(np.asarray(m.f(interior)) <= 0):
            raise InvalidParameterError("monostable f must be positive on (0,1)")
        if np.any(np.asarray(m.d2f(u)) >= 0):
            raise InvalidParameterError("monostable f must be strictly concave on [0,1]")
        if m.u_star is not None:
            raise InvalidParameterError("monostable models have no interior zero")
    else:
        us = m.u_star
        if us is None or not 0.0 < us < 1.0:
            raise InvalidParameterError("bistable model needs u_star in (0,1)")
        if abs(m.f(us)) > ROOT_TOL:
            raise InvalidParameterError("f(u_star) must vanish")
        if m.df(0.0) >= 0 or m.df(1.0) >= 0 or m.df(us) <= 0:
            raise InvalidParameterError("bistable slope signs violated at 0, 1, or u_star")
        interior = u[1:-1]
        v = np.asarray(m.f(interior))
        expected = np.where(interior < us, -1.0, 1.0)
        mask = np.abs(interior - us) > 1e-3
        if np.any(np.sign(v[mask]) != expected[mask]):
            raise InvalidParameterError("bistable f must change sign only at u_star")


def _from_polynomial(p: Polynomial, kind, u_star, name) -> ReactionModel:
    dp = p.deriv()
    d2p = p.deriv(2)
    return ReactionModel(
        f=p, df=dp, d2f=d2p, kind=kind, u_star=u_star,
        f_min=_f_minimum(p), name=name,
    )


def make_cubic(a: float) -> ReactionModel:
    """Bistable cubic u (1-u) (u-a) with interior zero at a.

    Raises InvalidParameterError unless 0 < a < 1.
    """
    if not 0.0 < a < 1.0:
        raise InvalidParameterError(f"cubic parameter must lie in (0,1), got {a}")
    p = Polynomial([0.0, -a, 1.0 + a, -1.0])
    return _from_polynomial(p, ModelKind.BISTABLE, float(a), f"cubic(a={a:g})")


def make_logistic() -> ReactionModel:
    """Monostable logistic source u (1-u)."""
    p = Polynomial([0.0, 1.0, -1.0])
    return _from_polynomial(p, ModelKind.MONOSTABLE, None, "logistic")


def make_polynomial(coeffs) -> ReactionModel:
    """Custom polynomial source from low-order-first coefficients.

    The polynomial must vanish at 0 and 1 and classify cleanly as
    monostable or bistable; anything else is rejected.
    """
    p = Polynomial(list(map(float, coeffs)))
    if abs(p(0.0)) > ROOT_TOL or abs(p(1.0)) > ROOT_TOL:
        raise InvalidParameterError("polynomial must vanish at 0 and 1")
    u = np.linspace(0.0, 1.0, 4097)[1:-1]
    v = p(u)
    sign_changes = np.nonzero(np.diff(np.sign(v)) != 0)[0]
    if len(sign_changes) == 0:
        if np.all(v > 0) and np.all(p.deriv(2)(np.linspace(0, 1, 512)) < 0):
            return _from_polynomial(p, ModelKind.MONOSTABLE, None, "poly")
        raise InvalidParameterError("sign pattern matches neither model kind")
    if len(sign_changes) == 1:
        i = sign_changes[0]
        u_star = float(optimize.brentq(p, u[i], u[i + 1], xtol=1e-14))
        return _from_polynomial(p, ModelKind.BISTABLE, u_star, "poly")
    raise InvalidParameterError("more than one interior sign change")


@dataclass(frozen=True)
class OptimalityReport:
    """Outcome of the curvature condition behind the closed-form
    minimum-effort control.

    holds            -- the pointwise curvature inequality is satisfied
    worst_margin     -- maximum of its left-hand side over [u_star, 1]
                        (non-positive when the condition holds)
    ratio_monotone   -- the switching ratio is strictly increasing
    weighted_inequality_holds -- the derived quadratic-form inequality holds
    """

    holds: bool
    worst_margin: float
    ratio_monotone: bool
    weighted_inequality_holds: bool

    # kept for callers that prefer the raw report as a mapping
    def as_dict(self):
        return {
            "holds": self.holds,
            "worst_margin": self.worst_margin,
            "ratio_monotone": self.ratio_monotone,
            "weighted_inequality_holds": self.weighted_inequality_holds,
        }


def switching_ratio(model: ReactionModel, u):
    """-(3 f + u f') / (2 sqrt(u f)) on (u_star, 1).

    Strictly increasing from -inf to +inf when the optimality condition
    holds; its unique zero bounds the support of the optimal control.
    """
    u = np.asarray(u, dtype=float)
    prod = u * model.f(u)
    return -(3.0 * model.f(u) + u * model.df(u)) / (2.0 * np.sqrt(prod))


def check_optimality_condition(model: ReactionModel, grid_n: int = DEFAULT_CHECK_GRID) -> OptimalityReport:
    """Verify the curvature condition that guarantees a single switching
    interval for the minimum-effort control of a bistable model.

    Checks, on a grid over [u_star, 1]:
    (i)  (4 - 2 sqrt 3) f'(u) + 2 u f''(u) <= 0,
    (ii) -3 f^2 - u^2 f'^2 + 4 u f f' + 2 u^2 f f'' <= 0,
    (iii) strict monotonicity of the switching ratio on (u_star, 1).
    """
    model.require_bistable("check_optimality_condition")
    us = model.u_star
    u = np.linspace(us, 1.0, grid_n + 1)
    lhs = (4.0 - 2.0 * math.sqrt(3.0)) * np.asarray(model.df(u)) + 2.0 * u * np.asarray(model.d2f(u))
    worst = float(np.max(lhs))
    holds = worst <= 1e-12

    f = np.asarray(model.f(u))
    fp = np.asarray(model.df(u))
    fpp = np.asarray(model.d2f(u))
    quad = -3.0 * f**2 - u**2 * fp**2 + 4.0 * u * f * fp + 2.0 * u**2 * f * fpp
    weighted_ok = bool(np.max(quad) <= 1e-12)

    ui = np.linspace(us, 1.0, grid_n + 1)[1:-1]
    ratio = switching_ratio(model, ui)
    monotone = bool(np.all(np.diff(ratio) > 0))

    return OptimalityReport(
        holds=holds,
        worst_margin=worst,
        ratio_monotone=monotone,
        weighted_inequality_holds=weighted_ok,
    )


@dataclass(frozen=True)
class EffortCostFunction:
    """Running cost phi applied to the instantaneous effort, plus area
    penalties kappa1 (running) and kappa2 (terminal)."""

    phi: Callable
    kappa1: float = 0.0
    kappa2: float = 0.0

    def __post_init__(self):
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise InvalidParameterError("area penalties must be nonnegative")
        if abs(self.phi(0.0)) > 1e-12:
            raise InvalidParameterError("phi(0) must vanish")
        s = np.linspace(0.0, 10.0, 201)
        v = np.asarray([self.phi(x) for x in s])
        if np.any(np.diff(v) < -1e-12):
            raise InvalidParameterError("phi must be nondecreasing")
        if np.any(np.diff(v, 2) < -1e-9):
            raise InvalidParameterError("phi must be convex")

    @staticmethod
    def identity(kappa1: float = 0.0, kappa2: float = 0.0) -> "EffortCostFunction":
        return EffortCostFunction(phi=lambda s: s, kappa1=kappa1, kappa2=kappa2)

    @staticmethod
    def zero(kappa1: float = 0.0, kappa2: float = 0.0) -> "EffortCostFunction":
        return EffortCostFunction(phi=lambda s: 0.0, kappa1=kappa1, kappa2=kappa2)
