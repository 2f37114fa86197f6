"""Exception types shared across the package."""


class FrontCtrlError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(FrontCtrlError):
    """A constructor or operation argument is outside its admissible range."""


class WrongKindError(FrontCtrlError):
    """Operation applied to a reaction model of the wrong kind."""


class NoControlNeededError(FrontCtrlError):
    """Requested speed is at or below the critical speed; the uncontrolled
    heteroclinic profile already travels at least this fast."""


class OptimalityConditionError(FrontCtrlError):
    """The curvature condition backing the closed-form minimum-effort control
    fails; optimality of the constructed profile is not guaranteed."""


class NoRealEigenvectorError(FrontCtrlError):
    """Equilibrium has no real eigendirection for the requested speed."""


class BlowUpError(FrontCtrlError):
    """Phase-plane integration exceeded its a-priori bound before reaching a
    stop condition."""


class BracketFailureError(FrontCtrlError):
    """Critical-speed bisection found no sign change over the search range."""


class UnreachableTargetError(FrontCtrlError):
    """No admissible edge sequence connects source and target on the grid."""


class RegionConstructionError(FrontCtrlError):
    """Enclosed-region decomposition failed (too many path crossings)."""


class CFLViolationError(FrontCtrlError):
    """Explicit time step exceeds the diffusion stability limit."""


class FrontHitBoundaryError(FrontCtrlError):
    """The tracked front came within the guard distance of the domain edge."""


class LayerResolutionError(FrontCtrlError):
    """Grid spacing too coarse to resolve the transition layer."""


class DegenerateParameterizationError(FrontCtrlError):
    """Boundary parameterization has a (numerically) vanishing tangent."""


class AnnulusOverlapError(FrontCtrlError):
    """Requested tubular neighbourhood of the moving boundary is not
    injective (curvature radius too small)."""


class ProfileFitError(FrontCtrlError):
    """Rescaled transition profiles do not fit inside the annulus for the
    requested layer thickness."""


class ExtrapolationRefusedError(FrontCtrlError):
    """Requested a cost value beyond the sampled range of the effort curve."""


class BracketViolationError(FrontCtrlError):
    """Speed bracket too close to the critical speed; switching-curve
    intersections could not be located."""


class NotSettledWarning(UserWarning):
    """A run expected to settle to a traveling state did not."""


class ConfigError(FrontCtrlError):
    """Configuration file is malformed; carries a line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
