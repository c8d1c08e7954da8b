"""Exception and warning types shared across the toolkit."""


class DftomoError(Exception):
    """Base class for all toolkit errors."""


class NonFiniteError(DftomoError):
    """A field or symbol evaluation produced NaN/inf along an orbit."""


class TangentialExitError(DftomoError):
    """An orbit met the boundary tangentially (transversality test failed)."""

    def __init__(self, msg, t=None, cosine=None):
        super().__init__(msg)
        self.t = t
        self.cosine = cosine


class TrappedError(DftomoError):
    """An orbit failed to exit before the trapping horizon."""

    def __init__(self, msg, z=None):
        super().__init__(msg)
        self.z = z


class SelfIntersectionError(DftomoError):
    """A base curve of the ray family intersects itself."""

    def __init__(self, msg, z=None, t1=None, t2=None):
        super().__init__(msg)
        self.z = z
        self.t1 = t1
        self.t2 = t2


class TangentialIntersectionError(DftomoError):
    """A base curve touches the boundary at an interior parameter value."""


class SingularPointError(DftomoError):
    """A base curve has vanishing velocity."""


class InsufficientVariationsError(DftomoError):
    """Variation fields plus the flow direction fail to span the tangent space."""

    def __init__(self, msg, z=None, t=None):
        super().__init__(msg)
        self.z = z
        self.t = t


class RankDeficientError(DftomoError):
    """A Jacobian expected to have full rank is rank deficient."""

    def __init__(self, msg, samples=None):
        super().__init__(msg)
        self.samples = samples or []


class OffManifoldError(DftomoError):
    """A point does not satisfy the incidence relation to tolerance."""


class DegenerateFrameError(DftomoError):
    """Spanning vectors of a fiber frame are numerically dependent."""


class EmptyLevelSetError(DftomoError):
    """A level set misses the requested region."""


class NotOnCharacteristicError(DftomoError):
    """A cotangent point does not lie on the characteristic set p = 0."""


class NoIncidenceError(DftomoError):
    """No fiber through the given base point meets the parameter set."""


class NotInImageError(DftomoError):
    """A phase-space point is not in the image of the left projection."""


class ChartFailureError(DftomoError):
    """A local coordinate construction degenerated."""


class NewtonDivergedError(DftomoError):
    """Newton iteration failed to converge."""


class HessianDegenerateError(DftomoError):
    """A phase Hessian is numerically singular."""


class SearchFailedError(DftomoError):
    """A multi-start constrained search found no feasible point."""


class SchemaError(DftomoError):
    """A scenario file does not validate against the schema."""

    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field


class GridTooCoarseWarning(UserWarning):
    """Phase-space grid spacing is too coarse for reliable reconstruction."""


class BelowFloorWarning(UserWarning):
    """All transform magnitudes fell below the numeric floor."""
