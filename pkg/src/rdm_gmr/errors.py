"""Exception types shared across the package.

Every hard failure raised by this package derives from :class:`RdmGmrError`,
so callers embedding the library can catch one type at the boundary.  Soft
conditions (poor mean-variance fit, non-converged chains) are reported as
warnings or flags instead of exceptions.
"""


class RdmGmrError(Exception):
    """Base class for all errors raised by this package."""


class ZeroSumError(RdmGmrError):
    """Composition closure was asked to normalize a vector with zero sum."""


class NegativeEntryError(RdmGmrError):
    """A proportion, weight, or standard error was negative."""


class SchemaError(RdmGmrError):
    """Input tables are structurally malformed (missing columns, cells, weeks)."""


class InvariantError(RdmGmrError):
    """Input tables are well-formed but violate a model invariant."""


class MaskError(RdmGmrError):
    """The lake/river partition is empty on one side or names unknown stocks."""


class DegenerateFitError(RdmGmrError):
    """All proportions sit on the simplex boundary; the dispersion fit has no signal."""


class ZeroVarianceError(RdmGmrError):
    """Reported standard errors carry no variance signal; lambda would be infinite."""


class ZeroLakeProportionError(RdmGmrError):
    """The weighted lake-type proportion vanished; escapement is undefined."""


class BoundaryValueError(RdmGmrError):
    """A proportion handed to a likelihood lies outside the clamp range."""


class InitializationError(RdmGmrError):
    """No valid starting state exists for the sampler (e.g. n_t below the count floor)."""


class DegenerateChainsError(RdmGmrError):
    """Chains have zero within-chain variance; the convergence diagnostic is undefined."""


class DegeneratePosteriorError(RdmGmrError):
    """Too many posterior draws fell on a boundary to summarize escapement."""


class RejectionBudgetExceededError(RdmGmrError):
    """The simulator could not produce an admissible draw within its attempt budget."""


class StudyFailureError(RdmGmrError):
    """More than the tolerated share of study replicates failed for one method."""
