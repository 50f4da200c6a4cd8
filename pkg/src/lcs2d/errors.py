"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError and
subclasses -> 3, FieldFormatError and OS-level failures -> 4.
"""


class Lcs2dError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(Lcs2dError):
    """Invalid, unknown, or inconsistent configuration input."""


class FieldFormatError(Lcs2dError):
    """Corrupt or incompatible binary field file."""


class NumericError(Lcs2dError):
    """Base class for failures of the numerical contracts."""


class OutOfRangeError(NumericError):
    """Query time outside the span covered by a velocity series."""


class StiffnessError(NumericError):
    """Adaptive integrator cannot meet its tolerance above the step floor."""


class SolvabilityError(NumericError):
    """Periodic Poisson problem with a non-zero-mean right-hand side."""


class AdmissibilityError(NumericError):
    """Direction-field query outside the set where the field is defined."""


class SingularityError(NumericError):
    """Direction-field query at a degenerate (isotropic) tensor point."""


class DegenerateFieldError(NumericError):
    """Tensor field degenerate over most of the domain; analysis meaningless."""
