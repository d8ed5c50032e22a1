"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (a ``ValueError``);
numerical breakdowns derive from :class:`NumericalError`.  The command line
maps the first family to exit code 1 and the second to exit code 2.
"""


class ValidationError(ValueError):
    """Invalid user input: bad parameters, malformed specs, wrong shapes."""


class DomainError(ValidationError):
    """An argument lies outside the interval on which an object is defined."""


class UnsupportedOrderError(ValidationError):
    """A derivative order beyond what a closed form provides was requested."""


class UnsupportedError(ValidationError):
    """The requested family or operation has no implementation."""


class InvalidKernelError(ValidationError):
    """Kernel parameters violate the constraints of the family."""


class InvalidParameterError(ValidationError):
    """Model parameters (e.g. autoregressive coefficients) are inadmissible."""


class RepresentationError(ValidationError):
    """A drift cannot be represented in the supplied basis."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance."""


class DegenerateModelError(NumericalError):
    """A matrix that must be positive definite is singular or indefinite."""


class DegenerateDesignError(NumericalError):
    """A design matrix is rank deficient."""


class ConstructionError(NumericalError):
    """A closed-form construction failed its own verification."""
