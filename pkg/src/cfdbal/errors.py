"""Exception hierarchy.

Validation problems (bad inputs, bad parameters) derive from
:class:`ValidationError`; failures of a numerical procedure on otherwise valid
input derive from :class:`NumericalError`. The CLI maps the two families to
exit codes 2 and 3.
"""

from __future__ import annotations


class CfdError(Exception):
    """Base class for all package errors."""

    code = "error"


class ValidationError(CfdError, ValueError):
    code = "validation_error"


class NumericalError(CfdError, ArithmeticError):
    code = "numerical_error"


class ParameterError(ValidationError):
    code = "parameter_error"


class ShapeError(ValidationError):
    code = "shape_error"


class InsufficientDataError(ValidationError):
    code = "insufficient_data"


class DegenerateBandwidthError(ValidationError):
    code = "degenerate_bandwidth"


class UnsupportedClosedFormError(ValidationError):
    code = "unsupported_closed_form"


class ImproperDensityError(ValidationError):
    code = "improper_density"


class InvalidWeightsError(ValidationError):
    code = "invalid_weights"


class EmptyGroupError(ValidationError):
    code = "empty_group"


class WeakInstrumentError(NumericalError):
    code = "weak_instrument"


class SeparationError(NumericalError):
    code = "separation"


class QpError(NumericalError):
    code = "qp_failure"


class DegenerateSubsampleError(NumericalError):
    code = "degenerate_subsample"


class DegenerateScenarioError(ValidationError):
    code = "degenerate_scenario"


class StudyError(NumericalError):
    code = "study_failure"


class ColumnError(ValidationError):
    code = "missing_column"


class ParseError(ValidationError):
    code = "parse_error"


class MissingValueError(ValidationError):
    code = "missing_value"


class ScalingError(ValidationError):
    code = "scaling_error"
