"""Exception hierarchy.

The CLI maps ``ValidationError`` subclasses to exit code 1 and
``NumericalError`` subclasses to exit code 2.
"""


class QlschError(Exception):
    module = "qlsch"


class ValidationError(QlschError, ValueError):
    """Bad input: configuration, shapes, parameters."""


class NumericalError(QlschError, ArithmeticError):
    """A computation ran but failed: divergence, NaN, non-convergence."""


class ConfigurationError(ValidationError):
    module = "field_core"


class DimensionError(ValidationError):
    module = "field_core"


class FieldIOError(ValidationError):
    module = "field_core"


class HeaderError(FieldIOError):
    pass


class DimensionOverflowError(FieldIOError):
    pass


class TruncatedPayloadError(FieldIOError):
    pass


class BandOverflowError(ValidationError):
    module = "lp_multipliers"


class ScaleError(ValidationError):
    module = "dyadic_spaces"


class NormTagError(ValidationError):
    module = "dyadic_spaces"


class UndefinedEnvelopeError(ValidationError):
    module = "dyadic_spaces"


class LexError(ValidationError):
    module = "expr_dsl"

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ParseError(ValidationError):
    module = "expr_dsl"

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class SingularityError(NumericalError):
    module = "expr_dsl"

    def __init__(self, message, location):
        super().__init__(f"{message} at grid index {location}")
        self.location = location


class ResolutionError(ValidationError):
    module = "linear_prop"


class StepError(NumericalError):
    module = "linear_prop"

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class SmallnessError(ValidationError):
    module = "quasilinear"


class DivergenceError(NumericalError):
    module = "quasilinear"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ParameterError(ValidationError):
    module = "estimate_lab"
