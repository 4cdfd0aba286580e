"""Exception taxonomy shared across the package."""


class DisfluentError(Exception):
    """Base class for all errors raised by this package."""


# audio
class MalformedHeader(DisfluentError):
    pass


class UnsupportedFormat(DisfluentError):
    pass


class EmptyBuffer(DisfluentError):
    pass


# dsp
class LengthTooSmall(DisfluentError):
    pass


class TooShort(DisfluentError):
    pass


# tensor / layers
class ShapeMismatch(DisfluentError):
    pass


class BatchTooSmall(DisfluentError):
    pass


class InvalidRate(DisfluentError):
    pass


class LabelOutOfRange(DisfluentError):
    pass


class NonScalarLoss(DisfluentError):
    pass


class EmptySequence(DisfluentError):
    pass


class NumericalError(DisfluentError):
    """A forward or backward pass produced NaN or Inf."""


# model
class InvalidConfig(DisfluentError):
    pass


# dataset
class ParseError(DisfluentError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownClass(DisfluentError):
    def __init__(self, line: int, name: str):
        super().__init__(f"line {line}: unknown stutter class {name!r}")
        self.line = line
        self.name = name


class TooFewSubjects(DisfluentError):
    pass


# harness
class DegenerateLabels(DisfluentError):
    pass


class NoPositives(DisfluentError):
    pass


class EmptyEvaluation(DisfluentError):
    pass
