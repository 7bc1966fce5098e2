class ContractViolation(ValueError):
    """An operation was called with inputs outside its documented domain."""


class IngestionError(ValueError):
    """A corpus or vocabulary file could not be read as specified."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite.

    ``checkpoint`` holds the last parameters that produced a finite loss.
    """

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step


class NonFiniteGradient(ArithmeticError):
    """A gradient entry was NaN or infinite; ``parameter`` names the culprit."""

    def __init__(self, parameter: str):
        super().__init__(f"non-finite gradient for parameter {parameter!r}")
        self.parameter = parameter
