class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class InfeasibleError(ValueError):
    """A construction step cannot be carried out with the given parameters."""

    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage


class NumericError(ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class DivergenceError(ArithmeticError):
    """A divergence is infinite (the reference density vanishes where the other does not)."""
