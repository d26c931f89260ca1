from __future__ import annotations


class MultiwayError(Exception):
    """Base error for multiway failures."""


class UserError(MultiwayError):
    """An error caused by user input or environment."""


class ParseError(UserError):
    """An input document could not be parsed."""


class ConfigError(UserError):
    """Configuration is invalid."""


class ProtectiveFactorError(UserError):
    """A factor lowers risk where a risk factor is required."""

    def __init__(self, factors: tuple[str, ...]) -> None:
        self.factors = factors
        names = ", ".join(factors)
        super().__init__(
            f"Protective factor(s) {names}: singleton RR < 1. "
            "Recode them as 1 - Z before computing additive indices."
        )


class NumericalError(MultiwayError):
    """A computation produced an invalid numerical result."""


class FitError(NumericalError):
    """The regression could not be fitted."""

    def __init__(self, message: str, column: str | None = None) -> None:
        self.column = column
        super().__init__(message)


class VarianceError(NumericalError):
    """A covariance matrix or propagated variance is invalid."""


class PipelineError(MultiwayError):
    """A pipeline step failed."""

    def __init__(self, step: str, cause: MultiwayError) -> None:
        self.step = step
        self.cause = cause
        super().__init__(f"{step}: {cause}")


class ProtectiveFactorWarning(UserWarning):
    """Additive indices were computed with a protective factor present."""

    def __init__(self, factors: tuple[str, ...]) -> None:
        self.factors = factors
        super().__init__(
            f"singleton RR < 1 for {', '.join(factors)}; RERI assumes risk factors"
        )
