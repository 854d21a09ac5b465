from __future__ import annotations


class DecongestError(RuntimeError):
    """Root of every error raised by the package."""


class InvalidArgumentError(DecongestError, ValueError):
    pass


class PreferencesRequiredError(DecongestError):
    def __init__(self, what: str = "this operation") -> None:
        super().__init__(f"preferences required for {what}")


class PricingError(DecongestError):
    def __init__(self, message: str, residual: float | None = None) -> None:
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual={residual:.3e})"
        super().__init__(message)


class EnumerationCapError(DecongestError):
    def __init__(self, count: int, cap: int) -> None:
        self.count = count
        self.cap = cap
        super().__init__(
            f"{count} masks exceed the enumeration cap of {cap}; "
            "use the mask learner (decongest learn-mask) for this size"
        )


class TrainingError(DecongestError):
    def __init__(self, message: str, **diagnostics: object) -> None:
        self.diagnostics = diagnostics
        if diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
            message = f"{message} [{details}]"
        super().__init__(message)


class DataError(DecongestError):
    pass


class PropensityError(DecongestError):
    pass


class AdmissibilityError(DecongestError):
    pass


class HypothesesNotMet(DecongestError):
    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"hypotheses not met: {reason}")


class ConfigError(DecongestError):
    pass
