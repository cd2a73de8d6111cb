"""Exception hierarchy; the CLI maps these onto exit codes."""


class ArtikinError(Exception):
    exit_code = 1


class ValidationError(ArtikinError, ValueError):
    """Bad input: malformed files, inconsistent shapes, unknown options."""

    exit_code = 2


class NumericalFailure(ArtikinError, ValueError):
    """A fit could not be computed (degenerate samples, singular data)."""

    exit_code = 3


class DegenerateSampleError(NumericalFailure):
    """A minimal sample set does not determine the model."""


class GpTrainingError(NumericalFailure):
    pass


class VariantNotFittableError(NumericalFailure):
    def __init__(self, variant: str, reason: str):
        super().__init__(f"{variant}: {reason}")
        self.variant = variant
        self.reason = reason


class NonConvergence(ArtikinError):
    exit_code = 4
