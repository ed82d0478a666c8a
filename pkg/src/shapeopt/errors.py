"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class DegeneratePmfError(ValueError):
    """A probability mass function has no support left."""


class NumericDivergenceError(RuntimeError):
    """The split-step field turned non-finite.

    Carries the index of the propagation step where the blow-up was
    detected.
    """

    def __init__(self, step_index: int):
        super().__init__(f"non-finite field after propagation step {step_index}")
        self.step_index = step_index


class InvalidComparisonError(ValueError):
    """Two reports being compared come from different channel setups."""
