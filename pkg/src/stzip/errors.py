"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, prior or sampler configuration."""


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(RuntimeError):
    """A factorization or normalization failed."""


class SamplerError(RuntimeError):
    """An update failed inside the Gibbs sweep.

    Carries the iteration index and block name so callers can report
    exactly where the chain aborted.
    """

    def __init__(self, iteration, block, cause):
        self.iteration = iteration
        self.block = block
        self.cause = cause
        super().__init__(f"iteration {iteration}, block {block!r}: {cause}")
