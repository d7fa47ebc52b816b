"""Exception types shared across the toolkit."""


class RirkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(RirkitError):
    """A parameter or setup value is unusable (bad band, too-small corpus, ...)."""


class InvalidValueError(RirkitError):
    """An input value violates a documented precondition (NaN, out of range, ...)."""


class DegenerateSignalError(RirkitError):
    """The signal carries no usable energy for the requested measurement."""


class InsufficientDecayError(RirkitError):
    """The energy decay curve never reaches the level required by the fit."""


class DegenerateDistributionError(RirkitError):
    """A sampling distribution has no finite-probability support."""


class CorruptCodegramError(RirkitError):
    """A code matrix or token sequence is malformed for the given codebooks."""


class SamplingError(RirkitError):
    """A model query failed during generation; message carries the step index."""


class DivergenceError(RirkitError):
    """An ODE integration step produced non-finite values."""


class ManifestError(RirkitError):
    """Manifests disagree (duplicate or unmatched sample ids)."""
