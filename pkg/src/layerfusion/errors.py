"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, file/format
problems exit 2, numerical divergence exits 3.
"""


class FormatError(ValueError):
    """A file does not conform to the ATND or netpbm byte layout."""


class ManifestError(ValueError):
    """A run manifest is malformed or references missing/unreadable files."""


class ConfigurationError(ValueError):
    """A model or pipeline configuration cannot be honored."""


class DivergenceError(RuntimeError):
    """A latent went non-finite during sampling."""

    def __init__(self, step: int, stream: str):
        self.step = step
        self.stream = stream
        super().__init__(f"non-finite latent in stream '{stream}' at step {step}")
