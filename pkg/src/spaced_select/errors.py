"""Error type shared by every module.

Each failure carries a short machine-readable ``code`` so callers (and the CLI)
can branch on the kind of failure without parsing messages.
"""


class SpacedError(ValueError):
    """A validation or domain error with a stable code."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class DegenerateRateWarning(UserWarning):
    """A forgetting rate collapsed to zero (alpha == 1 after a success)."""
