"""Exception types shared across the package.

The CLI maps these onto exit codes, so training code raises one of
these rather than a bare ValueError wherever the failure class matters.
"""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class DataError(ValueError):
    """A dataset is structurally unusable (empty group, bad encoding, ...)."""


class NumericError(ArithmeticError):
    """A computation produced or received a non-finite value."""


class ContractError(RuntimeError):
    """An internal calling convention was violated (stale cache, mutated teacher)."""
