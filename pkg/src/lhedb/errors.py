"""Exception hierarchy shared by every layer of the engine."""

from __future__ import annotations


class LheError(Exception):
    """Base class for all engine errors."""


class ParamsError(LheError):
    """Invalid or mismatched encryption parameters."""


class BackendMismatch(LheError):
    """Operands come from different backends or parameter sets."""


class DepthBudgetExceeded(LheError):
    """An operation would push a vector past the multiplicative-depth budget."""

    def __init__(self, depth, budget):
        super().__init__(f"depth {depth} exceeds budget {budget}")
        self.depth = depth
        self.budget = budget


class MissingGaloisKey(LheError):
    """A rotation was requested without the matching key-switching key."""


class DecryptionError(LheError):
    """Noise overflow detected while decrypting."""


class InfeasibleWithoutBootstrap(LheError):
    """The best plan still exceeds the depth budget."""

    def __init__(self, depth, budget, report: str = ""):
        msg = f"deepest path {depth} exceeds budget {budget}; plan needs bootstrapping"
        super().__init__(msg)
        self.depth = depth
        self.budget = budget
        self.report = report


class UnsupportedFeature(LheError):
    """The query uses a construct outside the supported operator set."""


class BoundCheckError(UnsupportedFeature):
    """A public bound check shows the result could wrap around the plaintext modulus."""


class SqlSyntaxError(LheError):
    """The SQL text could not be parsed."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


class CatalogError(LheError):
    """Unknown table/column, bad metadata or a corrupt file."""


class EncodingError(CatalogError):
    """A value cannot be encoded under its column spec."""


class ClientError(LheError):
    """Client-side post-processing failed (e.g. AVG over zero rows)."""
