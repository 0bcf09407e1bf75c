"""Exception types shared across the toolkit."""


class VtmError(Exception):
    """Base class for all toolkit errors."""


class MalformedInputError(VtmError):
    """Input data violates a structural invariant (duplicates, bad ids, ...)."""


class SchemeError(VtmError):
    """A partition scheme is inconsistent with the graph it is applied to."""


class FactorizationError(VtmError):
    """A symmetric factorization failed; the operand is not SPD."""


class SingularSystemError(VtmError):
    """A solve was requested against a singular operator."""


class ProtocolError(VtmError):
    """The message-passing engine detected a wiring bug (missing message)."""
