"""Exception types shared across the package."""


class RailchainError(Exception):
    """Base for all package errors."""


class ParseError(RailchainError):
    """File or payload is structurally malformed."""


class ValidationError(RailchainError):
    """Structurally well-formed data breaks a domain invariant."""


class ConfigError(RailchainError):
    """Scenario or consensus configuration is invalid."""


class UnknownElement(RailchainError):
    """Referenced element id does not exist in the topology."""


class BrokenLink(RailchainError):
    """Block prev_hash does not match the chain head."""


class BadHash(RailchainError):
    """Stored hash does not match recomputed canonical hash."""


class BadProof(RailchainError):
    """Consensus proof on a block fails verification."""


class ReplayError(RailchainError):
    """A committed transaction fails contract validation on replay."""


class NotProposer(RailchainError):
    """Node attempted to propose out of turn."""


class NoRoute(RailchainError):
    """Destination unreachable on the topology."""


class OutOfRetries(RailchainError):
    """Agent exhausted its booking retry budget."""
