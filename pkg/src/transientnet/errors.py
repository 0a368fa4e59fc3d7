"""Exception types shared across the package.

Every error raised by the protocol layers derives from TransientNetError so
callers can catch the whole family at once.  The CLI maps scenario-level
errors to exit code 1 and anything else to exit code 2.
"""

from __future__ import annotations


class TransientNetError(Exception):
    """Base class for all errors raised by this package."""


# --- identifiers and namespaces ---

class InvalidPrefix(TransientNetError):
    """A namespace prefix or label does not satisfy the naming rules."""


class DuplicateDelegation(TransientNetError):
    """A delegation for the same prefix has already been granted."""


class NotAuthoritative(TransientNetError):
    """The caller does not hold authority over the parent prefix."""


# --- resolution shards ---

class BadSignature(TransientNetError):
    """A record signature failed verification, or the signer is wrong."""


class NotMyNamespace(TransientNetError):
    """A record's id falls outside the shard's delegated prefixes."""


class StaleVersion(TransientNetError):
    """An incoming record does not advance the stored version."""


class NotFound(TransientNetError):
    """No shard in the network holds a record for the id."""


class Unreachable(TransientNetError):
    """The shard that could answer is partitioned away from the origin."""


# --- area topology ---

class AlreadyAssociated(TransientNetError):
    """A founding node already belongs to an active area."""


class NotInReach(TransientNetError):
    """The nodes involved are not within radio reach of each other."""


class AlreadyMember(TransientNetError):
    """The node is already a member of the area."""


class NotAMember(TransientNetError):
    """The node is not a member of the area."""


class NotNeighbors(TransientNetError):
    """The two areas share no gateway adjacency."""


class CycleDetected(TransientNetError):
    """The requested aggregation would break the constituent forest."""


class NoSuchAoI(TransientNetError):
    """The named area does not exist."""


class NoSuchEdge(TransientNetError):
    """The named adjacency does not exist (or was never cut)."""


# --- gateways ---

class AuthFailed(TransientNetError):
    """Credential or challenge verification failed."""


class AlreadyBound(TransientNetError):
    """The device already holds an active surrogate binding."""


class UnknownName(TransientNetError):
    """A legacy name has no entry in the bridge table."""


# --- pods ---

class MissingPods(TransientNetError):
    """Reassembly is missing one or more pods of the manifest."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        ids = ", ".join(str(m) for m in self.missing)
        super().__init__(f"missing {len(self.missing)} pod(s): {ids}")


class ChecksumMismatch(TransientNetError):
    """Reassembled payload does not match the manifest checksum."""


# --- scenarios and simulation ---

class ScenarioError(TransientNetError):
    """Base class for scenario file problems."""


class ParseError(ScenarioError):
    """The scenario file is not syntactically valid."""


class ValidationError(ScenarioError):
    """The scenario parsed but violates a structural rule."""


class InvalidScenario(ScenarioError):
    """A scenario failed validation at simulation time."""
