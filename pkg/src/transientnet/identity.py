"""Persistent identifiers, namespace delegation, and record signing.

An identifier names an entity for its whole lifetime, independent of where
the entity currently sits.  The prefix is a path of namespace labels; the
suffix is a local name chosen (deterministically) by the minting party.
Authority over prefixes is handed out through explicit delegations that
form a tree, and every identifier record is signed by its registrant so
that resolution shards can verify what they store.

The signature covers the fields that the registrant asserts: id, kind,
home area, addresses, version.  The ``validated`` flag is operational
metadata owned by whichever shard stores the record, so it lives outside
the signed payload: an isolated shard must be able to flag a record
without breaking its signature.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Optional

from .errors import DuplicateDelegation, InvalidPrefix, NotAuthoritative

_LABEL_MAX = 63
_SUFFIX_MAX = 128
_SEPARATOR = "/"


def _valid_label(text: str, limit: int) -> bool:
    if not 1 <= len(text) <= limit:
        return False
    return all(0x21 <= ord(ch) <= 0x7E and ch != _SEPARATOR for ch in text)


@dataclass(frozen=True)
class PersistentId:
    """A lifetime-stable name: a namespace prefix plus a local suffix."""

    prefix: tuple[str, ...]
    suffix: str

    def __post_init__(self) -> None:
        if not self.prefix:
            raise InvalidPrefix("prefix must contain at least one label")
        for label in self.prefix:
            if not _valid_label(label, _LABEL_MAX):
                raise InvalidPrefix(f"bad prefix label: {label!r}")
        if not _valid_label(self.suffix, _SUFFIX_MAX):
            raise InvalidPrefix(f"bad suffix: {self.suffix!r}")

    def canonical(self) -> str:
        return _SEPARATOR.join(self.prefix) + _SEPARATOR + self.suffix

    def __str__(self) -> str:
        return self.canonical()

    def __lt__(self, other: "PersistentId") -> bool:
        return self.canonical() < other.canonical()

    def is_under(self, prefix: tuple[str, ...]) -> bool:
        """True when this id falls inside the given namespace prefix."""
        return self.prefix[: len(prefix)] == tuple(prefix)

    @classmethod
    def parse(cls, text: str) -> "PersistentId":
        parts = text.split(_SEPARATOR)
        if len(parts) < 2:
            raise InvalidPrefix(f"not a canonical id: {text!r}")
        return cls(tuple(parts[:-1]), parts[-1])


class EntityKind(Enum):
    DEVICE = "device"
    SERVICE = "service"
    USER = "user"
    POD = "pod"
    GATEWAY = "gateway"
    AOI = "aoi"

    @classmethod
    def parse(cls, text: str) -> "EntityKind":
        for kind in cls:
            if kind.value == text:
                return kind
        raise ValueError(f"unknown entity kind: {text!r}")


def mint_id(prefix: tuple[str, ...], seed: int, tag: str = "") -> PersistentId:
    """Deterministically mint a fresh id under ``prefix``.

    The suffix is derived from the prefix, the seed, and an optional
    human-readable tag.  Equal inputs always yield the same id; distinct
    seeds yield distinct ids (collision odds are negligible at 64 bits).
    """
    if not prefix:
        raise InvalidPrefix("cannot mint under an empty prefix")
    for label in prefix:
        if not _valid_label(label, _LABEL_MAX):
            raise InvalidPrefix(f"bad prefix label: {label!r}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if tag and not _valid_label(tag, 32):
        raise InvalidPrefix(f"bad mint tag: {tag!r}")
    h = hashlib.blake2b(digest_size=8)
    h.update(_SEPARATOR.join(prefix).encode())
    h.update(b"\x00")
    h.update(seed.to_bytes((seed.bit_length() + 7) // 8 or 1, "big"))
    h.update(b"\x00")
    h.update(tag.encode())
    suffix = f"{tag}-{h.hexdigest()}" if tag else h.hexdigest()
    return PersistentId(tuple(prefix), suffix)


def derive_seed(*parts: object) -> int:
    """Fold arbitrary values into a stable non-negative integer seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class IdentifierRecord:
    """What a resolution shard stores about one identified entity."""

    id: PersistentId
    kind: EntityKind
    home_aoi: PersistentId
    addresses: tuple[str, ...]
    version: int
    validated: bool
    signature: bytes

    def __post_init__(self) -> None:
        if self.version < 1:
            raise ValueError("record version starts at 1")

    def signed_payload(self) -> bytes:
        """The byte string the registrant signs (excludes shard metadata)."""
        return (
            f"id={self.id.canonical()} kind={self.kind.value} "
            f"home_aoi={self.home_aoi.canonical()} "
            f"addresses={','.join(self.addresses)} "
            f"version={self.version}"
        ).encode()

    def to_line(self) -> str:
        """Render the record in the line-oriented dump form."""
        return (
            f"id={self.id.canonical()} kind={self.kind.value} "
            f"home_aoi={self.home_aoi.canonical()} "
            f"addresses={','.join(self.addresses)} "
            f"version={self.version} "
            f"validated={'true' if self.validated else 'false'} "
            f"sig={self.signature.hex()}"
        )

    @classmethod
    def from_line(cls, line: str) -> "IdentifierRecord":
        fields: dict[str, str] = {}
        for token in line.split():
            key, _, value = token.partition("=")
            fields[key] = value
        addresses = tuple(a for a in fields["addresses"].split(",") if a)
        return cls(
            id=PersistentId.parse(fields["id"]),
            kind=EntityKind.parse(fields["kind"]),
            home_aoi=PersistentId.parse(fields["home_aoi"]),
            addresses=addresses,
            version=int(fields["version"]),
            validated=fields["validated"] == "true",
            signature=bytes.fromhex(fields["sig"]),
        )


class KeyedHashScheme:
    """Default signature scheme: a keyed BLAKE2b MAC.

    Stands in for asymmetric signatures; the interface is the pluggable
    part.  Key distribution is out of scope, so verification receives the
    key through a key store.
    """

    name = "blake2b-keyed"

    def sign(self, key: bytes, payload: bytes) -> bytes:
        return hashlib.blake2b(payload, digest_size=16, key=key).digest()

    def verify(self, key: bytes, payload: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(key, payload), signature)


DEFAULT_SCHEME = KeyedHashScheme()


@dataclass(frozen=True)
class Signer:
    """Key material bound to the identity that signs records."""

    key_id: PersistentId
    key: bytes
    scheme: KeyedHashScheme = DEFAULT_SCHEME

    def sign(self, payload: bytes) -> bytes:
        return self.scheme.sign(self.key, payload)

    def verify(self, payload: bytes, signature: bytes) -> bool:
        return self.scheme.verify(self.key, payload, signature)


def sign_record(record: IdentifierRecord, signer: Signer) -> IdentifierRecord:
    """Return the record with its signature recomputed by ``signer``."""
    unsigned = replace(record, signature=b"")
    return replace(record, signature=signer.sign(unsigned.signed_payload()))


def verify_record(record: IdentifierRecord, key: bytes,
                  scheme: KeyedHashScheme = DEFAULT_SCHEME) -> bool:
    return scheme.verify(key, record.signed_payload(), record.signature)


@dataclass(frozen=True)
class NamespaceDelegation:
    """Authority over ``delegated_prefix`` granted beneath ``parent_prefix``."""

    parent_prefix: tuple[str, ...]
    delegated_prefix: tuple[str, ...]
    authority: PersistentId

    def __post_init__(self) -> None:
        if len(self.delegated_prefix) <= len(self.parent_prefix):
            raise InvalidPrefix("delegated prefix must extend the parent")
        if self.delegated_prefix[: len(self.parent_prefix)] != self.parent_prefix:
            raise InvalidPrefix("delegated prefix must start with the parent")


class DelegationRegistry:
    """The delegation tree rooted at one network-wide prefix.

    The registry enforces that no two live delegations claim the same
    prefix and that only the current authority for a prefix can delegate
    beneath it.
    """

    def __init__(self, root_prefix: tuple[str, ...], root_authority: PersistentId):
        if not root_prefix:
            raise InvalidPrefix("root prefix must be non-empty")
        self.root_prefix = tuple(root_prefix)
        self.root_authority = root_authority
        self._by_prefix: dict[tuple[str, ...], NamespaceDelegation] = {}

    def delegations(self) -> Iterable[NamespaceDelegation]:
        return self._by_prefix.values()

    def authority_for_prefix(self, prefix: tuple[str, ...]) -> PersistentId:
        """Who currently controls ``prefix`` (deepest covering delegation)."""
        best: Optional[NamespaceDelegation] = None
        for deleg in self._by_prefix.values():
            dp = deleg.delegated_prefix
            if prefix[: len(dp)] == dp:
                if best is None or len(dp) > len(best.delegated_prefix):
                    best = deleg
        if best is not None:
            return best.authority
        if prefix[: len(self.root_prefix)] == self.root_prefix:
            return self.root_authority
        raise NotAuthoritative(f"prefix outside the root namespace: {prefix}")

    def delegate(self, parent_prefix: tuple[str, ...], new_label: str,
                 to_aoi: PersistentId, by: PersistentId) -> NamespaceDelegation:
        """Grant ``parent_prefix``/``new_label`` to ``to_aoi``.

        ``by`` must currently hold authority over the parent prefix.
        """
        parent_prefix = tuple(parent_prefix)
        if not _valid_label(new_label, _LABEL_MAX):
            raise InvalidPrefix(f"bad delegation label: {new_label!r}")
        holder = self.authority_for_prefix(parent_prefix)
        if holder != by:
            raise NotAuthoritative(
                f"{by} does not hold authority over {'/'.join(parent_prefix)}"
            )
        child = parent_prefix + (new_label,)
        if child in self._by_prefix:
            raise DuplicateDelegation(f"already delegated: {'/'.join(child)}")
        deleg = NamespaceDelegation(parent_prefix, child, to_aoi)
        self._by_prefix[child] = deleg
        return deleg

    def resolve_authority(self, id: PersistentId) -> PersistentId:
        """Longest-prefix walk: the authority answerable for ``id``."""
        return self.authority_for_prefix(id.prefix)

    def delegation_depth(self, id: PersistentId) -> int:
        """How many delegation steps sit between the root and ``id``."""
        depth = 0
        for deleg in self._by_prefix.values():
            dp = deleg.delegated_prefix
            if id.prefix[: len(dp)] == dp:
                depth = max(depth, len(dp) - len(self.root_prefix))
        return depth


class KeyStore:
    """Mapping from identifier to verification key.

    Stands in for whatever key distribution the deployment uses; shards
    consult it when checking signatures on stored records.
    """

    def __init__(self, initial: Optional[Mapping[PersistentId, bytes]] = None):
        self._keys: dict[PersistentId, bytes] = dict(initial or {})

    def put(self, key_id: PersistentId, key: bytes) -> None:
        self._keys[key_id] = key

    def get(self, key_id: PersistentId) -> Optional[bytes]:
        return self._keys.get(key_id)

    def verify(self, record: IdentifierRecord) -> bool:
        key = self._keys.get(record.id)
        if key is None:
            return False
        return verify_record(record, key)
