"""Distributed persistent-identifier resolution, one shard per area.

Each area owns a shard holding the records minted under its delegated
prefixes, plus read replicas learned from merges with other shards.
Resolution prefers the local shard; otherwise the query walks to the
shard whose delegation covers the id (longest prefix wins), paying one
virtual-time unit per area hop and failing with ``Unreachable`` when a
partition separates the origin from that shard.

A shard cut off from the rest of the network drops to isolated mode:
registrations are still accepted, but they are flagged and stay
unvalidated until the shard merges with a peer again.  Merging is a
bilateral exchange: both sides end up with read replicas of everything
the other holds, flagged records land in the receiving side's
validation queue, and version conflicts resolve toward the higher
version.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional

from .errors import BadSignature, NotFound, NotMyNamespace, StaleVersion, Unreachable
from .identity import (
    IdentifierRecord,
    KeyStore,
    NamespaceDelegation,
    PersistentId,
    Signer,
)

ISOLATED_LABEL = "isolated"


class ShardMode(Enum):
    CONNECTED = "connected"
    ISOLATED = "isolated"


@dataclass(frozen=True)
class ResolutionResult:
    record: IdentifierRecord
    valid_at_resolution: bool
    served_by: PersistentId
    hops: int = 0


ValidationJudge = Callable[["PinShard", IdentifierRecord], bool]


class PinShard:
    """One area's store of identifier records."""

    def __init__(self, owner_aoi: PersistentId,
                 delegations: Iterable[NamespaceDelegation],
                 keystore: KeyStore,
                 mode: ShardMode = ShardMode.CONNECTED):
        self.owner_aoi = owner_aoi
        self.delegations: set[NamespaceDelegation] = set(delegations)
        self.keystore = keystore
        self.mode = mode
        self.records: dict[PersistentId, IdentifierRecord] = {}
        self.flagged: set[PersistentId] = set()
        # prefixes learned from merge partners; used when re-validating
        # flagged replicas that were minted elsewhere
        self.foreign_delegations: set[NamespaceDelegation] = set()
        self.validated_total = 0  # records that ever passed validation here

    # -- namespace helpers --

    def owned_prefixes(self) -> list[tuple[str, ...]]:
        return [d.delegated_prefix for d in self.delegations]

    def covers(self, id: PersistentId) -> bool:
        return any(id.is_under(p) for p in self.owned_prefixes())

    def known_prefixes(self) -> list[tuple[str, ...]]:
        return [d.delegated_prefix
                for d in (self.delegations | self.foreign_delegations)]

    def isolated_prefix(self) -> tuple[str, ...]:
        """Reserved sub-prefix for ids minted while isolated.

        Extending the shard's own prefix keeps later merges free of
        namespace collisions by construction.
        """
        base = max(self.owned_prefixes(), key=len)
        return base + (ISOLATED_LABEL,)

    # -- write paths --

    def register(self, record: IdentifierRecord) -> IdentifierRecord:
        """Authoritative registration of a record minted in this shard's
        namespace.  In isolated mode the record is accepted but flagged
        and forced unvalidated until a later merge lets a peer check it.
        """
        if not self.keystore.verify(record):
            raise BadSignature(f"signature check failed for {record.id}")
        if not self.covers(record.id):
            raise NotMyNamespace(
                f"{record.id} is outside the delegated prefixes of "
                f"{self.owner_aoi}"
            )
        stored = self.records.get(record.id)
        if stored is not None and record.version <= stored.version:
            raise StaleVersion(
                f"{record.id}: version {record.version} does not advance "
                f"{stored.version}"
            )
        if self.mode is ShardMode.ISOLATED:
            record = replace(record, validated=False)
            self.flagged.add(record.id)
        else:
            record = replace(record, validated=True)
        self.records[record.id] = record
        return record

    def absorb(self, record: IdentifierRecord, *, flag: bool = False) -> bool:
        """Accept a read replica (merge or location update propagation).

        No namespace check: replicas are exactly the records this shard
        does not own.  Keeps the higher version on conflict.  Returns
        True when the stored state changed.
        """
        if not self.keystore.verify(record):
            raise BadSignature(f"signature check failed for {record.id}")
        stored = self.records.get(record.id)
        changed = False
        if stored is None or record.version > stored.version:
            self.records[record.id] = record
            changed = True
        if flag:
            self.flagged.add(record.id)
            held = self.records[record.id]
            if held.validated:
                self.records[record.id] = replace(held, validated=False)
            changed = True
        return changed

    def enter_isolated(self) -> None:
        self.mode = ShardMode.ISOLATED

    def validate_flagged(self, judge: Optional[ValidationJudge] = None,
                         ) -> tuple[int, int]:
        """Run the validation queue; returns (passed, evicted) counts.

        Only a connected shard can validate; in isolation there is no
        peer to check against.  The default judge re-verifies the
        signature and that the id falls under a known delegation.
        """
        if self.mode is not ShardMode.CONNECTED:
            return (0, 0)
        judge = judge or default_judge
        passed = evicted = 0
        for pid in sorted(self.flagged):
            record = self.records.get(pid)
            if record is None:
                self.flagged.discard(pid)
                continue
            if judge(self, record):
                self.records[pid] = replace(record, validated=True)
                self.flagged.discard(pid)
                self.validated_total += 1
                passed += 1
            else:
                del self.records[pid]
                self.flagged.discard(pid)
                evicted += 1
        return (passed, evicted)

    # -- views --

    def dump(self) -> str:
        lines = [f"shard {self.owner_aoi.canonical()} {self.mode.value}"]
        for pid in sorted(self.records.keys()):
            lines.append(self.records[pid].to_line())
        return "\n".join(lines) + "\n"


def default_judge(shard: PinShard, record: IdentifierRecord) -> bool:
    """Signature must verify and the id must sit in a known namespace."""
    if not shard.keystore.verify(record):
        return False
    return any(record.id.is_under(p) for p in shard.known_prefixes())


def merge(a: PinShard, b: PinShard) -> tuple[PinShard, PinShard]:
    """Bilateral shard merge: full read replication both ways.

    Records flagged on one side enter the other side's validation
    queue.  Both shards leave isolated mode, since merging is exactly the
    peer interaction isolation was waiting for.
    """
    a_records = list(a.records.values())
    a_flagged = set(a.flagged)
    b_records = list(b.records.values())
    b_flagged = set(b.flagged)

    for record in b_records:
        a.absorb(record, flag=record.id in b_flagged)
    for record in a_records:
        b.absorb(record, flag=record.id in a_flagged)

    a.foreign_delegations |= b.delegations | b.foreign_delegations
    b.foreign_delegations |= a.delegations | a.foreign_delegations
    a.mode = ShardMode.CONNECTED
    b.mode = ShardMode.CONNECTED
    return (a, b)


def update_location(shard: PinShard, id: PersistentId, new_aoi: PersistentId,
                    signer: Signer) -> IdentifierRecord:
    """Move a record's home area; only the original registrant may.

    The stored record must verify against the caller's key; that is
    what "original registrant" means under a keyed-hash scheme.  The
    version advances and the record is re-signed.
    """
    stored = shard.records.get(id)
    if stored is None:
        raise NotFound(f"{id} is not registered in shard {shard.owner_aoi}")
    if not signer.verify(stored.signed_payload(), stored.signature):
        raise BadSignature(f"signer does not match the registrant of {id}")
    validated = shard.mode is ShardMode.CONNECTED
    updated = replace(stored, home_aoi=new_aoi, version=stored.version + 1,
                      validated=validated)
    updated = replace(updated, signature=signer.sign(updated.signed_payload()))
    shard.records[id] = updated
    if not validated:
        shard.flagged.add(id)
    return updated


def _bfs_hops(neighbors: Mapping[PersistentId, Iterable[PersistentId]],
              origin: PersistentId, target: PersistentId) -> Optional[int]:
    if origin == target:
        return 0
    seen = {origin}
    frontier = [origin]
    hops = 0
    while frontier:
        hops += 1
        next_frontier: list[PersistentId] = []
        for aoi in frontier:
            for peer in neighbors.get(aoi, ()):
                if peer in seen:
                    continue
                if peer == target:
                    return hops
                seen.add(peer)
                next_frontier.append(peer)
        frontier = next_frontier
    return None


def resolve(shards: Iterable[PinShard], id: PersistentId,
            origin: PersistentId,
            neighbors: Optional[Mapping[PersistentId, Iterable[PersistentId]]] = None,
            ) -> ResolutionResult:
    """Resolve ``id`` as seen from the area ``origin``.

    Local records (own and replicas) answer immediately with zero area
    hops.  Otherwise the shard whose delegation covers the id answers,
    at a cost of one virtual-time unit per area hop, or the query fails:
    ``NotFound`` when no covering shard holds a record, ``Unreachable``
    when the covering shard sits across a partition.
    """
    shard_list = list(shards)
    local = next((s for s in shard_list if s.owner_aoi == origin), None)
    if local is not None:
        record = local.records.get(id)
        if record is not None:
            return ResolutionResult(record, record.validated, origin, hops=0)

    covering: Optional[PinShard] = None
    covering_len = -1
    for shard in shard_list:
        for prefix in shard.owned_prefixes():
            if id.is_under(prefix) and len(prefix) > covering_len:
                covering, covering_len = shard, len(prefix)
    if covering is None or id not in covering.records:
        raise NotFound(f"no record for {id}")

    if neighbors is None:
        hops = 0 if covering.owner_aoi == origin else 1
    else:
        found = _bfs_hops(neighbors, origin, covering.owner_aoi)
        if found is None:
            raise Unreachable(
                f"shard {covering.owner_aoi} holding {id} is partitioned "
                f"away from {origin}"
            )
        hops = found
    record = covering.records[id]
    return ResolutionResult(record, record.validated, covering.owner_aoi, hops)
