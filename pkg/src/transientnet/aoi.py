"""Areas of influence: how nodes gather into named, shard-backed areas.

Two unassociated nodes in mutual reach challenge each other and, when
both hellos verify, found an area: it gets a deterministic id, a
delegated namespace under the network root, and a fresh resolution
shard.  Founders (and later joiners) mint their permanent ids under the
area's prefix; the id never changes afterwards, no matter where the
node roams; only the record's home area moves with it.

Gateways are not configured but elected: every full-agent member that
can reach a member of another area is a gateway, and those sightings
define the (symmetric) neighbor relation between areas.  Areas can also
aggregate into larger ones; the constituent relation must stay a
forest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

from .dpin import PinShard, ShardMode, update_location
from .errors import (
    AlreadyAssociated,
    AlreadyMember,
    AuthFailed,
    CycleDetected,
    NoSuchAoI,
    NotAMember,
    NotInReach,
    NotNeighbors,
)
from .identity import (
    DelegationRegistry,
    EntityKind,
    IdentifierRecord,
    KeyStore,
    PersistentId,
    Signer,
    derive_seed,
    mint_id,
    sign_record,
)


class NodeKind(Enum):
    FULL_AGENT = "full"
    CONSTRAINED = "constrained"


@dataclass
class Node:
    """A participant. ``name`` is the stable local handle; ``pid`` is the
    persistent identifier, minted at first association and never
    replaced afterwards."""

    name: str
    kind: NodeKind
    key: bytes
    reach: set[str] = field(default_factory=set)
    memberships: list[PersistentId] = field(default_factory=list)
    primary_aoi: Optional[PersistentId] = None
    pid: Optional[PersistentId] = None

    def signer(self) -> Signer:
        if self.pid is None:
            raise AuthFailed(f"node {self.name} has no identifier yet")
        return Signer(self.pid, self.key)


@dataclass
class AreaOfInfluence:
    id: PersistentId
    prefix: tuple[str, ...]
    shard: PinShard
    protocol_tag: str = "adhoc"
    members: set[str] = field(default_factory=set)
    gateways: set[str] = field(default_factory=set)
    neighbors: set[PersistentId] = field(default_factory=set)
    parent: Optional[PersistentId] = None       # aggregation forest
    constituents: set[PersistentId] = field(default_factory=set)


class AoITopology:
    """All areas, nodes, and the delegation tree of one network."""

    def __init__(self, root_prefix: tuple[str, ...], seed: int):
        self.root_prefix = tuple(root_prefix)
        self.seed = seed
        self.root_authority = PersistentId(self.root_prefix, "registry")
        self.registry = DelegationRegistry(self.root_prefix, self.root_authority)
        self.keystore = KeyStore()
        self.aois: dict[PersistentId, AreaOfInfluence] = {}
        self.nodes: dict[str, Node] = {}
        # key material witnessed at enrollment; the trust anchor the
        # mutual challenge and surrogate association verify against
        self.enrolled_keys: dict[str, bytes] = {}

    # -- nodes and reach --

    def add_node(self, name: str, kind: NodeKind) -> Node:
        if name in self.nodes:
            raise ValueError(f"duplicate node name: {name}")
        key = hashlib.blake2b(
            f"key:{self.seed}:{name}".encode(), digest_size=16
        ).digest()
        node = Node(name=name, kind=kind, key=key)
        self.nodes[name] = node
        self.enrolled_keys[name] = key
        return node

    def add_link(self, a: str, b: str) -> None:
        if a == b:
            raise ValueError("a node cannot link to itself")
        self.nodes[a].reach.add(b)
        self.nodes[b].reach.add(a)

    def remove_link(self, a: str, b: str) -> None:
        self.nodes[a].reach.discard(b)
        self.nodes[b].reach.discard(a)

    def mutual_reach(self, a: str, b: str) -> bool:
        return b in self.nodes[a].reach and a in self.nodes[b].reach

    def aoi(self, aoi_id: PersistentId) -> AreaOfInfluence:
        found = self.aois.get(aoi_id)
        if found is None:
            raise NoSuchAoI(f"no such area: {aoi_id}")
        return found

    def neighbor_map(self) -> dict[PersistentId, set[PersistentId]]:
        return {aoi_id: set(aoi.neighbors) for aoi_id, aoi in self.aois.items()}

    def shards(self) -> list[PinShard]:
        return [aoi.shard for aoi in self.aois.values()]

    # -- aggregation forest helpers --

    def forest_root(self, aoi_id: PersistentId) -> PersistentId:
        current = self.aoi(aoi_id)
        while current.parent is not None:
            current = self.aoi(current.parent)
        return current.id

    def subtree(self, aoi_id: PersistentId) -> set[PersistentId]:
        out = {aoi_id}
        for child in self.aoi(aoi_id).constituents:
            out |= self.subtree(child)
        return out

    def aggregation_depth(self, aoi_id: PersistentId) -> int:
        depth = 0
        current = self.aoi(aoi_id)
        while current.parent is not None:
            depth += 1
            current = self.aoi(current.parent)
        return depth

    # -- dumps --

    def dump(self) -> str:
        lines = []
        for aoi_id in sorted(self.aois.keys()):
            aoi = self.aois[aoi_id]
            neighbor_ids = ",".join(
                n.canonical() for n in sorted(aoi.neighbors)
            )
            lines.append(
                f"aoi {aoi_id.canonical()} members={len(aoi.members)} "
                f"gateways={len(aoi.gateways)} neighbors={neighbor_ids}"
            )
        return "\n".join(lines) + ("\n" if lines else "")


def _challenge(key: bytes, nonce: bytes) -> bytes:
    return hashlib.blake2b(nonce, digest_size=16, key=key).digest()


def challenge_ok(topo: AoITopology, name: str, nonce: bytes) -> bool:
    """Does the node's current key still match its enrolled identity?"""
    enrolled = topo.enrolled_keys.get(name)
    if enrolled is None:
        return False
    return _challenge(topo.nodes[name].key, nonce) == _challenge(enrolled, nonce)


def _mint_node_record(topo: AoITopology, node: Node,
                      aoi: AreaOfInfluence) -> IdentifierRecord:
    """Give a node its permanent id under the area's prefix and register
    the signed record in the area's shard."""
    node.pid = mint_id(aoi.prefix, derive_seed(topo.seed, "node", node.name),
                       tag=node.name)
    topo.keystore.put(node.pid, node.key)
    record = IdentifierRecord(
        id=node.pid,
        kind=EntityKind.DEVICE,
        home_aoi=aoi.id,
        addresses=(f"sim://{node.name}",),
        version=1,
        validated=False,
        signature=b"",
    )
    record = sign_record(record, node.signer())
    return aoi.shard.register(record)


def scan_and_handshake(topo: AoITopology, a: str, b: str,
                       protocol_tag: str = "adhoc") -> AreaOfInfluence:
    """Found a new area from two unassociated nodes in mutual reach.

    The mutual challenge gates creation: each side signs a shared nonce
    and the other verifies it.  The area id is deterministic in the
    founding pair and the topology seed, so re-running a scenario
    re-creates the same names.
    """
    node_a, node_b = topo.nodes[a], topo.nodes[b]
    if not topo.mutual_reach(a, b):
        raise NotInReach(f"{a} and {b} are not in mutual reach")
    if node_a.memberships or node_b.memberships:
        raise AlreadyAssociated(
            f"founders must be unassociated: {a}, {b}"
        )
    lo, hi = sorted((a, b))
    nonce = f"hello:{lo}:{hi}:{topo.seed}".encode()
    if not (challenge_ok(topo, a, nonce) and challenge_ok(topo, b, nonce)):
        raise AuthFailed(f"mutual challenge failed between {a} and {b}")

    aoi_id = mint_id(topo.root_prefix, derive_seed(topo.seed, "aoi", lo, hi),
                     tag="aoi")
    deleg = topo.registry.delegate(
        topo.root_prefix, aoi_id.suffix, aoi_id, by=topo.root_authority
    )
    shard = PinShard(aoi_id, [deleg], topo.keystore)
    aoi = AreaOfInfluence(
        id=aoi_id,
        prefix=deleg.delegated_prefix,
        shard=shard,
        protocol_tag=protocol_tag,
        members={a, b},
    )
    topo.aois[aoi_id] = aoi
    for node in (node_a, node_b):
        node.memberships.append(aoi_id)
        node.primary_aoi = aoi_id
        _mint_node_record(topo, node, aoi)
    return aoi


def join_aoi(topo: AoITopology, name: str, aoi_id: PersistentId) -> Node:
    """Associate a node with an existing area.

    A node joining for the first time mints its permanent id here.  A
    node that already has an id keeps it: the area's shard gains a
    replica, and if this becomes the node's primary area the
    authoritative record follows via a location update.
    """
    node = topo.nodes[name]
    aoi = topo.aoi(aoi_id)
    if name in aoi.members:
        raise AlreadyMember(f"{name} already belongs to {aoi_id}")
    if not any(topo.mutual_reach(name, member) for member in aoi.members):
        raise NotInReach(f"{name} cannot reach any member of {aoi_id}")
    aoi.members.add(name)
    node.memberships.append(aoi_id)
    if node.pid is None:
        node.primary_aoi = aoi_id
        _mint_node_record(topo, node, aoi)
    elif node.primary_aoi is None:
        declare_primary(topo, name, aoi_id)
    else:
        record = find_record(topo, node.pid)
        if record is not None:
            aoi.shard.absorb(record,
                             flag=aoi.shard.mode is ShardMode.ISOLATED)
    return node


def find_record(topo: AoITopology, pid: PersistentId,
                 ) -> Optional[IdentifierRecord]:
    best: Optional[IdentifierRecord] = None
    for shard in topo.shards():
        record = shard.records.get(pid)
        if record is not None and (best is None or record.version > best.version):
            best = record
    return best


def covering_shard(topo: AoITopology, pid: PersistentId) -> Optional[PinShard]:
    best: Optional[PinShard] = None
    best_len = -1
    for shard in topo.shards():
        for prefix in shard.owned_prefixes():
            if pid.is_under(prefix) and len(prefix) > best_len:
                best, best_len = shard, len(prefix)
    return best


def aoi_reachable(topo: AoITopology, origin: PersistentId,
                   target: PersistentId) -> bool:
    if origin == target:
        return True
    seen = {origin}
    frontier = [origin]
    while frontier:
        next_frontier: list[PersistentId] = []
        for aoi_id in frontier:
            for peer in topo.aoi(aoi_id).neighbors:
                if peer == target:
                    return True
                if peer not in seen:
                    seen.add(peer)
                    next_frontier.append(peer)
        frontier = next_frontier
    return False


def declare_primary(topo: AoITopology, name: str,
                    aoi_id: PersistentId) -> Node:
    """Make ``aoi_id`` the node's primary area and move its record home.

    Declaring the current primary again is a no-op: no version bump.
    """
    node = topo.nodes[name]
    aoi = topo.aoi(aoi_id)
    if name not in aoi.members:
        raise NotAMember(f"{name} is not a member of {aoi_id}")
    if node.primary_aoi == aoi_id:
        return node
    node.primary_aoi = aoi_id
    if node.pid is None:
        return node
    return relocate_record(topo, name, aoi_id)


def relocate_record(topo: AoITopology, name: str,
                    aoi_id: PersistentId) -> Node:
    """Point the node's identifier record at a new home area.

    The node signs its own update; if the shard owning its namespace is
    reachable the update lands there, otherwise the local shard absorbs
    the self-signed record (flagged when isolated) and a later merge
    carries it home by version dominance.  Every reachable shard that
    already replicates the record absorbs the update too; replicas out
    of reach stay stale until a merge reconciles them.
    """
    node = topo.nodes[name]
    aoi = topo.aoi(aoi_id)
    covering = covering_shard(topo, node.pid)
    if covering is not None and node.pid in covering.records and \
            aoi_reachable(topo, aoi_id, covering.owner_aoi):
        updated = update_location(covering, node.pid, aoi_id, node.signer())
        if covering.owner_aoi != aoi_id:
            aoi.shard.absorb(updated,
                             flag=aoi.shard.mode is ShardMode.ISOLATED)
    else:
        stale = find_record(topo, node.pid)
        if stale is None:
            return node
        updated = replace(stale, home_aoi=aoi_id, version=stale.version + 1,
                          validated=False)
        updated = sign_record(updated, node.signer())
        aoi.shard.absorb(updated, flag=True)
    for shard in topo.shards():
        if shard is covering or shard.owner_aoi == aoi_id:
            continue
        if node.pid in shard.records and \
                aoi_reachable(topo, aoi_id, shard.owner_aoi):
            shard.absorb(updated, flag=shard.mode is ShardMode.ISOLATED)
    return node


def elect_gateways(topo: AoITopology, aoi_id: PersistentId,
                   ) -> AreaOfInfluence:
    """Recompute the area's gateway set and neighbor edges.

    Every full-agent member in mutual reach of a member of another area
    is a gateway; the witnessed areas become neighbors, symmetrically.
    Idempotent on an unchanged reach graph.
    """
    aoi = topo.aoi(aoi_id)
    gateways: set[str] = set()
    witnessed: set[PersistentId] = set()
    membership_of: dict[str, list[PersistentId]] = {}
    for other_id, other in topo.aois.items():
        if other_id == aoi_id:
            continue
        for member in other.members:
            membership_of.setdefault(member, []).append(other_id)

    for member in sorted(aoi.members):
        node = topo.nodes[member]
        for peer in node.reach:
            if not topo.mutual_reach(member, peer):
                continue
            for other_id in membership_of.get(peer, []):
                witnessed.add(other_id)
                if node.kind is NodeKind.FULL_AGENT:
                    gateways.add(member)

    aoi.gateways = gateways
    former = set(aoi.neighbors)
    aoi.neighbors = witnessed
    for other_id in witnessed:
        topo.aoi(other_id).neighbors.add(aoi_id)
    for other_id in former - witnessed:
        topo.aoi(other_id).neighbors.discard(aoi_id)
    return aoi


def refresh_topology(topo: AoITopology) -> None:
    """Re-run gateway election everywhere (after any reach change)."""
    for aoi_id in sorted(topo.aois.keys()):
        elect_gateways(topo, aoi_id)


def aggregate(topo: AoITopology, parent_id: PersistentId,
              child_id: PersistentId) -> AreaOfInfluence:
    """Fold ``child`` into ``parent`` as a constituent.

    The parent gains read replicas of the child's records (so a lookup
    from the parent resolves child-homed ids locally), and the child's
    namespace is re-delegated as a nested prefix under the parent for
    anything it mints from now on.  Existing ids are untouched.  The
    constituent relation must remain a forest.
    """
    parent = topo.aoi(parent_id)
    child = topo.aoi(child_id)
    if child_id not in parent.neighbors:
        raise NotNeighbors(f"{parent_id} and {child_id} are not neighbors")
    if child.parent is not None:
        raise CycleDetected(f"{child_id} is already a constituent")
    if parent_id in topo.subtree(child_id):
        raise CycleDetected(
            f"aggregating {child_id} under {parent_id} would close a cycle"
        )
    nested = topo.registry.delegate(
        parent.prefix, child.id.suffix, child.id, by=parent.id
    )
    child.shard.delegations.add(nested)
    child.parent = parent_id
    parent.constituents.add(child_id)
    for record in child.shard.records.values():
        parent.shard.absorb(record, flag=record.id in child.shard.flagged)
    parent.shard.foreign_delegations |= child.shard.delegations
    return parent


def split_components(topo: AoITopology, aoi_id: PersistentId,
                     ) -> list[AreaOfInfluence]:
    """Handle an area whose internal reach graph fell apart.

    The component with the most members (ties: the one holding the
    lexicographically smallest name) keeps the area, its shard, and its
    id.  Every other component becomes a new area with a fresh shard
    sub-delegated under the old prefix, operating isolated until it
    merges back.  Returns the newly created areas.
    """
    aoi = topo.aoi(aoi_id)
    members = sorted(aoi.members)
    if not members:
        return []
    unvisited = set(members)
    components: list[list[str]] = []
    while unvisited:
        start = min(unvisited)
        stack, comp = [start], []
        unvisited.discard(start)
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for peer in topo.nodes[cur].reach:
                if peer in unvisited and peer in aoi.members \
                        and topo.mutual_reach(cur, peer):
                    unvisited.discard(peer)
                    stack.append(peer)
        components.append(sorted(comp))
    if len(components) <= 1:
        return []

    components.sort(key=lambda c: (-len(c), c[0]))
    keeper = components[0]
    created: list[AreaOfInfluence] = []
    for i, comp in enumerate(components[1:], start=1):
        part_id = mint_id(
            aoi.prefix, derive_seed(topo.seed, "split", aoi_id, i, *comp),
            tag="part",
        )
        deleg = topo.registry.delegate(
            aoi.prefix, part_id.suffix, part_id, by=aoi.id
        )
        shard = PinShard(part_id, [deleg], topo.keystore,
                         mode=ShardMode.ISOLATED)
        part = AreaOfInfluence(
            id=part_id, prefix=deleg.delegated_prefix, shard=shard,
            protocol_tag=aoi.protocol_tag, members=set(comp),
        )
        topo.aois[part_id] = part
        for name in comp:
            node = topo.nodes[name]
            aoi.members.discard(name)
            node.memberships = [m for m in node.memberships if m != aoi_id]
            node.memberships.append(part_id)
            if node.primary_aoi == aoi_id:
                node.primary_aoi = part_id
            if node.pid is not None:
                if node.primary_aoi == part_id:
                    # re-home into the fragment so the isolated community
                    # can resolve its own members; flagged until a merge
                    relocate_record(topo, name, part_id)
                else:
                    record = find_record(topo, node.pid)
                    if record is not None:
                        shard.absorb(record, flag=True)
        created.append(part)
    aoi.members = set(keeper)
    return created
