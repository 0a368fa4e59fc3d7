"""Gateway decisions: where a pod goes next, and who speaks for whom.

``next_aoi`` is the per-hop routing decision.  It resolves the
destination's current home area, then either delivers locally, forwards
to a neighbor that strictly shortens the remaining area distance, or
hands the pod to custody when the destination cannot be resolved or
reached.  Among admissible neighbors the learned route score ranks
candidates; ties fall to the lexicographically smallest area id, which
is what makes paths reproducible.  The function is pure: probe
counters are read, never written; callers commit the decision.

Constrained devices cannot run an agent of their own, so a gateway
stands in for them: an authenticated association creates a surrogate
binding and registers the device's record with the gateway as its
address.  Legacy dotted names bridge into the same resolution step
through a translation table.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Optional, Union

from .aoi import (
    AoITopology,
    NodeKind,
    aoi_reachable,
    challenge_ok,
    covering_shard,
    declare_primary,
    find_record,
)
from .dpin import PinShard, ResolutionResult, ShardMode, resolve, update_location
from .errors import (
    AlreadyBound,
    AuthFailed,
    NotFound,
    NotInReach,
    UnknownName,
    Unreachable,
)
from .identity import (
    EntityKind,
    IdentifierRecord,
    PersistentId,
    derive_seed,
    mint_id,
    sign_record,
)
from .pods import Pod
from .routing import GatewayState, PropagationPolicy


@dataclass(frozen=True)
class Deliver:
    """The destination's home area is this one (or a constituent)."""


@dataclass(frozen=True)
class Store:
    """Unresolvable or unreachable destination: hand to custody."""

    reason: str


@dataclass(frozen=True)
class Forward:
    """Send toward ``dest`` via the listed neighbor areas.

    ``targets`` holds one neighbor per replica (best first).  When the
    round-robin probe fires, ``probed`` names the second-best neighbor
    that took the primary copy's place.
    """

    dest: PersistentId
    targets: tuple[PersistentId, ...]
    probed: Optional[PersistentId] = None


NextHop = Union[Deliver, Store, Forward]


def area_distances(topo: AoITopology, target: PersistentId,
                   ) -> dict[PersistentId, int]:
    """Hop counts from every area to ``target`` over the neighbor graph."""
    dist = {target: 0}
    frontier = [target]
    while frontier:
        next_frontier: list[PersistentId] = []
        for aoi_id in frontier:
            for peer in topo.aoi(aoi_id).neighbors:
                if peer not in dist:
                    dist[peer] = dist[aoi_id] + 1
                    next_frontier.append(peer)
        frontier = next_frontier
    return dist


def next_aoi(gw: GatewayState, topo: AoITopology, pod: Pod,
             policy: PropagationPolicy,
             distances: Optional[dict[PersistentId, int]] = None,
             ) -> NextHop:
    """Decide the next hop for ``pod`` as seen from ``gw``'s area.

    Pure: same gateway state, topology, shards, and pod give the same
    answer.  Every forward strictly decreases the remaining number of
    area hops toward the destination's home, so with learning off the
    realized path length equals the breadth-first distance.
    """
    try:
        result = resolve(topo.shards(), pod.dst, gw.aoi,
                         neighbors=topo.neighbor_map())
    except NotFound:
        return Store("unresolved")
    except Unreachable:
        return Store("unreachable")

    home = result.record.home_aoi
    if home not in topo.aois:
        return Store("unresolved")
    if home == gw.aoi or home in topo.subtree(gw.aoi):
        return Deliver()

    target = home
    dist = distances if distances is not None else area_distances(topo, target)
    here = dist.get(gw.aoi)
    if here is None:
        return Store("unreachable")

    candidates = [
        n for n in sorted(topo.aoi(gw.aoi).neighbors)
        if dist.get(n, here) < here
    ]
    if not candidates:
        return Store("unreachable")
    candidates.sort(key=lambda n: (-gw.route_table.score(target, n),
                                   n.canonical()))

    probed: Optional[PersistentId] = None
    targets = candidates[: policy.replication_factor]
    if (policy.learning and policy.replication_factor == 1
            and len(candidates) >= 2):
        count = gw.probe_counts.get(target, 0)
        if (count + 1) % policy.probe_interval == 0:
            probed = candidates[1]
            targets = [probed]
    return Forward(dest=target, targets=tuple(targets), probed=probed)


def commit_probe(gw: GatewayState, dest: PersistentId) -> None:
    """Advance the round-robin probe counter after a Forward decision."""
    gw.probe_counts[dest] = gw.probe_counts.get(dest, 0) + 1


# --- surrogate bindings for constrained devices ---

@dataclass(frozen=True)
class SurrogateBinding:
    device: PersistentId
    gateway: PersistentId
    credentials: bytes


def odap_associate(gw: GatewayState, topo: AoITopology, device_name: str,
                   gateway_name: str) -> SurrogateBinding:
    """Bind a constrained device to a gateway that will speak for it.

    The device authenticates with the credentials it carries; the
    gateway then registers (or re-homes) the device's record with
    itself as the address.  One active binding per device; rebinding
    requires an explicit release.
    """
    device = topo.nodes[device_name]
    gateway_node = topo.nodes[gateway_name]
    if device.kind is not NodeKind.CONSTRAINED:
        raise AuthFailed(f"{device_name} is not a constrained device")
    if gateway_name not in topo.aoi(gw.aoi).gateways:
        raise AuthFailed(f"{gateway_name} is not a gateway of {gw.aoi}")
    if not topo.mutual_reach(device_name, gateway_name):
        raise NotInReach(f"{device_name} cannot reach {gateway_name}")
    nonce = f"odap:{device_name}:{gateway_name}".encode()
    if not challenge_ok(topo, device_name, nonce):
        raise AuthFailed(f"credentials of {device_name} failed verification")

    if device.pid is not None and device.pid in gw.surrogates:
        raise AlreadyBound(f"{device_name} already holds a binding")

    aoi = topo.aoi(gw.aoi)
    if device.pid is None:
        device.pid = mint_id(
            aoi.prefix, derive_seed(topo.seed, "node", device_name),
            tag=device_name,
        )
        topo.keystore.put(device.pid, device.key)
        if device_name not in aoi.members:
            aoi.members.add(device_name)
            device.memberships.append(gw.aoi)
        if device.primary_aoi is None:
            device.primary_aoi = gw.aoi
        record = IdentifierRecord(
            id=device.pid, kind=EntityKind.DEVICE, home_aoi=gw.aoi,
            addresses=(f"via:{gateway_node.pid.canonical()}",),
            version=1, validated=False, signature=b"",
        )
        record = sign_record(record, device.signer())
        aoi.shard.register(record)
    else:
        if device_name in aoi.members and device.primary_aoi != gw.aoi:
            declare_primary(topo, device_name, gw.aoi)
        best = find_record(topo, device.pid)
        if best is not None:
            isolated = aoi.shard.mode is ShardMode.ISOLATED
            refreshed = sign_record(
                IdentifierRecord(
                    id=best.id, kind=best.kind, home_aoi=best.home_aoi,
                    addresses=(f"via:{gateway_node.pid.canonical()}",),
                    version=best.version + 1,
                    validated=not isolated,
                    signature=b"",
                ),
                device.signer(),
            )
            owner = covering_shard(topo, device.pid)
            if owner is not None and aoi_reachable(topo, gw.aoi,
                                                   owner.owner_aoi):
                owner.absorb(refreshed)
            aoi.shard.absorb(refreshed, flag=isolated)

    credentials = hashlib.blake2b(nonce, digest_size=16,
                                  key=device.key).digest()
    binding = SurrogateBinding(device.pid, gateway_node.pid, credentials)
    gw.surrogates[device.pid] = binding
    return binding


def release_surrogate(gw: GatewayState, device: PersistentId) -> None:
    if device not in gw.surrogates:
        raise NotFound(f"no binding held for {device}")
    del gw.surrogates[device]


# --- legacy name bridging ---

@dataclass(frozen=True)
class LegacyName:
    """A dotted name from an incumbent naming scheme."""

    name: str

    def __post_init__(self) -> None:
        labels = self.name.split(".")
        if not labels or any(not label for label in labels):
            raise ValueError(f"not a legacy dotted name: {self.name!r}")


def bridge_legacy(table: Mapping[str, PersistentId],
                  name: Union[str, LegacyName],
                  shards: list[PinShard], origin: PersistentId,
                  neighbors=None) -> ResolutionResult:
    """Translate a legacy dotted name and resolve it like any id.

    The composition contract: for any mapped name the result equals
    resolving the mapped id directly.
    """
    legacy = name if isinstance(name, LegacyName) else LegacyName(name)
    mapped = table.get(legacy.name)
    if mapped is None:
        raise UnknownName(f"no mapping for legacy name {legacy.name!r}")
    return resolve(shards, mapped, origin, neighbors=neighbors)
