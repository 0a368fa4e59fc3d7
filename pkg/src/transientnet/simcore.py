"""Deterministic discrete-tick simulation of a transient network.

Time is an integer tick counter.  Everything that happens is an event
ordered by (time, seq); scripted events at a tick apply before that
tick's network phase (custody flush, then queue dispatch, then arrival
handling).  All randomness (payload bytes, link loss) derives from
the scenario seed, so a scenario always replays to byte-identical
trace and metrics output.

Pods move at most one area hop per tick.  Every hop re-resolves the
destination, which is what lets traffic chase a node that moved while
its pods were in flight: the record's home area changes, and from the
next decision on, every queue and custody store routes toward the new
home.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

from . import routing
from .aoi import (
    AoITopology,
    NodeKind,
    aoi_reachable,
    aggregate,
    declare_primary,
    join_aoi,
    refresh_topology,
    relocate_record,
    scan_and_handshake,
    split_components,
)
from .dpin import ShardMode, merge as merge_shards, resolve
from .errors import (
    InvalidScenario,
    NoSuchAoI,
    NoSuchEdge,
    NotFound,
    ScenarioError,
    TransientNetError,
    Unreachable,
)
from .gateway import (
    Deliver,
    Forward,
    Store,
    commit_probe,
    next_aoi,
    odap_associate,
    release_surrogate,
)
from .identity import PersistentId, derive_seed
from .pods import (
    DEFAULT_POD_SIZE,
    Pod,
    Priority,
    TrafficClass,
    shard_payload,
)
from .routing import (
    GatewayState,
    PropagationPolicy,
    dispatch_tick,
    enqueue,
    flush_custody,
    report_outcome,
    store_custody,
)

ROOT_PREFIX = ("net",)


# --- scenario structure ---

@dataclass(frozen=True)
class NodeSpec:
    name: str
    kind: NodeKind = NodeKind.FULL_AGENT


@dataclass(frozen=True)
class AoiSpec:
    """One area: the first two members found it, the rest join.

    ``mesh`` links all members pairwise before the handshake; set it to
    False to wire reach explicitly through link entries.
    """

    name: str
    members: tuple[str, ...]
    protocol: str = "adhoc"
    mesh: bool = True


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str


@dataclass(frozen=True)
class LossSpec:
    """Delivery success rate for crossings between two areas."""

    a: str
    b: str
    success: float


@dataclass(frozen=True)
class EventSpec:
    time: int
    kind: str
    args: Mapping[str, object] = field(default_factory=dict)


EVENT_KINDS = frozenset({
    "inject", "flood", "move", "disconnect", "join", "linkup", "linkdown",
    "cut", "heal", "merge", "associate", "release", "aggregate", "primary",
    "mark",
})


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration: int
    nodes: tuple[NodeSpec, ...] = ()
    aois: tuple[AoiSpec, ...] = ()
    links: tuple[LinkSpec, ...] = ()
    losses: tuple[LossSpec, ...] = ()
    events: tuple[EventSpec, ...] = ()
    policy: PropagationPolicy = PropagationPolicy()
    pod_size: int = DEFAULT_POD_SIZE
    queue_capacity: int = 64
    bandwidth: int = 4
    custody_capacity: int = 1024


def check_scenario(sc: Scenario) -> list[str]:
    """Structural validation; returns a list of problems (empty = fine)."""
    problems: list[str] = []
    if sc.seed < 0:
        problems.append("seed: must be non-negative")
    if sc.duration < 0:
        problems.append("duration: must be non-negative")
    if sc.pod_size < 1:
        problems.append("pod_size: must be at least 1")
    if sc.queue_capacity < 1:
        problems.append("queue_capacity: must be at least 1")
    if sc.bandwidth < 1:
        problems.append("bandwidth: must be at least 1")
    if sc.custody_capacity < 1:
        problems.append("custody_capacity: must be at least 1")

    names = set()
    for i, node in enumerate(sc.nodes):
        if node.name in names:
            problems.append(f"nodes[{i}].name: duplicate {node.name!r}")
        names.add(node.name)

    kinds = {n.name: n.kind for n in sc.nodes}
    aliases = set()
    already_members: set[str] = set()
    for i, aoi in enumerate(sc.aois):
        where = f"aois[{i}]"
        if aoi.name in aliases:
            problems.append(f"{where}.name: duplicate {aoi.name!r}")
        aliases.add(aoi.name)
        if len(aoi.members) < 2:
            problems.append(f"{where}.members: need at least two members")
            continue
        for member in aoi.members:
            if member not in kinds:
                problems.append(f"{where}.members: unknown node {member!r}")
        founders = aoi.members[:2]
        for founder in founders:
            if founder in already_members:
                problems.append(
                    f"{where}.members: founder {founder!r} already belongs "
                    f"to an earlier area"
                )
        already_members.update(aoi.members)

    for i, link in enumerate(sc.links):
        for end in (link.a, link.b):
            if end not in kinds:
                problems.append(f"links[{i}]: unknown node {end!r}")
        if link.a == link.b:
            problems.append(f"links[{i}]: self link")

    for i, loss in enumerate(sc.losses):
        for end in (loss.a, loss.b):
            if end not in aliases:
                problems.append(f"losses[{i}]: unknown area {end!r}")
        if not 0.0 <= loss.success <= 1.0:
            problems.append(f"losses[{i}].success: must be within [0, 1]")

    def need(ev: EventSpec, where: str, *keys: str) -> None:
        for key in keys:
            if key not in ev.args:
                problems.append(f"{where}.{key}: required")

    for i, ev in enumerate(sc.events):
        where = f"events[{i}]"
        if ev.kind not in EVENT_KINDS:
            problems.append(f"{where}.kind: unknown kind {ev.kind!r}")
            continue
        if not 0 <= ev.time <= sc.duration:
            problems.append(f"{where}.time: outside [0, duration]")
        args = ev.args
        if ev.kind == "inject":
            need(ev, where, "src", "dst")
            for key in ("src", "dst"):
                if key in args and args[key] not in kinds:
                    problems.append(f"{where}.{key}: unknown node {args[key]!r}")
            if "priority" in args:
                try:
                    Priority.parse(str(args["priority"]))
                except ValueError:
                    problems.append(f"{where}.priority: bad value")
            if "bytes" in args and int(args["bytes"]) < 0:
                problems.append(f"{where}.bytes: must be non-negative")
        elif ev.kind == "flood":
            need(ev, where, "src", "dst", "per_tick", "until")
            for key in ("src", "dst"):
                if key in args and args[key] not in kinds:
                    problems.append(f"{where}.{key}: unknown node {args[key]!r}")
            if "per_tick" in args and int(args["per_tick"]) < 1:
                problems.append(f"{where}.per_tick: must be at least 1")
            if "until" in args and not ev.time < int(args["until"]) <= sc.duration + 1:
                problems.append(f"{where}.until: outside (time, duration+1]")
            for j, pri in enumerate(args.get("pattern", [])):
                try:
                    Priority.parse(str(pri))
                except ValueError:
                    problems.append(f"{where}.pattern[{j}]: bad priority")
        elif ev.kind in ("move",):
            need(ev, where, "node", "to")
            if "node" in args and args["node"] not in kinds:
                problems.append(f"{where}.node: unknown node {args['node']!r}")
            if "to" in args and args["to"] not in aliases:
                problems.append(f"{where}.to: unknown area {args['to']!r}")
        elif ev.kind in ("join", "primary"):
            need(ev, where, "node", "aoi")
            if "node" in args and args["node"] not in kinds:
                problems.append(f"{where}.node: unknown node {args['node']!r}")
            if "aoi" in args and args["aoi"] not in aliases:
                problems.append(f"{where}.aoi: unknown area {args['aoi']!r}")
        elif ev.kind == "disconnect":
            need(ev, where, "node")
            if "node" in args and args["node"] not in kinds:
                problems.append(f"{where}.node: unknown node {args['node']!r}")
        elif ev.kind in ("linkup", "linkdown"):
            need(ev, where, "a", "b")
            for key in ("a", "b"):
                if key in args and args[key] not in kinds:
                    problems.append(f"{where}.{key}: unknown node {args[key]!r}")
        elif ev.kind in ("cut", "heal", "merge"):
            need(ev, where, "a", "b")
            for key in ("a", "b"):
                if key in args and args[key] not in aliases:
                    problems.append(f"{where}.{key}: unknown area {args[key]!r}")
        elif ev.kind == "associate":
            need(ev, where, "device", "gateway")
            for key in ("device", "gateway"):
                if key in args and args[key] not in kinds:
                    problems.append(f"{where}.{key}: unknown node {args[key]!r}")
        elif ev.kind == "release":
            need(ev, where, "device")
        elif ev.kind == "aggregate":
            need(ev, where, "parent", "child")
            for key in ("parent", "child"):
                if key in args and args[key] not in aliases:
                    problems.append(f"{where}.{key}: unknown area {args[key]!r}")
        elif ev.kind == "mark":
            need(ev, where, "label")
    return problems


# --- events and trace ---

class EventKind(Enum):
    NODE_MOVE = "node_move"
    LINK_UP = "link_up"
    LINK_DOWN = "link_down"
    POD_INJECT = "pod_inject"
    TICK = "tick"
    AOI_MERGE = "aoi_merge"
    CUSTOM = "custom"


_KIND_MAP = {
    "move": EventKind.NODE_MOVE,
    "linkup": EventKind.LINK_UP,
    "linkdown": EventKind.LINK_DOWN,
    "inject": EventKind.POD_INJECT,
    "merge": EventKind.AOI_MERGE,
}


@dataclass(frozen=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind
    label: str = ""
    args: Mapping[str, object] = field(default_factory=dict)


class Trace:
    """Ordered log of everything observable about one run."""

    def __init__(self) -> None:
        self.lines: list[tuple[int, int, str]] = []
        self._seq = 0
        self.now = 0

    def emit(self, text: str) -> None:
        self.lines.append((self.now, self._seq, text))
        self._seq += 1

    def render(self) -> str:
        return "".join(f"{t}.{s} {text}\n" for t, s, text in self.lines)

    def texts(self) -> list[str]:
        return [text for _, _, text in self.lines]


@dataclass
class MetricsSummary:
    delivered: int = 0
    dropped_control: int = 0
    dropped_payload: int = 0
    mean_hops: float = 0.0
    stores: int = 0
    flushes: int = 0
    evictions: int = 0
    # audit extras (not part of the CSV)
    injected: int = 0
    copies: int = 0
    queued_end: int = 0
    custody_end: int = 0
    resolution_hops: int = 0
    probes: int = 0
    drops_by_reason: dict = field(default_factory=dict)
    control_drops_with_payload_queued: int = 0

    @property
    def dropped_total(self) -> int:
        return self.dropped_control + self.dropped_payload

    def csv(self) -> str:
        header = ("delivered,dropped_control,dropped_payload,mean_hops,"
                  "stores,flushes,evictions")
        row = (f"{self.delivered},{self.dropped_control},"
               f"{self.dropped_payload},{self.mean_hops:.4f},"
               f"{self.stores},{self.flushes},{self.evictions}")
        return f"{header}\n{row}\n"

    def conserved(self) -> bool:
        """Every pod instance is accounted for exactly once."""
        return (self.injected + self.copies ==
                self.delivered + self.dropped_total + self.evictions +
                self.queued_end + self.custody_end)


@dataclass
class SimReport:
    trace: Trace
    metrics: MetricsSummary
    deliveries: dict[str, int]          # pod id -> hops at delivery
    delivery_order: list[str]           # pod ids in delivery order
    drops: list["DropRecord"]
    simulation: "Simulation"


@dataclass(frozen=True)
class DropRecord:
    time: int
    aoi: PersistentId
    pod: Pod
    reason: str


class Simulation:
    """One run of a scenario over a fresh network state."""

    def __init__(self, scenario: Scenario):
        problems = check_scenario(scenario)
        if problems:
            raise InvalidScenario("; ".join(problems))
        self.scenario = scenario
        self.policy = scenario.policy
        self.topo = AoITopology(ROOT_PREFIX, scenario.seed)
        self.trace = Trace()
        self.metrics = MetricsSummary()
        self.aliases: dict[str, PersistentId] = {}
        self.gateways: dict[PersistentId, GatewayState] = {}
        self.pid_to_name: dict[PersistentId, str] = {}
        self.delivered_ids: set[PersistentId] = set()
        self.deliveries: dict[str, int] = {}
        self.delivery_order: list[str] = []
        self.drops: list[DropRecord] = []
        self.epoch = 0
        self._loss_rng: dict[tuple[str, str], random.Random] = {}
        self._patterns: dict[tuple[str, ...], list[Priority]] = {}
        self._loss_rate: dict[tuple[str, str], float] = {}
        self._cut_links: dict[tuple[str, str], list[tuple[str, str]]] = {}
        self._inject_counter = 0
        self._hop_totals = 0
        self._events: list[SimEvent] = []
        self._ran = False
        self._setup()
        self._schedule()

    # -- construction --

    def _setup(self) -> None:
        sc = self.scenario
        for spec in sc.nodes:
            self.topo.add_node(spec.name, spec.kind)
        for spec in sc.aois:
            if spec.mesh:
                members = list(spec.members)
                for i, a in enumerate(members):
                    for b in members[i + 1:]:
                        self.topo.add_link(a, b)
        for link in sc.links:
            self.topo.add_link(link.a, link.b)
        for spec in sc.aois:
            founders = spec.members[:2]
            aoi = scan_and_handshake(self.topo, founders[0], founders[1],
                                     protocol_tag=spec.protocol)
            self.aliases[spec.name] = aoi.id
            for member in spec.members[2:]:
                join_aoi(self.topo, member, aoi.id)
        refresh_topology(self.topo)
        for aoi_id in self.topo.aois:
            self._gw(aoi_id)
        for loss in sc.losses:
            a, b = self.aliases[loss.a], self.aliases[loss.b]
            key = self._pair_key(a, b)
            self._loss_rate[key] = loss.success
            self._loss_rng[key] = random.Random(
                derive_seed(sc.seed, "loss", *key)
            )
        self._sync_pids()

    def _schedule(self) -> None:
        ordered: list[tuple[int, tuple[int, int], EventSpec]] = []
        for i, spec in enumerate(self.scenario.events):
            if spec.kind == "flood":
                until = int(spec.args["until"])
                for j, t in enumerate(range(spec.time, until)):
                    args = dict(spec.args)
                    args["_sub"] = j
                    tick_slice = EventSpec(time=t, kind="flood", args=args)
                    ordered.append((t, (i, j), tick_slice))
            else:
                ordered.append((spec.time, (i, 0), spec))
        for t in range(0, self.scenario.duration + 1):
            tick = EventSpec(time=t, kind="__tick__")
            ordered.append((t, (1 << 30, t), tick))
        ordered.sort(key=lambda item: (item[0], item[1]))
        self._events = []
        for seq, (t, _, spec) in enumerate(ordered):
            if spec.kind == "__tick__":
                kind = EventKind.TICK
            else:
                kind = _KIND_MAP.get(spec.kind, EventKind.CUSTOM)
            self._events.append(SimEvent(t, seq, kind, spec.kind, spec.args))

    # -- helpers --

    def _gw(self, aoi_id: PersistentId) -> GatewayState:
        gw = self.gateways.get(aoi_id)
        if gw is None:
            aoi = self.topo.aoi(aoi_id)
            rep = None
            if aoi.gateways:
                rep_name = min(aoi.gateways)
                rep = self.topo.nodes[rep_name].pid
            gw = GatewayState(
                aoi=aoi_id,
                node=rep,
                bandwidth=self.scenario.bandwidth,
                queue_capacity=self.scenario.queue_capacity,
            )
            gw.custody = routing.CustodyStore(
                aoi_id, self.scenario.custody_capacity
            )
            self.gateways[aoi_id] = gw
        return gw

    def _sync_pids(self) -> None:
        for node in self.topo.nodes.values():
            if node.pid is not None:
                self.pid_to_name[node.pid] = node.name
        for aoi_id, aoi in self.topo.aois.items():
            if aoi.gateways:
                rep_name = min(aoi.gateways)
                self._gw(aoi_id).node = self.topo.nodes[rep_name].pid
            else:
                self._gw(aoi_id).node = None

    @staticmethod
    def _pair_key(a: PersistentId, b: PersistentId) -> tuple[str, str]:
        ca, cb = a.canonical(), b.canonical()
        return (ca, cb) if ca <= cb else (cb, ca)

    def _bump_epoch(self) -> None:
        self.epoch += 1

    def _component_of(self) -> dict[PersistentId, frozenset]:
        out: dict[PersistentId, frozenset] = {}
        seen: set[PersistentId] = set()
        for aoi_id in sorted(self.topo.aois):
            if aoi_id in seen:
                continue
            comp = {aoi_id}
            frontier = [aoi_id]
            while frontier:
                cur = frontier.pop()
                for peer in self.topo.aoi(cur).neighbors:
                    if peer not in comp:
                        comp.add(peer)
                        frontier.append(peer)
            frozen = frozenset(comp)
            for member in comp:
                out[member] = frozen
            seen |= comp
        return out

    def _after_reach_change(self, before: dict[PersistentId, frozenset]) -> None:
        """Refresh elections, isolate shrunken components, re-route."""
        refresh_topology(self.topo)
        after = self._component_of()
        for aoi_id in sorted(self.topo.aois):
            aoi = self.topo.aoi(aoi_id)
            pre = before.get(aoi_id)
            if pre is None:
                continue
            if after[aoi_id] < pre and aoi.shard.mode is ShardMode.CONNECTED:
                aoi.shard.enter_isolated()
                self.trace.emit(f"isolated {aoi_id.canonical()}")
        self._sync_pids()
        self._bump_epoch()
        self._rebalance()

    # -- pod movement --

    def _count_drop(self, aoi_id: PersistentId, pod: Pod, reason: str,
                    payload_was_queued: bool = False) -> None:
        if pod.priority.cls is TrafficClass.CONTROL:
            self.metrics.dropped_control += 1
            if payload_was_queued:
                self.metrics.control_drops_with_payload_queued += 1
        else:
            self.metrics.dropped_payload += 1
        by_reason = self.metrics.drops_by_reason
        by_reason[reason] = by_reason.get(reason, 0) + 1
        self.drops.append(DropRecord(self.trace.now, aoi_id, pod, reason))
        self.trace.emit(
            f"drop {pod.id.canonical()} pri={pod.priority.render()} "
            f"at={aoi_id.canonical()} reason={reason}"
        )

    def _store(self, aoi_id: PersistentId, pod: Pod) -> None:
        gw = self._gw(aoi_id)
        evicted = store_custody(gw.custody, pod)
        self.metrics.stores += 1
        self.trace.emit(f"store {pod.id.canonical()} {aoi_id.canonical()}")
        for victim in evicted:
            self.metrics.evictions += 1
            self.trace.emit(
                f"evict {victim.id.canonical()} at={aoi_id.canonical()}"
            )

    def _deliver(self, aoi_id: PersistentId, pod: Pod) -> None:
        self.delivered_ids.add(pod.id)
        self.metrics.delivered += 1
        self._hop_totals += pod.hops
        self.deliveries[pod.id.canonical()] = pod.hops
        self.delivery_order.append(pod.id.canonical())
        self.trace.emit(f"deliver {pod.id.canonical()} {aoi_id.canonical()}")
        gw = self._gw(aoi_id)
        binding = gw.surrogates.get(pod.dst)
        if binding is not None:
            self.trace.emit(
                f"relay {binding.gateway.canonical()}→"
                f"{binding.device.canonical()}"
            )

    def _dst_present(self, aoi_id: PersistentId, dst: PersistentId) -> bool:
        """Is the destination physically deliverable inside this area?"""
        name = self.pid_to_name.get(dst)
        if name is None:
            return False
        node = self.topo.nodes[name]
        areas = self.topo.subtree(aoi_id)
        if not any(m in areas for m in node.memberships):
            return False
        if node.kind is NodeKind.CONSTRAINED:
            return dst in self._gw(aoi_id).surrogates
        return True

    def _try_deliver(self, aoi_id: PersistentId, pod: Pod) -> None:
        if self._dst_present(aoi_id, pod.dst):
            self._deliver(aoi_id, pod)
        else:
            self._store(aoi_id, pod)

    def _route_and_enqueue(self, aoi_id: PersistentId, pod: Pod) -> None:
        gw = self._gw(aoi_id)
        decision = next_aoi(gw, self.topo, pod, self.policy)
        if isinstance(decision, Deliver):
            self._try_deliver(aoi_id, pod)
            return
        if isinstance(decision, Store):
            self._store(aoi_id, pod)
            return
        assert isinstance(decision, Forward)
        commit_probe(gw, decision.dest)
        if decision.probed is not None:
            self.metrics.probes += 1
            self.trace.emit(
                f"probe {pod.id.canonical()} alt={decision.probed.canonical()}"
            )
        for i, neighbor in enumerate(decision.targets):
            if i > 0:
                self.metrics.copies += 1
            dropped = enqueue(gw, neighbor, pod, decision.dest)
            if dropped is not None:
                self._count_drop(aoi_id, dropped.pod, dropped.reason,
                                 dropped.payload_was_queued)

    def _rebalance(self) -> None:
        """Re-route everything queued after topology or record changes."""
        for aoi_id in sorted(self.gateways):
            gw = self.gateways[aoi_id]
            entries: list[routing.QueueEntry] = []
            for neighbor in sorted(gw.queues):
                entries.extend(gw.queues[neighbor].drain())
            entries.sort(key=lambda e: e.sort_key())
            for entry in entries:
                self._route_and_enqueue(aoi_id, entry.pod)

    def _deliverable(self, origin: PersistentId, dst: PersistentId) -> bool:
        try:
            result = resolve(self.topo.shards(), dst, origin,
                             neighbors=self.topo.neighbor_map())
        except (NotFound, Unreachable):
            return False
        home = result.record.home_aoi
        if home not in self.topo.aois:
            return False
        if not aoi_reachable(self.topo, origin, home):
            return False
        return self._dst_present(home, dst)

    def _flush_pass(self) -> None:
        for aoi_id in sorted(self.gateways):
            gw = self.gateways[aoi_id]
            for dst in gw.custody.destinations():
                if not self._deliverable(aoi_id, dst):
                    continue
                pods = flush_custody(gw.custody, dst)
                if not pods:
                    continue
                self.metrics.flushes += len(pods)
                self.trace.emit(
                    f"flush {dst.canonical()} n={len(pods)}"
                )
                for pod in pods:
                    self._route_and_enqueue(aoi_id, pod)

    def _crossing_succeeds(self, a: PersistentId, b: PersistentId) -> bool:
        key = self._pair_key(a, b)
        rate = self._loss_rate.get(key, 1.0)
        if rate >= 1.0:
            return True
        return self._loss_rng[key].random() < rate

    def _dispatch_pass(self) -> None:
        arrivals: list[tuple[PersistentId, Pod, PersistentId]] = []
        for aoi_id in sorted(self.gateways):
            gw = self.gateways[aoi_id]
            aoi = self.topo.aoi(aoi_id)
            for departure in dispatch_tick(gw):
                neighbor = departure.neighbor
                entry = departure.entry
                if neighbor not in aoi.neighbors:
                    # the adjacency vanished between rebalance and now;
                    # keep the pod by re-routing it
                    self._route_and_enqueue(aoi_id, entry.pod)
                    continue
                if self._crossing_succeeds(aoi_id, neighbor):
                    if self.policy.learning:
                        report_outcome(gw.route_table, entry.dest, neighbor,
                                       True, self.policy.ema_alpha)
                    self.trace.emit(
                        f"fwd {entry.pod.id.canonical()} "
                        f"{aoi_id.canonical()}→{neighbor.canonical()}"
                    )
                    arrivals.append(
                        (neighbor, entry.pod.with_hop(neighbor), entry.dest)
                    )
                else:
                    if self.policy.learning:
                        report_outcome(gw.route_table, entry.dest, neighbor,
                                       False, self.policy.ema_alpha)
                    self._count_drop(aoi_id, entry.pod, "link")
        for to_aoi, pod, _dest in arrivals:
            if pod.id in self.delivered_ids:
                self._count_drop(to_aoi, pod, "duplicate")
                continue
            gw = self._gw(to_aoi)
            if gw.seen.check_and_add(pod.id, self.epoch):
                self._count_drop(to_aoi, pod, "duplicate")
                continue
            self._route_and_enqueue(to_aoi, pod)

    # -- event handlers --

    def _resolve_alias(self, alias: str) -> PersistentId:
        found = self.aliases.get(alias)
        if found is None:
            raise NoSuchAoI(f"no such area alias: {alias!r}")
        return found

    def _ev_inject(self, args: Mapping[str, object],
                   priority: Optional[Priority] = None,
                   size: Optional[int] = None) -> None:
        src_name, dst_name = str(args["src"]), str(args["dst"])
        src, dst = self.topo.nodes[src_name], self.topo.nodes[dst_name]
        if src.pid is None:
            raise InvalidScenario(f"inject: src {src_name!r} has no id yet")
        if dst.pid is None:
            raise InvalidScenario(f"inject: dst {dst_name!r} has no id yet")
        if src.primary_aoi is None:
            raise InvalidScenario(f"inject: src {src_name!r} is unassociated")
        pri = priority or Priority.parse(str(args.get("priority", "payload:4")))
        nbytes = size if size is not None else int(args.get("bytes", 0))
        counter = self._inject_counter
        self._inject_counter += 1
        rng = random.Random(derive_seed(self.scenario.seed, "payload", counter))
        payload = rng.randbytes(nbytes)
        parent = PersistentId(
            src.pid.prefix + (src.pid.suffix,), f"f{counter}"
        )
        manifest, pods = shard_payload(
            parent, payload, priority=pri, src=src.pid, dst=dst.pid,
            pod_size=self.scenario.pod_size,
        )
        self.trace.emit(manifest.trace_line())
        origin = src.primary_aoi
        for pod in pods:
            self.trace.emit(pod.trace_line())
            self.metrics.injected += 1
            pod = pod.with_hop(origin)
            gw = self._gw(origin)
            gw.seen.check_and_add(pod.id, self.epoch)
            self._route_and_enqueue(origin, pod)

    def _ev_flood(self, args: Mapping[str, object], sub: int) -> None:
        per_tick = int(args["per_tick"])
        key = tuple(str(p) for p in args.get("pattern", ["payload:4"]))
        pattern = self._patterns.get(key)
        if pattern is None:
            pattern = self._patterns[key] = [Priority.parse(p) for p in key]
        size = int(args.get("size", 1))
        for i in range(per_tick):
            index = sub * per_tick + i
            pri = pattern[index % len(pattern)]
            self._ev_inject(args, priority=pri, size=size)

    def apply_move(self, name: str, to_aoi: PersistentId,
                   update_dpin: bool = True) -> None:
        """Relocate a node: reach moves first, then membership, then
        (only when ``update_dpin``) the identifier record's home area.

        With ``update_dpin`` off the record keeps pointing at the old
        home, modeling a device that moved before its location update
        propagated.
        """
        node = self.topo.nodes[name]
        aoi = self.topo.aoi(to_aoi)  # NoSuchAoI when absent
        targets = sorted(m for m in aoi.members if m != name)
        if not targets:
            raise NoSuchAoI(f"area {to_aoi} has no members to reach")
        before = self._component_of()
        for former_id in list(node.memberships):
            former = self.topo.aoi(former_id)
            former.members.discard(name)
            former.gateways.discard(name)
        node.memberships = []
        node.primary_aoi = None
        for peer in list(node.reach):
            self.topo.remove_link(name, peer)
        for member in targets:
            self.topo.add_link(name, member)
        if node.pid is None:
            join_aoi(self.topo, name, to_aoi)
        else:
            aoi.members.add(name)
            node.memberships.append(to_aoi)
            node.primary_aoi = to_aoi
            if update_dpin:
                relocate_record(self.topo, name, to_aoi)
        self._after_reach_change(before)

    def _ev_move(self, args: Mapping[str, object]) -> None:
        name = str(args["node"])
        to_aoi = self._resolve_alias(str(args["to"]))
        update_dpin = bool(args.get("update_dpin", True))
        self.trace.emit(
            f"move {name} to={to_aoi.canonical()} "
            f"dpin={1 if update_dpin else 0}"
        )
        self.apply_move(name, to_aoi, update_dpin)

    def _ev_disconnect(self, args: Mapping[str, object]) -> None:
        name = str(args["node"])
        node = self.topo.nodes[name]
        self.trace.emit(f"disconnect {name}")
        before = self._component_of()
        for former_id in list(node.memberships):
            former = self.topo.aoi(former_id)
            former.members.discard(name)
            former.gateways.discard(name)
        node.memberships = []
        node.primary_aoi = None
        for peer in list(node.reach):
            self.topo.remove_link(name, peer)
        self._after_reach_change(before)

    def _ev_join(self, args: Mapping[str, object]) -> None:
        name = str(args["node"])
        aoi_id = self._resolve_alias(str(args["aoi"]))
        aoi = self.topo.aoi(aoi_id)
        before = self._component_of()
        for member in sorted(aoi.members):
            if member != name and not self.topo.mutual_reach(name, member):
                self.topo.add_link(name, member)
        self.trace.emit(f"join {name} {aoi_id.canonical()}")
        join_aoi(self.topo, name, aoi_id)
        self._after_reach_change(before)

    def _ev_link(self, args: Mapping[str, object], up: bool) -> None:
        a, b = str(args["a"]), str(args["b"])
        before = self._component_of()
        if up:
            self.trace.emit(f"linkup {a} {b}")
            self.topo.add_link(a, b)
        else:
            self.trace.emit(f"linkdown {a} {b}")
            self.topo.remove_link(a, b)
            shared = [
                aoi_id for aoi_id, aoi in sorted(self.topo.aois.items())
                if a in aoi.members and b in aoi.members
            ]
            for aoi_id in shared:
                base = self._alias_of(aoi_id)
                for i, part in enumerate(split_components(self.topo, aoi_id)):
                    self.aliases[f"{base}+part{i}"] = part.id
                    self.trace.emit(
                        f"split {aoi_id.canonical()} "
                        f"new={part.id.canonical()} "
                        f"members={len(part.members)}"
                    )
        self._after_reach_change(before)

    def _alias_of(self, aoi_id: PersistentId) -> str:
        for alias, pid in self.aliases.items():
            if pid == aoi_id:
                return alias
        return aoi_id.suffix

    def apply_partition(self, edges: set[tuple[PersistentId, PersistentId]],
                        up: bool) -> None:
        """Cut or restore area adjacencies.

        Cutting removes every node link witnessing each adjacency (and
        remembers them); restoring re-adds exactly those links, merges
        the two shards, and validates what was flagged while apart.
        """
        for a, b in sorted(edges, key=lambda e: self._pair_key(e[0], e[1])):
            key = self._pair_key(a, b)
            if up:
                removed = self._cut_links.pop(key, None)
                if removed is None:
                    raise NoSuchEdge(f"edge was never cut: {key}")
                before = self._component_of()
                for x, y in removed:
                    self.topo.add_link(x, y)
                self.trace.emit(f"heal {a.canonical()} {b.canonical()}")
                self._after_reach_change(before)
                self._merge_areas(a, b)
            else:
                aoi_a = self.topo.aoi(a)
                aoi_b = self.topo.aoi(b)
                if b not in aoi_a.neighbors:
                    raise NoSuchEdge(
                        f"{a.canonical()} and {b.canonical()} share no edge"
                    )
                removed: list[tuple[str, str]] = []
                for ma in sorted(aoi_a.members):
                    for mb in sorted(aoi_b.members):
                        if self.topo.mutual_reach(ma, mb):
                            removed.append((ma, mb))
                before = self._component_of()
                for x, y in removed:
                    self.topo.remove_link(x, y)
                self._cut_links.setdefault(key, []).extend(removed)
                self.trace.emit(f"cut {a.canonical()} {b.canonical()}")
                self._after_reach_change(before)

    def _merge_areas(self, a: PersistentId, b: PersistentId) -> None:
        aoi_a, aoi_b = self.topo.aoi(a), self.topo.aoi(b)
        merge_shards(aoi_a.shard, aoi_b.shard)
        self.trace.emit(f"merge {a.canonical()} {b.canonical()}")
        for aoi in (aoi_a, aoi_b):
            passed, evicted = aoi.shard.validate_flagged()
            if passed or evicted:
                self.trace.emit(
                    f"validated {aoi.id.canonical()} "
                    f"passed={passed} evicted={evicted}"
                )
        self._sync_pids()
        self._bump_epoch()
        self._rebalance()

    def _ev_cut(self, args: Mapping[str, object], up: bool) -> None:
        a = self._resolve_alias(str(args["a"]))
        b = self._resolve_alias(str(args["b"]))
        self.apply_partition({(a, b)}, up)

    def _ev_merge(self, args: Mapping[str, object]) -> None:
        a = self._resolve_alias(str(args["a"]))
        b = self._resolve_alias(str(args["b"]))
        self._merge_areas(a, b)

    def _ev_associate(self, args: Mapping[str, object]) -> None:
        device = str(args["device"])
        gateway_name = str(args["gateway"])
        host_aoi: Optional[PersistentId] = None
        for aoi_id, aoi in sorted(self.topo.aois.items()):
            if gateway_name in aoi.gateways:
                host_aoi = aoi_id
                break
        if host_aoi is None:
            raise InvalidScenario(
                f"associate: {gateway_name!r} is not an elected gateway"
            )
        gw = self._gw(host_aoi)
        binding = odap_associate(gw, self.topo, device, gateway_name)
        self.trace.emit(f"associate {device} gw={gateway_name}")
        self.trace.emit(
            f"relay {binding.gateway.canonical()}→{binding.device.canonical()}"
        )
        self._sync_pids()
        self._bump_epoch()

    def _ev_release(self, args: Mapping[str, object]) -> None:
        device = self.topo.nodes[str(args["device"])]
        if device.pid is None:
            raise InvalidScenario("release: device has no id")
        for gw in self.gateways.values():
            if device.pid in gw.surrogates:
                release_surrogate(gw, device.pid)
                self.trace.emit(f"release {device.name}")
                self._bump_epoch()
                return
        raise InvalidScenario(f"release: {device.name!r} holds no binding")

    def _ev_aggregate(self, args: Mapping[str, object]) -> None:
        parent = self._resolve_alias(str(args["parent"]))
        child = self._resolve_alias(str(args["child"]))
        aggregate(self.topo, parent, child)
        self.trace.emit(
            f"aggregate {parent.canonical()} {child.canonical()}"
        )
        self._bump_epoch()
        self._rebalance()

    def _ev_primary(self, args: Mapping[str, object]) -> None:
        name = str(args["node"])
        aoi_id = self._resolve_alias(str(args["aoi"]))
        declare_primary(self.topo, name, aoi_id)
        self.trace.emit(f"primary {name} {aoi_id.canonical()}")
        self._bump_epoch()
        self._rebalance()

    def _apply(self, event: SimEvent) -> None:
        args = event.args
        label = event.label
        if event.kind is EventKind.TICK:
            self._flush_pass()
            self._dispatch_pass()
            return
        if label == "inject":
            self._ev_inject(args)
        elif label == "flood":
            self._ev_flood(args, int(args["_sub"]))  # type: ignore[index]
        elif label == "move":
            self._ev_move(args)
        elif label == "disconnect":
            self._ev_disconnect(args)
        elif label == "join":
            self._ev_join(args)
        elif label == "linkup":
            self._ev_link(args, up=True)
        elif label == "linkdown":
            self._ev_link(args, up=False)
        elif label == "cut":
            self._ev_cut(args, up=False)
        elif label == "heal":
            self._ev_cut(args, up=True)
        elif label == "merge":
            self._ev_merge(args)
        elif label == "associate":
            self._ev_associate(args)
        elif label == "release":
            self._ev_release(args)
        elif label == "aggregate":
            self._ev_aggregate(args)
        elif label == "primary":
            self._ev_primary(args)
        elif label == "mark":
            self.trace.emit(f"mark {args['label']}")

    def run(self) -> SimReport:
        if self._ran:
            raise RuntimeError("a simulation runs once; build a fresh one")
        self._ran = True
        sc = self.scenario
        self.trace.emit(f"start seed={sc.seed} duration={sc.duration}")
        try:
            for event in self._events:
                self.trace.now = event.time
                self._apply(event)
        except ScenarioError:
            raise
        except TransientNetError as err:
            raise InvalidScenario(
                f"at t={self.trace.now}: {err}"
            ) from err
        self.trace.now = sc.duration
        self._finalize()
        return SimReport(
            trace=self.trace,
            metrics=self.metrics,
            deliveries=dict(self.deliveries),
            delivery_order=list(self.delivery_order),
            drops=list(self.drops),
            simulation=self,
        )

    def _finalize(self) -> None:
        m = self.metrics
        m.queued_end = sum(gw.queued_pods() for gw in self.gateways.values())
        m.custody_end = sum(len(gw.custody) for gw in self.gateways.values())
        m.mean_hops = (self._hop_totals / m.delivered) if m.delivered else 0.0
        self.trace.emit(
            f"end delivered={m.delivered} dropped={m.dropped_total}"
        )


def run_scenario(scenario: Scenario) -> SimReport:
    """Build a fresh simulation for ``scenario`` and run it to the end."""
    return Simulation(scenario).run()
