"""Propagation machinery: queues, custody, and route reinforcement.

Each area's gateway collective keeps one priority queue per neighboring
area.  Queues have finite capacity; when one overflows, the pod with the
least claim to the slot goes: the lowest priority present, newest
arrival last among equals.  That is how a constrained network degrades:
payload before coordination, low levels before high.

Custody is the fallback when a destination cannot be resolved or
reached: pods wait with a holder until the destination comes back, then
re-enter routing in priority order.  Route scores are an exponential
moving average of forwarding outcomes per (destination area, neighbor).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .identity import PersistentId
from .pods import Pod, Priority, TrafficClass

DEFAULT_ALPHA = 0.2
DEFAULT_PROBE_INTERVAL = 16
INITIAL_SCORE = 0.5
DEFAULT_SEEN_CAPACITY = 4096


@dataclass(frozen=True)
class PropagationPolicy:
    """Knobs governing propagation behavior for one run."""

    replication_factor: int = 1
    learning: bool = False
    ema_alpha: float = DEFAULT_ALPHA
    probe_interval: int = DEFAULT_PROBE_INTERVAL

    def __post_init__(self) -> None:
        if self.replication_factor < 1:
            raise ValueError("replication_factor must be >= 1")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must be in (0, 1]")
        if self.probe_interval < 2:
            raise ValueError("probe_interval must be >= 2")


@dataclass
class RouteScore:
    """Learned quality of sending toward ``dest_aoi`` via ``next_aoi``."""

    dest_aoi: PersistentId
    next_aoi: PersistentId
    score: float = INITIAL_SCORE
    successes: int = 0
    failures: int = 0


class RouteTable:
    """Per-gateway map of (destination area, neighbor) to a score."""

    def __init__(self) -> None:
        self._entries: dict[tuple[PersistentId, PersistentId], RouteScore] = {}

    def entry(self, dest: PersistentId, nxt: PersistentId) -> RouteScore:
        key = (dest, nxt)
        found = self._entries.get(key)
        if found is None:
            found = RouteScore(dest, nxt)
            self._entries[key] = found
        return found

    def score(self, dest: PersistentId, nxt: PersistentId) -> float:
        found = self._entries.get((dest, nxt))
        return found.score if found is not None else INITIAL_SCORE

    def entries(self) -> Iterable[RouteScore]:
        return self._entries.values()


def report_outcome(table: RouteTable, dest: PersistentId, nxt: PersistentId,
                   success: bool, alpha: float = DEFAULT_ALPHA) -> RouteScore:
    """Fold one forwarding outcome into the score for (dest, next)."""
    entry = table.entry(dest, nxt)
    entry.score = (1.0 - alpha) * entry.score + alpha * (1.0 if success else 0.0)
    if success:
        entry.successes += 1
    else:
        entry.failures += 1
    return entry


@dataclass(frozen=True)
class QueueEntry:
    """A pod waiting in a neighbor queue, with its routing target."""

    pod: Pod
    dest: PersistentId  # resolved home area at decision time
    seq: int

    def sort_key(self) -> tuple[tuple[int, int], int]:
        return (self.pod.priority.rank(), self.seq)


@dataclass(frozen=True)
class Dropped:
    """One pod pushed out of a queue, with the audit context."""

    pod: Pod
    reason: str
    payload_was_queued: bool  # any payload-class pod present when dropped


class PodQueue:
    """Priority-ordered queue with stable FIFO inside each priority."""

    def __init__(self) -> None:
        self._entries: list[tuple[tuple[tuple[int, int], int], QueueEntry]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[QueueEntry]:
        return [entry for _, entry in self._entries]

    def _has_payload_class(self) -> bool:
        return any(
            entry.pod.priority.cls is TrafficClass.PAYLOAD
            for _, entry in self._entries
        )

    def push(self, entry: QueueEntry, capacity: int) -> Optional[Dropped]:
        """Insert; when over capacity, shed the lowest-priority pod.

        The shed pod may be the newcomer itself.  Among equal priorities
        the latest arrival goes, so survivors are the highest-priority,
        earliest-arrival set.
        """
        bisect.insort(self._entries, (entry.sort_key(), entry))
        if len(self._entries) <= capacity:
            return None
        _, victim = self._entries.pop()
        payload_present = self._has_payload_class()
        return Dropped(victim.pod, "capacity", payload_present)

    def pop(self) -> Optional[QueueEntry]:
        if not self._entries:
            return None
        _, entry = self._entries.pop(0)
        return entry

    def drain(self) -> list[QueueEntry]:
        drained = [entry for _, entry in self._entries]
        self._entries.clear()
        return drained


@dataclass(frozen=True)
class HeldPod:
    pod: Pod
    seq: int


class CustodyStore:
    """Pods parked for destinations that cannot currently be reached."""

    def __init__(self, holder: PersistentId, capacity: int = 1024):
        self.holder = holder
        self.capacity = capacity
        self._held: dict[PersistentId, list[HeldPod]] = {}
        self._seq = 0

    def __len__(self) -> int:
        return sum(len(v) for v in self._held.values())

    def destinations(self) -> list[PersistentId]:
        return sorted(self._held.keys())

    def held_for(self, dst: PersistentId) -> list[Pod]:
        return [h.pod for h in self._held.get(dst, [])]

    def store(self, pod: Pod) -> list[Pod]:
        """Park a pod; evict lowest-priority-then-oldest when full."""
        self._held.setdefault(pod.dst, []).append(HeldPod(pod, self._seq))
        self._seq += 1
        evicted: list[Pod] = []
        while len(self) > self.capacity:
            worst_dst: Optional[PersistentId] = None
            worst: Optional[HeldPod] = None
            for dst in sorted(self._held.keys()):
                for held in self._held[dst]:
                    if worst is None or (
                        held.pod.priority.rank(), -held.seq
                    ) > (worst.pod.priority.rank(), -worst.seq):
                        worst, worst_dst = held, dst
            assert worst is not None and worst_dst is not None
            self._held[worst_dst].remove(worst)
            if not self._held[worst_dst]:
                del self._held[worst_dst]
            evicted.append(worst.pod)
        return evicted

    def flush(self, dst: PersistentId) -> list[Pod]:
        """Release all pods held for ``dst``, best priority first."""
        held = self._held.pop(dst, [])
        held.sort(key=lambda h: (h.pod.priority.rank(), h.seq))
        return [h.pod for h in held]


class SeenSet:
    """Bounded FIFO memory of pod ids, scoped by topology epoch.

    A pod id is a duplicate only if it was already seen in the current
    epoch; after the topology or any record changes, pods may
    legitimately revisit an area while being re-routed, so older entries
    stop counting.
    """

    def __init__(self, capacity: int = DEFAULT_SEEN_CAPACITY):
        self.capacity = capacity
        self._order: list[PersistentId] = []
        self._epoch: dict[PersistentId, int] = {}

    def check_and_add(self, pod_id: PersistentId, epoch: int) -> bool:
        """Record the sighting; True when it was already seen this epoch."""
        seen = self._epoch.get(pod_id)
        if seen == epoch:
            return True
        if seen is None:
            self._order.append(pod_id)
            if len(self._order) > self.capacity:
                oldest = self._order.pop(0)
                self._epoch.pop(oldest, None)
        self._epoch[pod_id] = epoch
        return False


@dataclass
class GatewayState:
    """Routing state of one area's gateway collective.

    ``node`` is the representative border node (the lexicographically
    smallest elected gateway); queues, scores, custody, and the dedup
    memory are shared by the collective.
    """

    aoi: PersistentId
    node: Optional[PersistentId] = None
    bandwidth: int = 4
    queue_capacity: int = 64
    queues: dict[PersistentId, PodQueue] = field(default_factory=dict)
    route_table: RouteTable = field(default_factory=RouteTable)
    probe_counts: dict[PersistentId, int] = field(default_factory=dict)
    surrogates: dict = field(default_factory=dict)
    custody: CustodyStore = None  # type: ignore[assignment]
    seen: SeenSet = field(default_factory=SeenSet)
    _seq: int = 0

    def __post_init__(self) -> None:
        if self.custody is None:
            self.custody = CustodyStore(self.aoi)

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def queue_for(self, neighbor: PersistentId) -> PodQueue:
        queue = self.queues.get(neighbor)
        if queue is None:
            queue = PodQueue()
            self.queues[neighbor] = queue
        return queue

    def queued_pods(self) -> int:
        return sum(len(q) for q in self.queues.values())


def enqueue(gw: GatewayState, neighbor: PersistentId, pod: Pod,
            dest: PersistentId) -> Optional[Dropped]:
    """Place a pod in the queue toward ``neighbor``; returns any drop."""
    entry = QueueEntry(pod, dest, gw.next_seq())
    return gw.queue_for(neighbor).push(entry, gw.queue_capacity)


@dataclass(frozen=True)
class Departure:
    """One pod leaving a gateway this tick."""

    neighbor: PersistentId
    entry: QueueEntry


def dispatch_tick(gw: GatewayState) -> list[Departure]:
    """Release up to ``bandwidth`` pods per neighbor queue, best first."""
    out: list[Departure] = []
    for neighbor in sorted(gw.queues.keys()):
        queue = gw.queues[neighbor]
        for _ in range(gw.bandwidth):
            entry = queue.pop()
            if entry is None:
                break
            out.append(Departure(neighbor, entry))
    return out


def store_custody(store: CustodyStore, pod: Pod) -> list[Pod]:
    """Park a pod with the holder; returns pods evicted to make room."""
    return store.store(pod)


def flush_custody(store: CustodyStore, dst: PersistentId) -> list[Pod]:
    """Release pods held for ``dst`` in priority order.

    Callers check deliverability first; flushing an unknown destination
    is a no-op returning an empty list.
    """
    return store.flush(dst)
