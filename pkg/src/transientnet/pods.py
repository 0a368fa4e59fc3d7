"""Pods: the unit of transport.

A payload is cut into fixed-size pods, each carrying its own persistent
id minted under the sender's namespace.  A manifest names the pods in
order and pins a checksum of the whole payload, so the receiver can
detect both missing pieces and corruption.  Priorities order pods for
queueing: coordination traffic always outranks payload traffic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum
from functools import total_ordering
from typing import Iterable, Sequence

from .errors import ChecksumMismatch, MissingPods
from .identity import PersistentId, mint_id, derive_seed

DEFAULT_POD_SIZE = 4096
PRIORITY_LEVELS = 8


class TrafficClass(Enum):
    CONTROL = "control"
    PAYLOAD = "payload"


_CLASS_RANK = {TrafficClass.CONTROL: 0, TrafficClass.PAYLOAD: 1}


@total_ordering
@dataclass(frozen=True)
class Priority:
    """Two traffic classes times eight levels; lower sorts first."""

    cls: TrafficClass
    level: int

    def __post_init__(self) -> None:
        if not 0 <= self.level < PRIORITY_LEVELS:
            raise ValueError(f"priority level out of range: {self.level}")

    def rank(self) -> tuple[int, int]:
        return (_CLASS_RANK[self.cls], self.level)

    def __lt__(self, other: "Priority") -> bool:
        return self.rank() < other.rank()

    def render(self) -> str:
        return f"{self.cls.value}:{self.level}"

    @classmethod
    def parse(cls, text: str) -> "Priority":
        name, _, level = text.partition(":")
        try:
            traffic = TrafficClass(name)
            return cls(traffic, int(level))
        except ValueError as exc:
            raise ValueError(f"bad priority: {text!r}") from exc


def cmp_priority(a: Priority, b: Priority) -> int:
    """-1 when a outranks b, 0 when equal, 1 when b outranks a."""
    ra, rb = a.rank(), b.rank()
    return -1 if ra < rb else (0 if ra == rb else 1)


@dataclass(frozen=True)
class Pod:
    """One transportable slice of a payload."""

    id: PersistentId
    parent: PersistentId
    index: int
    payload: bytes
    priority: Priority
    src: PersistentId
    dst: PersistentId
    hop_log: tuple[PersistentId, ...] = ()

    def with_hop(self, aoi: PersistentId) -> "Pod":
        return replace(self, hop_log=self.hop_log + (aoi,))

    @property
    def hops(self) -> int:
        """Inter-area forwards taken so far (origin entry excluded)."""
        return max(0, len(self.hop_log) - 1)

    def trace_line(self) -> str:
        return (
            f"pod {self.id.canonical()} idx={self.index} "
            f"pri={self.priority.render()} "
            f"src={self.src.canonical()} dst={self.dst.canonical()}"
        )


@dataclass(frozen=True)
class PodManifest:
    """Names every pod of one payload, in order, with a checksum."""

    parent: PersistentId
    pod_ids: tuple[PersistentId, ...]
    total_bytes: int
    checksum: str

    def trace_line(self) -> str:
        return (
            f"manifest {self.parent.canonical()} {len(self.pod_ids)} "
            f"{self.total_bytes} {self.checksum}"
        )


def checksum(payload: bytes) -> str:
    return hashlib.blake2b(payload, digest_size=16).hexdigest()


def _pod_id(src: PersistentId, parent: PersistentId, index: int) -> PersistentId:
    """Pod ids live in the sender's namespace, below the sender's own id."""
    prefix = src.prefix + (src.suffix,)
    suffix = f"{parent.suffix}.{index}"
    if len(suffix) <= 128:
        return PersistentId(prefix, suffix)
    return mint_id(prefix, derive_seed(parent.canonical(), index))


def shard_payload(parent: PersistentId, payload: bytes, *,
                  priority: Priority, src: PersistentId, dst: PersistentId,
                  pod_size: int = DEFAULT_POD_SIZE,
                  ) -> tuple[PodManifest, list[Pod]]:
    """Cut ``payload`` into pods of at most ``pod_size`` bytes.

    An empty payload still produces one (empty) pod so that the transfer
    remains observable end to end.
    """
    if pod_size < 1:
        raise ValueError("pod_size must be at least 1")
    pieces = [payload[i:i + pod_size] for i in range(0, len(payload), pod_size)]
    if not pieces:
        pieces = [b""]
    pods = [
        Pod(
            id=_pod_id(src, parent, i),
            parent=parent,
            index=i,
            payload=piece,
            priority=priority,
            src=src,
            dst=dst,
        )
        for i, piece in enumerate(pieces)
    ]
    manifest = PodManifest(
        parent=parent,
        pod_ids=tuple(p.id for p in pods),
        total_bytes=len(payload),
        checksum=checksum(payload),
    )
    return manifest, pods


def reassemble(manifest: PodManifest, pods: Iterable[Pod]) -> bytes:
    """Rebuild the payload; order and duplicates are the callee's problem.

    Raises MissingPods naming exactly the absent ids, and
    ChecksumMismatch when the rebuilt bytes do not hash to the manifest
    checksum.
    """
    by_id: dict[PersistentId, Pod] = {}
    for pod in pods:
        by_id.setdefault(pod.id, pod)
    missing = [pid for pid in manifest.pod_ids if pid not in by_id]
    if missing:
        raise MissingPods(missing)
    payload = b"".join(by_id[pid].payload for pid in manifest.pod_ids)
    if checksum(payload) != manifest.checksum or len(payload) != manifest.total_bytes:
        raise ChecksumMismatch(
            f"payload of {manifest.parent} does not match its manifest"
        )
    return payload
