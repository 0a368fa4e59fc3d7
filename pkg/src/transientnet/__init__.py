"""Persistent-identifier networking over transient mobile topologies.

A protocol library plus a deterministic discrete-tick simulator: nodes
carry permanent identifiers minted under delegated namespaces, areas of
influence resolve them through distributed shards, and gateways move
payload pods between areas under priority governance while the topology
shifts underneath.
"""

from .aoi import (
    AoITopology,
    AreaOfInfluence,
    Node,
    NodeKind,
    aggregate,
    declare_primary,
    elect_gateways,
    join_aoi,
    refresh_topology,
    scan_and_handshake,
    split_components,
)
from .dpin import PinShard, ResolutionResult, ShardMode, merge, resolve, update_location
from .errors import (
    ChecksumMismatch,
    InvalidScenario,
    MissingPods,
    NotFound,
    ParseError,
    TransientNetError,
    Unreachable,
    ValidationError,
)
from .gateway import (
    Deliver,
    Forward,
    LegacyName,
    Store,
    bridge_legacy,
    next_aoi,
    odap_associate,
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
    verify_record,
)
from .pods import Pod, PodManifest, Priority, TrafficClass, reassemble, shard_payload
from .routing import (
    CustodyStore,
    GatewayState,
    PodQueue,
    PropagationPolicy,
    RouteTable,
    SeenSet,
)
from .scenario import dump_scenario, load_scenario, parse_scenario
from .simcore import (
    AoiSpec,
    EventSpec,
    LinkSpec,
    LossSpec,
    MetricsSummary,
    NodeSpec,
    Scenario,
    SimReport,
    Simulation,
    Trace,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "AoITopology", "AreaOfInfluence", "Node", "NodeKind", "aggregate",
    "declare_primary", "elect_gateways", "join_aoi", "refresh_topology",
    "scan_and_handshake", "split_components",
    "PinShard", "ResolutionResult", "ShardMode", "merge", "resolve",
    "update_location",
    "ChecksumMismatch", "InvalidScenario", "MissingPods", "NotFound",
    "ParseError", "TransientNetError", "Unreachable", "ValidationError",
    "Deliver", "Forward", "LegacyName", "Store", "bridge_legacy",
    "next_aoi", "odap_associate",
    "DelegationRegistry", "EntityKind", "IdentifierRecord", "KeyStore",
    "PersistentId", "Signer", "derive_seed", "mint_id", "sign_record",
    "verify_record",
    "Pod", "PodManifest", "Priority", "TrafficClass", "reassemble",
    "shard_payload",
    "CustodyStore", "GatewayState", "PodQueue", "PropagationPolicy",
    "RouteTable", "SeenSet",
    "dump_scenario", "load_scenario", "parse_scenario",
    "AoiSpec", "EventSpec", "LinkSpec", "LossSpec", "MetricsSummary",
    "NodeSpec", "Scenario", "SimReport", "Simulation", "Trace",
    "run_scenario",
    "__version__",
]
