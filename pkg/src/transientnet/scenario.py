"""Scenario files: TOML with a versioned ``format`` marker.

The grammar is documented in the README.  Parsing is strict: unknown
top-level keys, missing fields, and type mismatches all fail with the
offending field path, so a typo never silently changes a run.
"""

from __future__ import annotations

import os
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib  # type: ignore[no-redef]

from .aoi import NodeKind
from .errors import ParseError, ValidationError
from .pods import DEFAULT_POD_SIZE
from .routing import PropagationPolicy
from .simcore import (
    AoiSpec,
    EventSpec,
    LinkSpec,
    LossSpec,
    NodeSpec,
    Scenario,
    check_scenario,
)

FORMAT_VERSION = 1

_TOP_KEYS = frozenset({
    "format", "name", "seed", "duration", "pod_size", "queue_capacity",
    "bandwidth", "custody_capacity", "policy", "nodes", "aois", "links",
    "losses", "events",
})

_MISSING = object()


def _get(table: Mapping[str, Any], key: str, types, path: str,
         default: Any = _MISSING) -> Any:
    if key not in table:
        if default is _MISSING:
            raise ValidationError(f"{path}.{key}: required")
        return default
    value = table[key]
    if types is int and isinstance(value, bool):
        raise ValidationError(f"{path}.{key}: expected integer, got bool")
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, types):
        want = types.__name__ if isinstance(types, type) else "value"
        raise ValidationError(
            f"{path}.{key}: expected {want}, got {type(value).__name__}"
        )
    return value


def _table_list(data: Mapping[str, Any], key: str) -> list:
    value = data.get(key, [])
    if not isinstance(value, list) or any(
        not isinstance(item, dict) for item in value
    ):
        raise ValidationError(f"{key}: expected an array of tables")
    return value


def _node_kind(raw: str, path: str) -> NodeKind:
    for kind in NodeKind:
        if kind.value == raw:
            return kind
    raise ValidationError(
        f"{path}.kind: expected one of "
        f"{sorted(k.value for k in NodeKind)}, got {raw!r}"
    )


def parse_scenario(text: str, *, name: str = "scenario") -> Scenario:
    """Parse scenario text into a fully validated :class:`Scenario`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ParseError(str(err)) from err

    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ValidationError(f"unknown keys: {', '.join(unknown)}")
    version = _get(data, "format", int, "scenario")
    if version != FORMAT_VERSION:
        raise ValidationError(
            f"format: expected {FORMAT_VERSION}, got {version}"
        )

    policy_raw = data.get("policy", {})
    if not isinstance(policy_raw, dict):
        raise ValidationError("policy: expected a table")
    unknown = sorted(set(policy_raw) - {
        "replication_factor", "learning", "ema_alpha", "probe_interval",
    })
    if unknown:
        raise ValidationError(f"policy: unknown keys: {', '.join(unknown)}")
    try:
        policy = PropagationPolicy(
            replication_factor=_get(policy_raw, "replication_factor", int,
                                    "policy", 1),
            learning=_get(policy_raw, "learning", bool, "policy", False),
            ema_alpha=_get(policy_raw, "ema_alpha", float, "policy", 0.2),
            probe_interval=_get(policy_raw, "probe_interval", int,
                                "policy", 16),
        )
    except ValueError as err:
        raise ValidationError(f"policy: {err}") from err

    nodes = []
    for i, raw in enumerate(_table_list(data, "nodes")):
        path = f"nodes[{i}]"
        nodes.append(NodeSpec(
            name=_get(raw, "name", str, path),
            kind=_node_kind(_get(raw, "kind", str, path, "full"), path),
        ))

    aois = []
    for i, raw in enumerate(_table_list(data, "aois")):
        path = f"aois[{i}]"
        members = _get(raw, "members", list, path)
        if any(not isinstance(m, str) for m in members):
            raise ValidationError(f"{path}.members: expected names")
        aois.append(AoiSpec(
            name=_get(raw, "name", str, path),
            members=tuple(members),
            protocol=_get(raw, "protocol", str, path, "adhoc"),
            mesh=_get(raw, "mesh", bool, path, True),
        ))

    links = []
    for i, raw in enumerate(_table_list(data, "links")):
        path = f"links[{i}]"
        links.append(LinkSpec(
            a=_get(raw, "a", str, path),
            b=_get(raw, "b", str, path),
        ))

    losses = []
    for i, raw in enumerate(_table_list(data, "losses")):
        path = f"losses[{i}]"
        losses.append(LossSpec(
            a=_get(raw, "a", str, path),
            b=_get(raw, "b", str, path),
            success=_get(raw, "success", float, path),
        ))

    events = []
    for i, raw in enumerate(_table_list(data, "events")):
        path = f"events[{i}]"
        time = _get(raw, "time", int, path)
        kind = _get(raw, "kind", str, path)
        args = {k: v for k, v in raw.items() if k not in ("time", "kind")}
        events.append(EventSpec(time=time, kind=kind, args=args))

    scenario = Scenario(
        name=_get(data, "name", str, "scenario", name),
        seed=_get(data, "seed", int, "scenario"),
        duration=_get(data, "duration", int, "scenario"),
        nodes=tuple(nodes),
        aois=tuple(aois),
        links=tuple(links),
        losses=tuple(losses),
        events=tuple(events),
        policy=policy,
        pod_size=_get(data, "pod_size", int, "scenario", DEFAULT_POD_SIZE),
        queue_capacity=_get(data, "queue_capacity", int, "scenario", 64),
        bandwidth=_get(data, "bandwidth", int, "scenario", 4),
        custody_capacity=_get(data, "custody_capacity", int, "scenario",
                              1024),
    )
    problems = check_scenario(scenario)
    if problems:
        raise ValidationError("; ".join(problems))
    return scenario


def load_scenario(path: str) -> Scenario:
    """Read and parse a scenario file."""
    try:
        with open(path, "rb") as handle:
            text = handle.read().decode("utf-8")
    except OSError as err:
        raise ParseError(f"{path}: {err.strerror or err}") from err
    stem = os.path.splitext(os.path.basename(path))[0]
    try:
        return parse_scenario(text, name=stem)
    except (ParseError, ValidationError) as err:
        raise type(err)(f"{path}: {err}") from err


def _render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:g}"
    if isinstance(value, list):
        return ",".join(_render_value(v) for v in value)
    return str(value)


def dump_scenario(sc: Scenario) -> str:
    """Stable line-oriented rendering (golden-file friendly)."""
    out = [
        f"scenario {sc.name} seed={sc.seed} duration={sc.duration}",
        f"policy replication={sc.policy.replication_factor} "
        f"learning={1 if sc.policy.learning else 0} "
        f"alpha={sc.policy.ema_alpha:g} probe={sc.policy.probe_interval}",
        f"limits pod={sc.pod_size} queue={sc.queue_capacity} "
        f"bandwidth={sc.bandwidth} custody={sc.custody_capacity}",
    ]
    for node in sc.nodes:
        out.append(f"node {node.name} {node.kind.value}")
    for aoi in sc.aois:
        out.append(
            f"aoi {aoi.name} members={','.join(aoi.members)} "
            f"protocol={aoi.protocol} mesh={1 if aoi.mesh else 0}"
        )
    for link in sc.links:
        out.append(f"link {link.a} {link.b}")
    for loss in sc.losses:
        out.append(f"loss {loss.a} {loss.b} {loss.success:g}")
    for ev in sc.events:
        parts = [f"event {ev.time} {ev.kind}"]
        for key in sorted(ev.args):
            parts.append(f"{key}={_render_value(ev.args[key])}")
        out.append(" ".join(parts))
    return "".join(line + "\n" for line in out)
