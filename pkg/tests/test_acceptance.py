"""Acceptance gate: one test per headline behavior, timed and printed.

Each test prints exactly one PASS/FAIL line (visible under ``pytest -v
-s`` or in the captured output of a failure) and enforces a wall-clock
budget, so a regression in either behavior or performance trips it.
"""

import random
import time
from collections import Counter, deque
from dataclasses import replace
from pathlib import Path

import pytest

from transientnet.dpin import PinShard, ShardMode, merge, resolve
from transientnet.errors import ChecksumMismatch, Unreachable
from transientnet.identity import (
    EntityKind,
    IdentifierRecord,
    KeyStore,
    NamespaceDelegation,
    PersistentId,
    Signer,
    derive_seed,
    sign_record,
)
from transientnet.pods import Priority, TrafficClass, reassemble, shard_payload
from transientnet.scenario import load_scenario
from transientnet.simcore import (
    AoiSpec,
    EventSpec,
    LinkSpec,
    NodeSpec,
    Scenario,
    run_scenario,
)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def verdict(number, label, problems, elapsed, budget):
    if elapsed >= budget:
        problems = list(problems) + [
            f"took {elapsed:.3f}s, budget {budget:.0f}s"]
    word = "PASS" if not problems else "FAIL"
    print(f"criterion {number} [{label}]: {word} ({elapsed:.3f}s)")
    assert not problems, f"criterion {number} [{label}]: " + "; ".join(
        str(p) for p in problems)


def by_tail(deliveries):
    return {pid.rsplit("/", 1)[-1]: hops for pid, hops in deliveries.items()}


# -- 1: delivery survives a mid-flight move ---------------------------------

def test_criterion_1_mid_flight_handover():
    started = time.perf_counter()
    report = run_scenario(
        load_scenario(str(SCENARIO_DIR / "mobility_midflight.toml")))
    elapsed = time.perf_counter() - started
    m = report.metrics
    problems = []
    if m.delivered != 64:
        problems.append(f"delivered {m.delivered} != 64")
    if m.dropped_control or m.dropped_payload:
        problems.append(
            f"drops {m.dropped_control}+{m.dropped_payload} != 0")
    if not m.mean_hops <= 4.0:
        problems.append(f"mean hops {m.mean_hops} > 4")
    if not m.conserved():
        problems.append("pods not conserved")
    verdict(1, "mid-flight handover", problems, elapsed, budget=1.0)


# -- 2: routing matches shortest paths on random meshes ----------------------


def _random_mesh(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 10)
    adjacency = {i: set() for i in range(n)}
    links = []

    def connect(i, j):
        links.append(LinkSpec(f"x{i}a", f"x{j}b"))
        adjacency[i].add(j)
        adjacency[j].add(i)

    for i in range(1, n):
        connect(i, rng.randrange(i))
    for _ in range(rng.randint(0, n)):
        i, j = rng.sample(range(n), 2)
        if j not in adjacency[i]:
            connect(i, j)

    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    scenario = Scenario(
        name=f"mesh{seed}",
        seed=seed,
        duration=30,
        nodes=tuple(NodeSpec(f"x{i}{side}")
                    for i in range(n) for side in "ab"),
        aois=tuple(AoiSpec(f"G{i}", (f"x{i}a", f"x{i}b"))
                   for i in range(n)),
        links=tuple(links),
        events=tuple(
            EventSpec(0, "inject",
                      {"src": f"x{i}a", "dst": f"x{j}b", "bytes": 0})
            for i, j in pairs),
        bandwidth=64,
        queue_capacity=4096,
    )
    return scenario, adjacency, pairs


def _bfs_distances(adjacency, src):
    dist = {src: 0}
    queue = deque([src])
    while queue:
        cur = queue.popleft()
        for peer in adjacency[cur]:
            if peer not in dist:
                dist[peer] = dist[cur] + 1
                queue.append(peer)
    return dist


def test_criterion_2_shortest_path_on_random_meshes():
    started = time.perf_counter()
    problems = []
    for seed in range(50):
        scenario, adjacency, pairs = _random_mesh(seed)
        report = run_scenario(scenario)
        if report.metrics.delivered != len(pairs):
            problems.append(
                f"seed {seed}: delivered {report.metrics.delivered} "
                f"of {len(pairs)}")
            continue
        if not report.metrics.conserved():
            problems.append(f"seed {seed}: not conserved")
        tails = by_tail(report.deliveries)
        dist_from = {i: _bfs_distances(adjacency, i)
                     for i in range(len(adjacency))}
        for k, (i, j) in enumerate(pairs):
            got = tails.get(f"f{k}.0")
            want = dist_from[i][j]
            if got != want:
                problems.append(
                    f"seed {seed} pair {i}->{j}: {got} hops, bfs {want}")
    elapsed = time.perf_counter() - started
    verdict(2, "shortest-path meshes x50", problems[:8], elapsed,
            budget=5.0)


# -- 3: priority holds under sustained overload ------------------------------


def _overload_pattern():
    pattern = []
    for piece in range(16):
        pattern.append(f"control:{piece % 8}")
        pattern.extend(f"payload:{7 - (k % 8)}" for k in range(99))
    return pattern


def test_criterion_3_control_survives_overload():
    started = time.perf_counter()
    pattern = _overload_pattern()
    scenario = Scenario(
        name="overload",
        seed=9,
        duration=100,
        nodes=tuple(NodeSpec(n) for n in ("a1", "a2", "b1", "b2")),
        aois=(AoiSpec("A", ("a1", "a2")), AoiSpec("B", ("b1", "b2"))),
        links=(LinkSpec("a1", "b1"),),
        events=(EventSpec(0, "flood", {
            "src": "a2", "dst": "b2", "per_tick": 100, "until": 100,
            "pattern": pattern,
        }),),
        bandwidth=1,
        queue_capacity=8,
    )
    report = run_scenario(scenario)
    elapsed = time.perf_counter() - started
    m = report.metrics
    problems = []
    injected_priorities = {
        line.split(" pri=")[1].split()[0]
        for line in report.trace.texts() if line.startswith("pod ")
    }
    if len(injected_priorities) != 16:
        problems.append(
            f"only {len(injected_priorities)} priorities injected")
    if m.dropped_control:
        problems.append(f"{m.dropped_control} control drops")
    if m.control_drops_with_payload_queued:
        problems.append(
            f"{m.control_drops_with_payload_queued} control drops "
            "while payload queued")
    drops = Counter(
        record.pod.priority.level for record in report.drops
        if record.pod.priority.cls is TrafficClass.PAYLOAD)
    for level in range(7, 0, -1):
        if drops[level] < drops[level - 1]:
            problems.append(
                f"payload:{level} dropped {drops[level]} < "
                f"payload:{level - 1} dropped {drops[level - 1]}")
    if not m.conserved():
        problems.append("pods not conserved")
    verdict(3, "overload keeps control traffic", problems, elapsed,
            budget=1.0)


# -- 4: isolated registrations reconcile on merge ----------------------------

ROOT = ("net",)


def _shard(label, keystore):
    aoi = PersistentId(ROOT, label)
    grant = NamespaceDelegation(ROOT, ROOT + (label,), aoi)
    return PinShard(aoi, [grant], keystore)


def _record(keystore, prefix, name, home):
    pid = PersistentId(prefix, name)
    key = derive_seed("key", pid.canonical()).to_bytes(8, "big")
    signer = Signer(pid, key)
    record = IdentifierRecord(
        id=pid, kind=EntityKind.DEVICE, home_aoi=home,
        addresses=(f"sim://{name}",), version=1, validated=False,
        signature=b"",
    )
    keystore.put(pid, key)
    return sign_record(record, signer)


def test_criterion_4_merge_reconciles_isolated_registrations():
    started = time.perf_counter()
    keystore = KeyStore()
    alpha = _shard("alpha", keystore)
    beta = _shard("beta", keystore)
    everyone = []
    for i in range(100):
        everyone.append(alpha.register(
            _record(keystore, ROOT + ("alpha",), f"a{i:03}",
                    alpha.owner_aoi)).id)
        everyone.append(beta.register(
            _record(keystore, ROOT + ("beta",), f"b{i:03}",
                    beta.owner_aoi)).id)

    beta.enter_isolated()
    offline = [
        beta.register(_record(keystore, ROOT + ("beta",), f"late{i}",
                              beta.owner_aoi)).id
        for i in range(10)
    ]

    problems = []
    if set(beta.flagged) != set(offline):
        problems.append("flagged set after isolation is wrong")
    everyone.extend(offline)

    merge(alpha, beta)
    if set(alpha.flagged) | set(beta.flagged) != set(offline):
        problems.append("validation queues after merge are wrong")

    if alpha.validate_flagged() != (10, 0):
        problems.append("alpha validation did not pass all ten")
    if beta.validate_flagged() != (10, 0):
        problems.append("beta validation did not pass all ten")
    if alpha.flagged or beta.flagged:
        problems.append("flagged records left after validation")

    if len(everyone) != 210:
        problems.append(f"expected 210 ids, built {len(everyone)}")
    for shard in (alpha, beta):
        for pid in everyone:
            found = resolve([shard], pid, shard.owner_aoi)
            if found.hops != 0 or not found.record.validated:
                problems.append(f"{shard.owner_aoi}: {pid} not local+valid")
                break
    elapsed = time.perf_counter() - started
    verdict(4, "merge reconciles isolated ids", problems, elapsed,
            budget=1.0)


# -- 5: shard/reassemble round trip at scale ---------------------------------


def test_criterion_5_round_trip_survives_shuffling():
    started = time.perf_counter()
    rng = random.Random(20260819)
    src = PersistentId(("net", "a"), "alice")
    dst = PersistentId(("net", "b"), "bob")
    pri = Priority.parse("payload:4")
    plan = [(1, 2048, 250), (7, 16384, 200), (4096, 1 << 20, 60)]
    problems = []
    trials = 0
    for pod_size, cap, count in plan:
        for trial in range(count):
            payload = rng.randbytes(rng.randrange(cap + 1))
            manifest, pods = shard_payload(
                src, payload, priority=pri, src=src, dst=dst,
                pod_size=pod_size)
            expected_pods = max(1, -(-len(payload) // pod_size))
            if len(pods) != expected_pods:
                problems.append(
                    f"size {pod_size}: {len(pods)} pods, "
                    f"expected {expected_pods}")
            shuffled = list(pods)
            rng.shuffle(shuffled)
            if reassemble(manifest, shuffled) != payload:
                problems.append(f"size {pod_size}: round trip mismatch")
            if trial % 10 == 0 and payload:
                victims = [p for p in shuffled if p.payload]
                victim = rng.choice(victims)
                corrupted = bytearray(victim.payload)
                corrupted[rng.randrange(len(corrupted))] ^= 0x5A
                broken = [
                    replace(p, payload=bytes(corrupted))
                    if p is victim else p
                    for p in shuffled
                ]
                try:
                    reassemble(manifest, broken)
                    problems.append(
                        f"size {pod_size}: corruption not detected")
                except ChecksumMismatch:
                    pass
            trials += 1
            if problems:
                break
        if problems:
            break
    if trials < 500 and not problems:
        problems.append(f"only {trials} trials ran")
    elapsed = time.perf_counter() - started
    verdict(5, "pod round trips x510", problems, elapsed, budget=10.0)


# -- 6: partition isolates, custody releases on heal -------------------------


def _cut_heal_scenario(heal):
    events = [
        EventSpec(0, "inject", {"src": "a1", "dst": "b2"}),
        EventSpec(1, "cut", {"a": "A", "b": "B"}),
        EventSpec(2, "inject", {"src": "a2", "dst": "b1"}),
        EventSpec(3, "inject", {"src": "a1", "dst": "a2"}),
    ]
    if heal:
        events.append(EventSpec(8, "heal", {"a": "A", "b": "B"}))
    return Scenario(
        name="cutheal",
        seed=11,
        duration=12,
        nodes=tuple(NodeSpec(n) for n in ("a1", "a2", "b1", "b2")),
        aois=(AoiSpec("A", ("a1", "a2")), AoiSpec("B", ("b1", "b2"))),
        links=(LinkSpec("a1", "b1"),),
        events=tuple(events),
    )


def test_criterion_6_custody_waits_out_the_partition():
    started = time.perf_counter()
    problems = []

    stuck = run_scenario(_cut_heal_scenario(heal=False))
    sim = stuck.simulation
    if stuck.metrics.delivered != 2:
        problems.append(
            f"cut run delivered {stuck.metrics.delivered} != 2")
    if stuck.metrics.custody_end != 1:
        problems.append(
            f"cut run custody {stuck.metrics.custody_end} != 1")
    if by_tail(stuck.deliveries).get("f2.0") != 0:
        problems.append("local delivery inside the cut area failed")
    if not any(t.startswith("isolated ") for t in stuck.trace.texts()):
        problems.append("no isolated notice in trace")
    try:
        resolve(sim.topo.shards(), sim.topo.nodes["b1"].pid,
                sim.aliases["A"], neighbors=sim.topo.neighbor_map())
        problems.append("foreign resolve succeeded across the cut")
    except Unreachable:
        pass
    if not stuck.metrics.conserved():
        problems.append("cut run not conserved")

    healed = run_scenario(_cut_heal_scenario(heal=True))
    texts = healed.trace.texts()
    if healed.metrics.delivered != 3:
        problems.append(
            f"heal run delivered {healed.metrics.delivered} != 3")
    if healed.metrics.custody_end != 0:
        problems.append("custody not released after heal")
    if healed.metrics.stores < 1 or healed.metrics.flushes < 1:
        problems.append("store/flush cycle missing")
    for needle in ("heal ", "merge ", "flush "):
        if not any(t.startswith(needle) for t in texts):
            problems.append(f"no {needle.strip()} line in trace")
    if not healed.metrics.conserved():
        problems.append("heal run not conserved")
    hsim = healed.simulation
    if not hsim._deliverable(hsim.aliases["A"], hsim.topo.nodes["b1"].pid):
        problems.append("foreign id still unreachable after heal")

    elapsed = time.perf_counter() - started
    verdict(6, "partition custody and heal", problems, elapsed, budget=1.0)


# -- 7: outcome learning prefers the reliable path ---------------------------


def test_criterion_7_learning_prefers_the_reliable_path():
    started = time.perf_counter()
    report = run_scenario(
        load_scenario(str(SCENARIO_DIR / "route_reinforcement.toml")))
    elapsed = time.perf_counter() - started
    sim = report.simulation
    hi = sim.aliases["hi"].canonical()
    texts = report.trace.texts()

    window = {f"f{k}.0" for k in range(50, 100)}
    delivered = [
        line.split()[1] for line in texts
        if line.startswith("deliver ")
        and line.split()[1].rsplit("/", 1)[-1] in window
    ]
    via_hi = [
        pod for pod in delivered
        if any(t.startswith(f"fwd {pod} ") and hi in t for t in texts)
    ]
    problems = []
    if len(delivered) < 40:
        problems.append(
            f"only {len(delivered)} of the 50 window pods delivered")
    else:
        share = len(via_hi) / len(delivered)
        if share < 0.90:
            problems.append(
                f"reliable-path share {share:.1%} "
                f"({len(via_hi)}/{len(delivered)})")
    if not any(t.startswith("probe ") for t in texts):
        problems.append("no probes of the losing path")
    if not report.metrics.conserved():
        problems.append("not conserved")
    verdict(7, "loss-aware route learning", problems, elapsed, budget=2.0)


# -- 8: byte-identical replays ------------------------------------------------


def test_criterion_8_replays_are_byte_identical():
    started = time.perf_counter()
    problems = []
    for path in sorted(SCENARIO_DIR.glob("*.toml")):
        first = run_scenario(load_scenario(str(path)))
        second = run_scenario(load_scenario(str(path)))
        if first.trace.render() != second.trace.render():
            problems.append(f"{path.stem}: trace diverged")
        if first.metrics.csv() != second.metrics.csv():
            problems.append(f"{path.stem}: metrics diverged")
    elapsed = time.perf_counter() - started
    verdict(8, "byte-identical replays x10", problems, elapsed, budget=5.0)
