"""Scenario files: one strict JSON document describes a whole run — the
track, the committee of nodes, the consensus mode, network weather, trains
and their journeys. Identical (scenario, seed) pairs must produce identical
runs, so parsing rejects anything it does not understand."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentParams
from .consensus import ConsensusConfig, parse_consensus
from .errors import ConfigError
from .netsim import NetConfig, PartitionSpec

_TOP_KEYS = {
    "name", "topology", "sig_scheme", "hash_algo", "seed", "max_ticks",
    "drain_ticks", "occupancy_reporter", "default_balance", "nodes",
    "consensus", "net", "partitions", "agent", "trains", "journeys",
    "switch_actuation_delay",
}
_TRAIN_KEYS = {"id", "spawn", "node", "balance"}
_JOURNEY_KEYS = {"train", "dest", "depart", "at_tick"}
_NET_KEYS = {"latency", "drop"}
_PARTITION_KEYS = {"groups", "from", "to"}
_AGENT_KEYS = {"ticks_per_element", "margin", "booking_lead", "per_leg_lead",
               "retry_backoff_ticks", "retries", "booking_timeout", "k_routes"}

BUILTIN_TOPOLOGIES = ("tiny3", "switchy", "diamond")


@dataclass(frozen=True)
class TrainSpec:
    id: str
    spawn: str
    node: str | None = None
    balance: int | None = None


@dataclass(frozen=True)
class JourneySpec:
    train: str
    dest: str
    depart: int = 0
    at_tick: int = 0


@dataclass
class Scenario:
    name: str
    topology_doc: dict | None  # None => builtin named topology
    topology_builtin: str | None
    sig_scheme: str
    hash_algo: str
    seed: int
    max_ticks: int
    drain_ticks: int
    occupancy_reporter: str
    default_balance: int
    node_ids: tuple[str, ...]
    consensus_raw: dict
    net: NetConfig
    partitions: list[PartitionSpec] = field(default_factory=list)
    agent_params: AgentParams = AgentParams()
    trains: list[TrainSpec] = field(default_factory=list)
    journeys: list[JourneySpec] = field(default_factory=list)
    switch_actuation_delay: int = 1

    def consensus(self) -> ConsensusConfig:
        return parse_consensus(self.consensus_raw, list(self.node_ids))


def _need(doc: dict, key: str):
    if key not in doc:
        raise ConfigError(f"scenario is missing required key {key!r}")
    return doc[key]


def _int_in(doc: dict, key: str, default: int, minimum: int) -> int:
    v = doc.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {v!r}")
    return v


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")

    topo_raw = _need(doc, "topology")
    topo_doc, topo_builtin = None, None
    if isinstance(topo_raw, str):
        if topo_raw not in BUILTIN_TOPOLOGIES:
            raise ConfigError(f"unknown builtin topology {topo_raw!r}; "
                              f"choose from {BUILTIN_TOPOLOGIES}")
        topo_builtin = topo_raw
    elif isinstance(topo_raw, dict) and set(topo_raw) == {"inline"}:
        topo_doc = topo_raw["inline"]
    elif isinstance(topo_raw, dict) and set(topo_raw) == {"file"}:
        path = Path(topo_raw["file"])
        if not path.exists():
            raise ConfigError(f"topology file not found: {path}")
        topo_doc = json.loads(path.read_text(encoding="utf-8"))
    else:
        raise ConfigError("topology must be a builtin name, {\"inline\": doc} "
                          "or {\"file\": path}")

    sig_scheme = doc.get("sig_scheme", "test-hmac")
    if sig_scheme not in ("test-hmac", "ed25519"):
        raise ConfigError(f"unknown sig_scheme {sig_scheme!r}")
    hash_algo = doc.get("hash_algo", "sha256")
    if hash_algo not in ("sha256", "sha3_256"):
        raise ConfigError(f"unknown hash_algo {hash_algo!r}")
    reporter = doc.get("occupancy_reporter", "train")
    if reporter not in ("train", "element"):
        raise ConfigError(f"occupancy_reporter must be train or element")

    node_ids = _need(doc, "nodes")
    if (not isinstance(node_ids, list) or not node_ids
            or any(not isinstance(n, str) or not n for n in node_ids)):
        raise ConfigError("nodes must be a non-empty list of ids")
    if len(set(node_ids)) != len(node_ids):
        raise ConfigError("duplicate node ids")

    net_raw = doc.get("net", {})
    unknown = set(net_raw) - _NET_KEYS
    if unknown:
        raise ConfigError(f"unknown net keys: {sorted(unknown)}")
    latency = net_raw.get("latency", [1, 2])
    if (not isinstance(latency, list) or len(latency) != 2
            or any(not isinstance(x, int) for x in latency)):
        raise ConfigError(f"net.latency must be [min, max], got {latency!r}")
    drop = net_raw.get("drop", 0.0)
    if not isinstance(drop, (int, float)) or isinstance(drop, bool):
        raise ConfigError(f"net.drop must be a number, got {drop!r}")
    net = NetConfig(latency_min=latency[0], latency_max=latency[1],
                    drop_prob=float(drop),
                    seed=_int_in(doc, "seed", 0, 0))

    partitions = []
    for raw in doc.get("partitions", []):
        unknown = set(raw) - _PARTITION_KEYS
        if unknown:
            raise ConfigError(f"unknown partition keys: {sorted(unknown)}")
        groups = raw.get("groups")
        if (not isinstance(groups, list) or len(groups) < 2
                or any(not isinstance(g, list) or not g for g in groups)):
            raise ConfigError("partition groups must be >= 2 non-empty lists")
        named = [n for g in groups for n in g]
        if len(set(named)) != len(named):
            raise ConfigError("partition groups overlap")
        unknown_nodes = set(named) - set(node_ids)
        if unknown_nodes:
            raise ConfigError(f"partition names unknown nodes: "
                              f"{sorted(unknown_nodes)}")
        start, end = raw.get("from"), raw.get("to")
        if not isinstance(start, int) or not isinstance(end, int) or end <= start:
            raise ConfigError("partition needs integer from < to")
        partitions.append(PartitionSpec(
            tuple(frozenset(g) for g in groups), start, end))

    agent_raw = doc.get("agent", {})
    unknown = set(agent_raw) - _AGENT_KEYS
    if unknown:
        raise ConfigError(f"unknown agent keys: {sorted(unknown)}")
    for k, v in agent_raw.items():
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ConfigError(f"agent.{k} must be a non-negative integer")
    params = AgentParams(**agent_raw)
    if params.ticks_per_element < 1:
        raise ConfigError("agent.ticks_per_element must be >= 1")

    trains = []
    seen_ids, seen_spawns = set(), set()
    for raw in doc.get("trains", []):
        unknown = set(raw) - _TRAIN_KEYS
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        tid, spawn = raw.get("id"), raw.get("spawn")
        if not isinstance(tid, str) or not tid:
            raise ConfigError(f"train id missing: {raw!r}")
        if tid in seen_ids:
            raise ConfigError(f"duplicate train id {tid!r}")
        if not isinstance(spawn, str):
            raise ConfigError(f"train {tid}: spawn element required")
        if spawn in seen_spawns:
            raise ConfigError(f"two trains spawn on {spawn!r}")
        node = raw.get("node")
        if node is not None and node not in node_ids:
            raise ConfigError(f"train {tid}: unknown home node {node!r}")
        balance = raw.get("balance")
        if balance is not None and (not isinstance(balance, int) or balance < 0):
            raise ConfigError(f"train {tid}: balance must be >= 0")
        seen_ids.add(tid)
        seen_spawns.add(spawn)
        trains.append(TrainSpec(tid, spawn, node, balance))

    journeys = []
    for raw in doc.get("journeys", []):
        unknown = set(raw) - _JOURNEY_KEYS
        if unknown:
            raise ConfigError(f"unknown journey keys: {sorted(unknown)}")
        train, dest = raw.get("train"), raw.get("dest")
        if train not in seen_ids:
            raise ConfigError(f"journey names unknown train {train!r}")
        if not isinstance(dest, str):
            raise ConfigError(f"journey for {train}: dest required")
        journeys.append(JourneySpec(
            train, dest,
            depart=_int_in(raw, "depart", 0, 0),
            at_tick=_int_in(raw, "at_tick", 0, 0)))

    return Scenario(
        name=str(doc.get("name", "unnamed")),
        topology_doc=topo_doc,
        topology_builtin=topo_builtin,
        sig_scheme=sig_scheme,
        hash_algo=hash_algo,
        seed=_int_in(doc, "seed", 0, 0),
        max_ticks=_int_in(doc, "max_ticks", 600, 1),
        drain_ticks=_int_in(doc, "drain_ticks", 200, 0),
        occupancy_reporter=reporter,
        default_balance=_int_in(doc, "default_balance", 1000, 0),
        node_ids=tuple(node_ids),
        consensus_raw=_need(doc, "consensus"),
        net=net,
        partitions=partitions,
        agent_params=params,
        trains=trains,
        journeys=journeys,
        switch_actuation_delay=_int_in(doc, "switch_actuation_delay", 1, 1),
    )


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"scenario file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from None
    return parse_scenario(doc)
