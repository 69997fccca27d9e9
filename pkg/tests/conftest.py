"""Shared fixtures: canned topologies, session-cached scenario runs, and the
randomized scenario generator the acceptance sweep is built on."""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np
import pytest

from railchain.crypto import Keyring
from railchain.scenario import load_scenario, parse_scenario
from railchain.topogen import random_line_doc, tiny3_doc
from railchain.topology import loads_topology, neighbors
from railchain.world import World

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"
TOPOLOGIES = REPO / "topologies"


@pytest.fixture()
def keyring() -> Keyring:
    return Keyring("test-hmac", "sha256")


@pytest.fixture()
def tiny3(keyring):
    return loads_topology(json.dumps(tiny3_doc(keyring)))


def run_scenario(name: str) -> tuple[World, dict]:
    world = World(load_scenario(SCENARIOS / f"{name}.json"))
    summary = world.run()
    return world, summary


@pytest.fixture(scope="session")
def tiny3_run():
    return run_scenario("tiny3-baseline")


@pytest.fixture(scope="session")
def contention_run():
    return run_scenario("contention-race")


@pytest.fixture(scope="session")
def fork_run():
    return run_scenario("fork-drill")


@pytest.fixture(scope="session")
def liveness_run():
    return run_scenario("liveness-poa5")


def fresh_world(name: str) -> World:
    """A not-yet-started world for tests that drive the clock themselves."""
    return World(load_scenario(SCENARIOS / f"{name}.json"))


# --- randomized sweep --------------------------------------------------------

def hops(topo, src: str, dst: str) -> int:
    """Undirected BFS distance in elements (adjacency only, positions
    ignored) -- a coarse journey-length cap for the generator."""
    seen = {src}
    frontier = [src]
    dist = 0
    while frontier:
        dist += 1
        nxt = []
        for el in frontier:
            for nb, _pos in neighbors(topo, el):
                if nb == dst:
                    return dist
                if nb not in seen:
                    seen.add(nb)
                    nxt.append(nb)
        frontier = nxt
    return 10 ** 9


def sweep_doc(seed: int, liveness: bool = False) -> dict:
    """One randomized scenario: 3-7 nodes, 5-20 trains, 8-40 elements,
    mixed consensus, lossy links. `liveness` pins the configuration the
    commit-latency bound is specified against (poa, 5 nodes, latency
    (1,2), no losses)."""
    pick = random.Random(seed * 7919 + 13)
    n_nodes = 5 if liveness else pick.randint(3, 7)
    n_trains = pick.randint(5, 20)
    n_elements = pick.randint(8, 40)
    rng = np.random.default_rng(seed)
    keyring = Keyring("test-hmac", "sha256")
    topo_doc = random_line_doc(rng, n_elements, keyring)
    topo = loads_topology(json.dumps(topo_doc))
    blocks = [e["id"] for e in topo_doc["elements"] if e["kind"] == "block"]
    # Feasibility cap: every train spawns on its own block and needs some
    # headroom to move, so the smallest maps hold fewer than the nominal
    # minimum of 5 trains.
    n_trains = min(n_trains, max(2, (2 * len(blocks)) // 3))
    spawns = pick.sample(blocks, n_trains)
    nodes = [f"n{i + 1}" for i in range(n_nodes)]
    if liveness:
        mode, lat_hi, drop = "poa", 2, 0.0
    else:
        mode = pick.choices(["poa", "vote", "pow"], weights=[6, 3, 1])[0]
        lat_hi = pick.randint(2, 5)
        drop = round(pick.uniform(0.0, 0.05), 3)
    consensus = {"mode": mode, "order": nodes}
    if mode == "vote":
        consensus["threshold"] = {"fraction": "51/100"}
    elif mode == "pow":
        consensus["difficulty_bits"] = 8
    # Sequential leg booking must fit inside the timetable lead, so the
    # lead scales with per-block commit latency (worst in vote mode).
    per_leg = 5 + (4 if mode == "vote" else 2) * lat_hi
    trains, journeys = [], []
    for i, spawn in enumerate(spawns):
        tid = f"T{i + 1}"
        trains.append({"id": tid, "spawn": spawn, "node": nodes[i % n_nodes]})
        dests = [b for b in blocks
                 if b != spawn and 0 < hops(topo, spawn, b) <= 8]
        dest = pick.choice(dests or [b for b in blocks if b != spawn])
        journeys.append({"train": tid, "dest": dest,
                         "at_tick": pick.randrange(0, 31)})
    return {
        "name": f"sweep-{seed}",
        "topology": {"inline": topo_doc},
        "seed": seed,
        "nodes": nodes,
        "consensus": consensus,
        "net": {"latency": [1, lat_hi], "drop": drop},
        "agent": {"ticks_per_element": 6, "margin": 4,
                  "per_leg_lead": per_leg},
        "trains": trains,
        "journeys": journeys,
        "max_ticks": 200 + 14 * n_trains,
        "drain_ticks": 150,
    }


def run_sweep(seed: int, liveness: bool = False,
              observer=None) -> tuple[World, dict]:
    world = World(parse_scenario(sweep_doc(seed, liveness=liveness)))
    summary = world.run(observer=observer)
    return world, summary


# --- routing oracle ------------------------------------------------------------

def enumerate_routes_oracle(topo, origin: str, dest: str) -> list:
    """Every simple path origin->dest with a consistent switch-position
    assignment, as (elements, positions, length) tuples sorted the way the
    router sorts. Deliberately a different algorithm: plain vertex-path DFS
    first, then solve the position constraints per path."""
    import itertools

    edge_set = {(e.src, e.dst, e.required_position) for e in topo.edges}
    adjacency: dict[str, list[str]] = {eid: [] for eid in topo.elements}
    for e in topo.edges:
        if e.dst not in adjacency[e.src]:
            adjacency[e.src].append(e.dst)

    if origin == dest:
        el = topo.element(origin)
        pos = ((origin, el.default_position),) if el.is_switch else ()
        return [((origin,), pos, el.length_m)]

    vertex_paths: list[tuple[str, ...]] = []

    def dfs(path: list[str]) -> None:
        at = path[-1]
        if at == dest:
            vertex_paths.append(tuple(path))
            return
        for nb in adjacency[at]:
            if nb not in path:
                path.append(nb)
                dfs(path)
                path.pop()

    dfs([origin])

    routes = []
    for path in vertex_paths:
        candidates: list[list[str]] = []  # per switch, in traversal order
        feasible = True
        for i, eid in enumerate(path):
            el = topo.elements[eid]
            if not el.is_switch:
                if (i + 1 < len(path)
                        and not topo.elements[path[i + 1]].is_switch
                        and (eid, path[i + 1], None) not in edge_set):
                    feasible = False
                    break
                continue
            cand = list(el.positions)
            if i > 0:
                cand = [p for p in cand if (path[i - 1], eid, p) in edge_set]
            if i + 1 < len(path):
                cand = [p for p in cand if (eid, path[i + 1], p) in edge_set]
            if not cand:
                feasible = False
                break
            candidates.append(cand)
        if not feasible:
            continue
        switches = [eid for eid in path if topo.elements[eid].is_switch]
        length = sum(topo.elements[eid].length_m for eid in path)
        for combo in itertools.product(*candidates):
            positions = tuple(zip(switches, combo))
            routes.append((path, positions, length))
    routes.sort(key=lambda r: (r[2], r[0], r[1]))
    return routes
