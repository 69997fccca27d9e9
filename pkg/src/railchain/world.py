"""Runs one scenario end to end: builds the committee of nodes over a
shared genesis, spawns trackside twins and train agents, advances the
discrete clock, and holds the safety oracles against everything that
happens. Identical (scenario, seed) pairs produce byte-identical event
logs."""

from __future__ import annotations

import json
from typing import Callable

from .agents import ARRIVED, Journey, TrainAgent
from .consensus import ConsensusConfig
from .contract import ContractRules
from .crypto import Keyring, ZERO_HASH, convention_secret
from .errors import ConfigError
from .events import EventLog
from .ledger import Chain, LedgerBlock, seal_block
from .metrics import compute_metrics
from .netsim import Network, PartitionSpec
from .node import Node
from .oracles import (agreement_violations, chain_exclusivity_violations,
                      money_violations, physical_violations,
                      replay_violations)
from .routing import find_candidate_routes, schedule
from .scenario import Scenario
from .topology import Topology, loads_topology
from . import topogen

TERMINAL_JOURNEY = ("arrived", "failed", "cancelled")


def materialize_topology(scenario: Scenario, keyring: Keyring) -> tuple[dict, Topology]:
    if scenario.topology_builtin is not None:
        doc = getattr(topogen, f"{scenario.topology_builtin}_doc")(keyring)
        return doc, topogen.build(doc)
    doc = scenario.topology_doc
    topo = loads_topology(json.dumps(doc))
    for el in topo.elements.values():
        addr = keyring.register(topogen.owner_secret(el.id))
        if addr != el.owner_wallet:
            raise ConfigError(
                f"element {el.id}: owner_wallet is not derived from the "
                f"convention secret; the simulator cannot operate its twin")
    return doc, topo


class World:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.log = EventLog()
        self.violations: list[dict] = []
        self._fork_keys: set = set()
        self._alarm_txids: set = set()
        self.now = 0
        self.finished = False
        self._started = False
        self.draining = False

        self.keyring = Keyring(scenario.sig_scheme, scenario.hash_algo)
        self.topology_doc, self.topo = materialize_topology(scenario,
                                                            self.keyring)
        self.consensus: ConsensusConfig = scenario.consensus()

        for spec in scenario.trains:
            if spec.spawn not in self.topo.elements:
                raise ConfigError(f"train {spec.id}: spawn element "
                                  f"{spec.spawn!r} is not on the map")
        for j in scenario.journeys:
            if j.dest not in self.topo.elements:
                raise ConfigError(f"journey for {j.train}: unknown dest "
                                  f"{j.dest!r}")

        self.train_wallets = {
            spec.id: self.keyring.register(convention_secret("train", spec.id))
            for spec in scenario.trains
        }
        node_pubkeys = {
            nid: self.keyring.pubkey_of(
                self.keyring.secret_for(
                    self.keyring.register(convention_secret("node", nid))))
            for nid in scenario.node_ids
        }

        allocations = {}
        for spec in scenario.trains:
            balance = (spec.balance if spec.balance is not None
                       else scenario.default_balance)
            allocations[self.train_wallets[spec.id]] = balance
        keys = {}
        for spec in scenario.trains:
            wallet = self.train_wallets[spec.id]
            keys[wallet] = self.keyring.pubkey_of(
                self.keyring.secret_for(wallet)).hex()
        for el in self.topo.elements.values():
            keys[el.owner_wallet] = self.keyring.pubkey_of(
                self.keyring.secret_for(el.owner_wallet)).hex()

        self.genesis_payload = {
            "allocations": allocations,
            "consensus": self.consensus.to_genesis(),
            "hash_algo": scenario.hash_algo,
            "keys": keys,
            "nodes": {nid: {"pubkey": pk.hex(), "whitelisted": True}
                      for nid, pk in node_pubkeys.items()},
            "occupancy_reporter": scenario.occupancy_reporter,
            "sig_scheme": scenario.sig_scheme,
            "topology_hash": self.topo.content_hash(scenario.hash_algo),
            "trains": dict(self.train_wallets),
        }
        genesis_block = seal_block(LedgerBlock(
            index=0, prev_hash=ZERO_HASH, tx_list=(), proposer="genesis",
            now=0, genesis=self.genesis_payload), scenario.hash_algo)
        chain = Chain((genesis_block,))
        self.rules = ContractRules(self.genesis_payload)

        self.network = Network(tuple(sorted(scenario.node_ids)), scenario.net)
        for spec in scenario.partitions:
            self.network.add_partition(spec)

        self.nodes: dict[str, Node] = {}
        for nid in sorted(scenario.node_ids):
            self.nodes[nid] = Node(nid, chain, self.topo, self.rules,
                                   self.consensus, self.keyring,
                                   self.network, self._emit)

        node_order = sorted(scenario.node_ids)
        self.physical: dict[str, str] = {}
        from .twins import ElementTwin
        self.twins = {}
        for i, eid in enumerate(sorted(self.topo.elements)):
            el = self.topo.elements[eid]
            twin = ElementTwin(
                element_id=eid,
                owner_wallet=el.owner_wallet,
                node=self.nodes[node_order[i % len(node_order)]],
                actuation_delay=scenario.switch_actuation_delay,
            )
            if el.is_switch:
                twin.physical_position = el.default_position
            self.twins[eid] = twin

        self.agents: dict[str, TrainAgent] = {}
        for i, spec in enumerate(sorted(scenario.trains, key=lambda s: s.id)):
            home = spec.node or node_order[i % len(node_order)]
            self.agents[spec.id] = TrainAgent(
                train=spec.id,
                wallet=self.train_wallets[spec.id],
                node=self.nodes[home],
                topo=self.topo,
                params=scenario.agent_params,
                emit=self._emit,
                physical=self.physical,
                spawn_element=spec.spawn,
            )

        self.journeys: dict[str, Journey] = {}
        self._pending_specs = sorted(scenario.journeys,
                                     key=lambda j: (j.at_tick, j.train))
        self._partition_marks: set = set()

    # --- event funnel -------------------------------------------------------

    def _emit(self, tick: int, kind: str, **fields) -> None:
        if kind == "ForkReport":
            key = (fields.get("common_prefix_index"),
                   tuple(sorted((fields.get("old_head", ""),
                                 fields.get("new_head", "")))))
            if key in self._fork_keys:
                return
            self._fork_keys.add(key)
        elif kind == "SafetyAlarm":
            txid = fields.get("txid")
            if txid in self._alarm_txids:
                return
            self._alarm_txids.add(txid)
        self.log.emit(tick, kind, **fields)

    # --- journey management ----------------------------------------------------

    def train_at(self, element: str) -> str | None:
        return self.physical.get(element)

    def create_journey(self, train: str, dest: str, depart: int = 0,
                       k: int | None = None) -> Journey:
        agent = self.agents.get(train)
        if agent is None:
            raise ConfigError(f"unknown train {train!r}")
        if dest not in self.topo.elements:
            raise ConfigError(f"unknown destination {dest!r}")
        jid = f"j{len(self.journeys) + 1}"
        journey = Journey(jid, train, agent.element, dest,
                          depart_pref=depart, created_tick=self.now)
        p = self.scenario.agent_params
        for route in find_candidate_routes(self.topo, agent.element, dest,
                                           k or p.k_routes):
            lead = p.booking_lead + p.per_leg_lead * len(route.elements)
            timed = schedule(self.topo, route,
                             max(depart, self.now + lead),
                             p.ticks_per_element, p.margin)
            journey.candidates.append({
                "elements": list(route.elements),
                "depart": timed.depart,
                "arrive": timed.arrive,
                "total_fee": timed.total_fee,
                "legs": [{"element": el, "window_start": win.start,
                          "window_end": win.end, "fee": fee}
                         for el, win, fee in map(timed.leg,
                                                 range(len(route.elements)))],
            })
        self.journeys[jid] = journey
        return journey

    def book_journey(self, jid: str, candidate: int | None = None) -> Journey:
        journey = self._journey(jid)
        if journey.status != "draft":
            raise ConfigError(f"journey {jid} is {journey.status}, not draft")
        agent = self.agents[journey.train]
        if agent.journey is not None and (
                agent.journey.status not in TERMINAL_JOURNEY):
            raise ConfigError(f"train {journey.train} is already busy")
        if candidate is not None:
            if not 0 <= candidate < len(journey.candidates):
                raise ConfigError(f"journey {jid} has no candidate {candidate}")
            chosen = journey.candidates[candidate]
            journey.preferred_elements = tuple(chosen["elements"])
            journey.depart_pref = max(journey.depart_pref, chosen["depart"])
        journey.origin = agent.element
        agent.assign(journey, self.now)
        return journey

    def cancel_journey(self, jid: str) -> Journey:
        journey = self._journey(jid)
        if journey.status in TERMINAL_JOURNEY:
            raise ConfigError(f"journey {jid} already {journey.status}")
        agent = self.agents[journey.train]
        if agent.journey is journey:
            agent.cancel(self.now)
        else:
            journey.status = "cancelled"
        return journey

    def _journey(self, jid: str) -> Journey:
        journey = self.journeys.get(jid)
        if journey is None:
            raise ConfigError(f"unknown journey {jid!r}")
        return journey

    # --- clock ----------------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for tid in sorted(self.agents):
            self.agents[tid].spawn(self.now)

    def step(self) -> None:
        if not self._started:
            self.start()
        now = self.now
        self._mark_partitions(now)
        for msg in self.network.deliver_due(now):
            self.nodes[msg.dst].on_message(msg, now)
        if not self.draining:
            while self._pending_specs and self._pending_specs[0].at_tick <= now:
                spec = self._pending_specs[0]
                rider = self.agents[spec.train].journey
                if rider is not None and rider.status not in TERMINAL_JOURNEY:
                    break  # train busy (e.g. booked over the API); retry later
                self._pending_specs.pop(0)
                journey = self.create_journey(spec.train, spec.dest,
                                              spec.depart)
                self.book_journey(journey.id)
        for eid in sorted(self.twins):
            self.twins[eid].step(
                now, self.topo, self._emit, self.physical,
                report_occupancy=self.scenario.occupancy_reporter == "element")
        if not self.draining:
            for tid in sorted(self.agents):
                self.agents[tid].step(now)
        for nid in sorted(self.nodes):
            self.nodes[nid].on_tick(now)
        self.violations.extend(physical_violations(self.physical, now))
        # The element->train map cannot even represent two trains on one
        # element; what it could hide is an overwrite that vanishes a train.
        for tid in sorted(self.agents):
            agent = self.agents[tid]
            if agent.state != ARRIVED and self.physical.get(agent.element) != tid:
                self.violations.append({
                    "oracle": "physical", "tick": now, "train": tid,
                    "expected_at": agent.element,
                    "found": self.physical.get(agent.element),
                })
        self.now += 1

    def _mark_partitions(self, now: int) -> None:
        for spec in self.network.partitions:
            start_key = ("start", spec.groups, spec.from_tick)
            if spec.from_tick == now and start_key not in self._partition_marks:
                self._partition_marks.add(start_key)
                self._emit(now, "PartitionStarted",
                           groups=[sorted(g) for g in spec.groups],
                           to_tick=spec.to_tick)
            end_key = ("end", spec.groups, spec.from_tick)
            if (spec.from_tick < now >= spec.to_tick
                    and end_key not in self._partition_marks):
                self._partition_marks.add(end_key)
                self._emit(now, "PartitionHealed",
                           groups=[sorted(g) for g in spec.groups])

    def inject_partition(self, groups, until: int | None = None) -> PartitionSpec:
        to_tick = until if until is not None else self.scenario.max_ticks
        spec = PartitionSpec(
            tuple(frozenset(g) for g in groups), self.now, to_tick)
        for g in spec.groups:
            for nid in g:
                if nid not in self.nodes:
                    raise ConfigError(f"unknown node {nid!r} in partition")
        if len(spec.groups) < 2 or to_tick <= self.now:
            raise ConfigError("partition needs >= 2 groups and a future end")
        self.network.add_partition(spec)
        return spec

    def heal_partitions(self) -> None:
        self.network.heal(self.now)

    # --- run to completion ------------------------------------------------------

    def _scenario_complete(self) -> bool:
        if self._pending_specs:
            return False
        return all(j.status in TERMINAL_JOURNEY or j.status == "draft"
                   for j in self.journeys.values())

    def _converged(self) -> bool:
        heads = {n.head_hash() for n in self.nodes.values()}
        if len(heads) > 1:
            return False
        digests = {n.state_digest() for n in self.nodes.values()}
        if len(digests) > 1:
            return False
        # Head gossip never stops, but an announce between equal heads is a
        # no-op, so in-flight ones do not block quiescence.
        if not self.network.idle(ignore_kinds=("HeadAnnounce",)):
            return False
        return all(not n.pool for n in self.nodes.values())

    def run(self, observer: Callable[["World"], None] | None = None) -> dict:
        """Drive the scenario to completion and return the summary dict.

        `observer`, when given, is called after every tick (drain included)
        so callers can watch live state without poking at the loop.
        """
        self.start()
        completed = False
        for _ in range(self.scenario.max_ticks):
            self.step()
            if observer is not None:
                observer(self)
            if self._scenario_complete():
                completed = True
                break
        # Drain = stop traffic, let in-flight work settle: agents freeze (no
        # new bookings or retries) and heartbeats go quiet (every empty block
        # is a broadcast, so a beating primary would never let the network
        # reach idle). Nodes, twins, and the network keep running.
        self.draining = True
        for node in self.nodes.values():
            node.heartbeats_on = False
        drained = 0
        while drained < self.scenario.drain_ticks and not self._converged():
            self.step()
            if observer is not None:
                observer(self)
            drained += 1
        return self.finalize(completed)

    def finalize(self, completed: bool) -> dict:
        if self.finished:
            raise ConfigError("run already finalized")
        self.finished = True
        heads = {nid: n.head_hash() for nid, n in self.nodes.items()}
        digests = {nid: n.state_digest() for nid, n in self.nodes.items()}
        self.violations.extend(agreement_violations(heads, digests))
        agreement = len(set(heads.values())) == 1 and (
            len(set(digests.values())) == 1)

        checked: set[str] = set()
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if node.head_hash() in checked:
                continue
            checked.add(node.head_hash())
            self.violations.extend(chain_exclusivity_violations(node.chain))
            self.violations.extend(money_violations(node.chain,
                                                    node.state.balances))
            self.violations.extend(replay_violations(
                node.chain, self.topo, self.rules, self.keyring,
                node.authority.verify, node.state_digest()))

        canonical = self.nodes[min(self.nodes)]
        self._emit(self.now, "RunFinished",
                   head_hash=canonical.head_hash(),
                   state_hash=canonical.state_digest(),
                   chain_length=canonical.height(),
                   agreement=agreement,
                   completed=completed,
                   violations=len(self.violations))
        return self.summary(completed)

    def summary(self, completed: bool) -> dict:
        canonical = self.nodes[min(self.nodes)]
        return {
            "name": self.scenario.name,
            "seed": self.scenario.seed,
            "ticks": self.now,
            "completed": completed,
            "agreement": len(set(n.head_hash()
                                 for n in self.nodes.values())) == 1,
            "violations": self.violations,
            "head_hash": canonical.head_hash(),
            "state_hash": canonical.state_digest(),
            "chain_length": canonical.height(),
            "event_digest": self.log.digest(self.scenario.hash_algo),
            "journeys": {jid: j.status for jid, j in
                         sorted(self.journeys.items())},
            "metrics": compute_metrics(self.log.events),
        }
