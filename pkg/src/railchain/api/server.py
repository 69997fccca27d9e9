"""HTTP face of a running world: one FastAPI app wrapping one World behind
one lock. Reads never mutate; every mutation is either a transaction
submitted to a node or an explicit control action (step, partition, heal).

Two clock modes: with a tick rate the world advances on a background
thread; with manual stepping it only moves on POST /control/step, which is
what the scripted drills and the UI integration tests rely on.
"""

from __future__ import annotations

import threading
import time

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware

from ..errors import ConfigError, ParseError, ValidationError
from ..ledger import Transaction
from ..metrics import compute_metrics
from ..world import World
from .schemas import (BookIn, ControlOut, JourneyCreate, JourneyOut,
                      PartitionIn, StepIn, StepOut, TxIn, TxResult, WalletOut)


def _journey_out(journey) -> dict:
    return {
        "id": journey.id,
        "train": journey.train,
        "origin": journey.origin,
        "destination": journey.dest,
        "depart": journey.depart_pref,
        "status": journey.status,
        "candidates": journey.candidates,
    }


class _Ticker(threading.Thread):
    def __init__(self, world: World, lock: threading.Lock, rate_hz: float):
        super().__init__(daemon=True)
        self.world = world
        self.lock = lock
        self.interval = 1.0 / rate_hz
        self.stop_flag = threading.Event()

    def run(self) -> None:
        while not self.stop_flag.is_set():
            time.sleep(self.interval)
            with self.lock:
                if not self.world.finished:
                    self.world.step()


def create_app(world: World, tick_rate: float | None = None) -> FastAPI:
    app = FastAPI(title="railchain", version="0.1.0",
                  description="ledger-coordinated railway control simulator")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    lock = threading.Lock()
    world.start()
    app.state.world = world
    app.state.lock = lock
    app.state.ticker = None
    if tick_rate:
        app.state.ticker = _Ticker(world, lock, tick_rate)
        app.state.ticker.start()

    def default_node() -> str:
        return min(world.nodes)

    def pick_node(node: str | None) -> str:
        if node is None:
            return default_node()
        if node not in world.nodes:
            raise HTTPException(404, f"unknown node {node!r}")
        return node

    # --- reads --------------------------------------------------------------

    @app.get("/topology")
    def get_topology() -> dict:
        with lock:
            return {
                "elements": world.topology_doc["elements"],
                "edges": world.topology_doc["edges"],
                "topology_hash": world.genesis_payload["topology_hash"],
            }

    @app.get("/state")
    def get_state(node: str | None = Query(default=None)) -> dict:
        with lock:
            nid = pick_node(node)
            n = world.nodes[nid]
            return {
                "node": nid,
                "now": world.now,
                "height": n.height(),
                "head_hash": n.head_hash(),
                "state_hash": n.state_digest(),
                "state": n.state_snapshot().canonical(),
            }

    @app.get("/chain")
    def get_chain(node: str | None = Query(default=None),
                  from_index: int = Query(default=0, alias="from", ge=0)) -> dict:
        with lock:
            nid = pick_node(node)
            n = world.nodes[nid]
            return {
                "node": nid,
                "height": n.height(),
                "head_hash": n.head_hash(),
                "blocks": [b.to_dict() for b in n.chain.blocks[from_index:]],
            }

    @app.get("/wallets/{addr}", response_model=WalletOut)
    def get_wallet(addr: str) -> WalletOut:
        with lock:
            n = world.nodes[default_node()]
            train = n.rules.wallet_to_train.get(addr)
            owner_of = next((eid for eid, el in world.topo.elements.items()
                             if el.owner_wallet == addr), None)
            if (train is None and owner_of is None
                    and addr not in n.state.balances):
                raise HTTPException(404, f"unknown wallet {addr!r}")
            return WalletOut(
                address=addr,
                balance=n.state.balances.get(addr, 0),
                nonce=n.state.nonces.get(addr, 0),
                train=train,
                owner_of=owner_of,
            )

    @app.get("/events")
    def get_events(since: int = Query(default=0, ge=0),
                   limit: int = Query(default=1000, ge=1, le=10_000)) -> dict:
        with lock:
            chunk = world.log.since(since)[:limit]
            return {
                "events": chunk,
                "next": since + len(chunk),
                "now": world.now,
            }

    @app.get("/metrics")
    def get_metrics() -> dict:
        with lock:
            out = compute_metrics(world.log.events)
            out["now"] = world.now
            out["heads"] = {nid: n.head_hash()
                            for nid, n in world.nodes.items()}
            return out

    @app.get("/journeys")
    def list_journeys() -> dict:
        with lock:
            return {"journeys": [_journey_out(j) for _, j in
                                 sorted(world.journeys.items())]}

    @app.get("/journeys/{jid}", response_model=JourneyOut)
    def get_journey(jid: str) -> dict:
        with lock:
            journey = world.journeys.get(jid)
            if journey is None:
                raise HTTPException(404, f"unknown journey {jid!r}")
            return _journey_out(journey)

    # --- mutations ------------------------------------------------------------

    @app.post("/tx", response_model=TxResult)
    def post_tx(tx: TxIn, node: str | None = Query(default=None)) -> TxResult:
        with lock:
            nid = pick_node(node)
            try:
                parsed = Transaction.from_dict(tx.model_dump())
            except (ParseError, ValidationError, KeyError, TypeError) as exc:
                raise HTTPException(422, f"malformed transaction: {exc}")
            ok, reason = world.nodes[nid].submit_tx(parsed, world.now)
            return TxResult(accepted=ok, reason=reason, txid=parsed.txid,
                            node=nid)

    @app.post("/journeys", response_model=JourneyOut)
    def post_journey(body: JourneyCreate) -> dict:
        with lock:
            train = body.train
            if train is None:
                if body.origin is None:
                    raise HTTPException(422, "need origin or train")
                train = world.train_at(body.origin)
                if train is None:
                    raise HTTPException(409,
                                        f"no train stands at {body.origin!r}")
            try:
                journey = world.create_journey(train, body.destination,
                                               body.depart, body.k)
            except ConfigError as exc:
                raise HTTPException(404, str(exc))
            if body.origin is not None and journey.origin != body.origin:
                world.journeys.pop(journey.id)
                raise HTTPException(
                    409, f"train {train} stands at {journey.origin!r}, "
                         f"not {body.origin!r}")
            return _journey_out(journey)

    @app.post("/journeys/{jid}/book", response_model=JourneyOut)
    def book_journey(jid: str, body: BookIn | None = None) -> dict:
        with lock:
            candidate = body.candidate if body else None
            try:
                journey = world.book_journey(jid, candidate)
            except ConfigError as exc:
                raise HTTPException(
                    404 if "unknown" in str(exc) else 409, str(exc))
            except RuntimeError as exc:
                raise HTTPException(409, str(exc))
            return _journey_out(journey)

    @app.post("/journeys/{jid}/cancel", response_model=JourneyOut)
    def cancel_journey(jid: str) -> dict:
        with lock:
            try:
                journey = world.cancel_journey(jid)
            except ConfigError as exc:
                raise HTTPException(
                    404 if "unknown" in str(exc) else 409, str(exc))
            return _journey_out(journey)

    # --- control --------------------------------------------------------------

    @app.post("/control/step", response_model=StepOut)
    def control_step(body: StepIn | None = None) -> StepOut:
        with lock:
            n = body.n if body else 1
            for _ in range(n):
                if world.finished:
                    break
                world.step()
            return StepOut(now=world.now, finished=world.finished)

    @app.post("/control/partition", response_model=ControlOut)
    def control_partition(body: PartitionIn) -> ControlOut:
        with lock:
            try:
                world.inject_partition(body.groups, body.until)
            except ConfigError as exc:
                raise HTTPException(422, str(exc))
            return ControlOut(now=world.now,
                              partitions=len(world.network.partitions))

    @app.post("/control/heal", response_model=ControlOut)
    def control_heal() -> ControlOut:
        with lock:
            world.heal_partitions()
            return ControlOut(now=world.now,
                              partitions=len(world.network.partitions))

    return app
