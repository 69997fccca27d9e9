"""Trackside element twins: the physical half of each track element.

A switch twin watches the ledger's should-be position, actuates the
physical blades after a delay, and acknowledges on-chain with the element
owner's wallet. In element-reporter mode a twin also files occupancy
reports for its element instead of trusting the trains to do it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ledger import make_tx
from .node import Node
from .topology import Topology


@dataclass
class PendingMove:
    target: str
    ready_tick: int


@dataclass
class ElementTwin:
    element_id: str
    owner_wallet: str
    node: Node
    actuation_delay: int = 2
    next_nonce: int = 1
    physical_position: str | None = None
    moving: PendingMove | None = None
    _last_reported: str | None = field(default=None, repr=False)
    _last_ack_tick: int = field(default=-10, repr=False)

    def _submit(self, kind: str, payload: dict, now: int) -> str:
        tx = make_tx(self.node.keyring, self.owner_wallet, kind, payload,
                     self.next_nonce, self.node.chain.hash_algo())
        self.next_nonce += 1
        self.node.submit_tx(tx, now)
        return tx.txid

    def step(self, now: int, topo: Topology, emit,
             physical_occupancy: dict[str, str],
             report_occupancy: bool) -> None:
        el = topo.element(self.element_id)
        state = self.node.state
        if el.is_switch:
            self._drive_switch(now, state, emit)
        if report_occupancy:
            self._report_occupancy(now, state, physical_occupancy)

    def _drive_switch(self, now: int, state, emit) -> None:
        should_be = state.switch_should_be.get(self.element_id)
        if self.moving is not None:
            if self.moving.target != should_be:
                self.moving = None  # command changed under us; restart below
            elif now >= self.moving.ready_tick:
                self.physical_position = self.moving.target
                self.moving = None
                self._ack(now, emit)
                return
            else:
                return
        if should_be is not None and should_be != self.physical_position:
            self.moving = PendingMove(should_be, now + self.actuation_delay)
        elif (should_be == self.physical_position
              and state.switch_is.get(self.element_id) != self.physical_position
              and now - self._last_ack_tick >= 4):
            self._ack(now, emit)  # earlier ack got lost or rejected

    def _ack(self, now: int, emit) -> None:
        self._last_ack_tick = now
        self._submit("SwitchAck", {
            "element": self.element_id,
            "position": self.physical_position,
        }, now)
        emit(now, "SwitchAcked", element=self.element_id,
             position=self.physical_position)

    def _report_occupancy(self, now: int, state,
                          physical_occupancy: dict[str, str]) -> None:
        actual = physical_occupancy.get(self.element_id)
        ledger_view = state.occupancy_is.get(self.element_id)
        if actual == ledger_view or actual == self._last_reported:
            if actual == ledger_view:
                self._last_reported = None
            return
        self._submit("OccupancyReport", {
            "element": self.element_id,
            "train": actual,
        }, now)
        self._last_reported = actual
