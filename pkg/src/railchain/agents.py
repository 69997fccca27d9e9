"""Train agents: plan a route, book it segment by segment, then drive it.

Booking is optimistic and sequential: each segment reservation is submitted
only after the previous one committed. Any rejection or timeout rolls back
the segments already held (rollback releases, full refund while the window
has not started) and the attempt is retried later from scratch.

While driving, entry into the next element needs three green lights, all
read from the agent's home-node ledger state:
  (a) our reservation for that element is committed and its window is open,
  (b) the ledger shows the element empty (or already ours),
  (c) if it is a switch, the acknowledged position matches our route.
A missing green light means the train waits; if its own window runs out
while waiting, it stops, releases what it still holds, and replans from
where it stands.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .ledger import make_tx
from .node import Node
from .routing import TimedRoute, filter_available, find_candidate_routes, schedule
from .topology import Topology

IDLE = "idle"
PLANNING = "planning"
BOOKING = "booking"
ROLLING_BACK = "rolling_back"
WAITING = "waiting"
RUNNING = "running"
ARRIVED = "arrived"
FAILED = "failed"

TERMINAL = (ARRIVED, FAILED)


@dataclass(frozen=True)
class AgentParams:
    ticks_per_element: int = 4
    margin: int = 1
    booking_lead: int = 5
    per_leg_lead: int = 5
    retry_backoff_ticks: int = 8
    retries: int = 3
    booking_timeout: int = 40
    k_routes: int = 3


@dataclass
class Journey:
    id: str
    train: str
    origin: str
    dest: str
    depart_pref: int
    status: str = "draft"
    departed_tick: int | None = None
    created_tick: int = 0
    candidates: list = field(default_factory=list)
    preferred_elements: tuple | None = None  # route picked at booking time


class TrainAgent:
    def __init__(self, train: str, wallet: str, node: Node, topo: Topology,
                 params: AgentParams, emit: Callable[..., None],
                 physical: dict[str, str], spawn_element: str):
        self.train = train
        self.wallet = wallet
        self.node = node
        self.topo = topo
        self.params = params
        self.emit = emit
        self.physical = physical  # shared element -> train map (ground truth)
        self.element = spawn_element
        self.state = IDLE
        self.journey: Journey | None = None

        self.plan: TimedRoute | None = None
        self.leg_txids: dict[int, str] = {}
        self.pos = 0
        self.next_leg = 0
        self.pending: tuple[str, int] | None = None  # (txid, submit tick)
        self.pending_rollbacks: list[str] = []
        self.retries_left = params.retries
        self.halted = False
        self.stop_reported = False
        self.must_halt = False
        self.next_nonce = 1
        self._switch_cmd: dict[str, tuple[str, int]] = {}
        self._entered_tick = 0
        self._plan_not_before = 0
        self._implicit_sent: dict[tuple, int] = {}

    # --- helpers ---------------------------------------------------------

    def _submit(self, kind: str, payload: dict, now: int) -> str:
        tx = make_tx(self.node.keyring, self.wallet, kind, payload,
                     self.next_nonce, self.node.chain.hash_algo())
        self.next_nonce += 1
        self.node.submit_tx(tx, now)
        return tx.txid

    def _report_occupancy(self, element: str, train: str | None,
                          now: int) -> None:
        if self.node.rules.occupancy_reporter != "train":
            return  # the element twin files reports in element mode
        self._submit("OccupancyReport", {"element": element, "train": train},
                     now)

    def spawn(self, now: int) -> None:
        occupant = self.physical.get(self.element)
        if occupant is not None and occupant != self.train:
            raise RuntimeError(
                f"{self.train} cannot spawn on occupied element {self.element}")
        self.physical[self.element] = self.train
        self._report_occupancy(self.element, self.train, now)

    # --- journey lifecycle -------------------------------------------------

    def assign(self, journey: Journey, now: int) -> None:
        if self.state not in (IDLE,) and self.state not in TERMINAL:
            raise RuntimeError(f"{self.train} is busy ({self.state})")
        if journey.origin != self.element:
            raise RuntimeError(
                f"{self.train} stands at {self.element}, not {journey.origin}")
        self.journey = journey
        journey.status = "planning"
        self.retries_left = self.params.retries
        self.halted = False
        self.stop_reported = False
        self.must_halt = False
        self.plan = None
        self.leg_txids = {}
        self.pending = None
        self.pending_rollbacks = []
        self.pos = 0
        self.next_leg = 0
        self.state = PLANNING
        self._plan_not_before = now
        if self.physical.get(self.element) != self.train:
            self.spawn(now)

    def step(self, now: int) -> None:
        self._implicit_releases(now)
        if self.state == PLANNING:
            self._step_planning(now)
        elif self.state == BOOKING:
            self._step_booking(now)
        elif self.state == ROLLING_BACK:
            self._step_rolling_back(now)
        elif self.state == WAITING:
            self._step_waiting(now)
        elif self.state == RUNNING:
            self._step_running(now)

    def _implicit_releases(self, now: int) -> None:
        """Give back our own reservations whose window ran out while we are
        no longer using the element. Pre-validated locally: never proposed
        while any train still stands there."""
        state = self.node.state
        for p in self.node.expired_reservations(now):
            if p["train"] != self.train:
                continue
            if state.occupant(p["element"]) is not None:
                continue  # gatekeeper would refuse; wait until it clears
            key = (p["train"], p["element"], p["window_start"],
                   p["window_end"])
            sent = self._implicit_sent.get(key)
            if sent is not None and now - sent < 6:
                continue
            self._submit("Release", p, now)
            self._implicit_sent[key] = now

    # --- planning ----------------------------------------------------------

    def _step_planning(self, now: int) -> None:
        if now < self._plan_not_before:
            return
        journey = self.journey
        if self.element == journey.dest:
            self._finish(now, travel_ticks=0)
            return
        routes = find_candidate_routes(self.topo, self.element, journey.dest,
                                       self.params.k_routes)
        if journey.preferred_elements is not None:
            # A candidate picked through the journey API goes first; length
            # order decides the rest (and covers it disappearing on retry).
            routes.sort(key=lambda r: r.elements != journey.preferred_elements)
        p = self.params
        state = self.node.state_snapshot()
        timed, depart = [], 0
        if routes:
            lead = p.booking_lead + p.per_leg_lead * len(routes[0].elements)
            depart = max(journey.depart_pref, now + lead)
            timed = filter_available(
                [schedule(self.topo, r, depart, p.ticks_per_element, p.margin)
                 for r in routes],
                state, self.train)
        if not timed:
            self._attempt_failed(now, at_index=0, element=self.element,
                                 reason="NoRoute")
            return
        self.plan = timed[0]
        self.leg_txids = {}
        self.next_leg = 0
        self.pos = 0
        self.pending = None
        self.state = BOOKING
        self.journey.status = "booking"
        self.emit(now, "PlanChosen", train=self.train,
                  journey=journey.id,
                  route=list(self.plan.route.elements),
                  depart=self.plan.depart, total_fee=self.plan.total_fee)

    # --- booking -------------------------------------------------------------

    def _step_booking(self, now: int) -> None:
        plan = self.plan
        if self.pending is None:
            if self.next_leg >= len(plan.route.elements):
                self.state = WAITING
                self.journey.status = "waiting"
                self.must_halt = False  # fully rebooked; brake off
                self.emit(now, "BookingSucceeded", train=self.train,
                          journey=self.journey.id,
                          n_elements=len(plan.route.elements))
                return
            element, window, fee = plan.leg(self.next_leg)
            txid = self._submit("Reserve", {
                "train": self.train,
                "element": element,
                "window_start": window.start,
                "window_end": window.end,
                "required_position": plan.route.position_of(element),
                "fee": fee,
            }, now)
            self.pending = (txid, now)
            return
        txid, since = self.pending
        status, detail = self.node.tx_status(txid)
        if status == "committed":
            element, window, _ = plan.leg(self.next_leg)
            self.emit(now, "ReserveCommitted", train=self.train,
                      element=element, window_start=window.start,
                      window_end=window.end)
            self.leg_txids[self.next_leg] = txid
            self.next_leg += 1
            self.pending = None
        elif status == "rejected":
            self.pending = None
            element = plan.route.elements[self.next_leg]
            self._attempt_failed(now, self.next_leg, element, detail)
        elif now - since > self.params.booking_timeout:
            self.pending = None
            element = plan.route.elements[self.next_leg]
            self._attempt_failed(now, self.next_leg, element, "Timeout")

    def _attempt_failed(self, now: int, at_index: int, element: str,
                        reason: str) -> None:
        self.emit(now, "BookingFailure", train=self.train, at_index=at_index,
                  element=element, reason=reason)
        self.retries_left -= 1
        self._rollback_legs(now, keep_current=self.journey.departed_tick
                            is not None)

    def _rollback_legs(self, now: int, keep_current: bool) -> None:
        """Release every held leg (rollback => refund if not yet started),
        then either retry or give up."""
        self.pending_rollbacks = []
        for i in sorted(self.leg_txids):
            if keep_current and i == self.pos:
                continue
            element, window, _ = self.plan.leg(i)
            if not self._holds(element, window):
                continue
            txid = self._submit("Release", {
                "train": self.train,
                "element": element,
                "window_start": window.start,
                "window_end": window.end,
                "rollback": True,
                "implicit": False,
            }, now)
            self.emit(now, "RollbackRelease", train=self.train,
                      element=element)
            self.pending_rollbacks.append(txid)
        self.leg_txids = {}
        self.state = ROLLING_BACK

    def _holds(self, element: str, window) -> bool:
        key = (self.train, element, window.start, window.end)
        return key in self.node.state.reservations

    def _step_rolling_back(self, now: int) -> None:
        for txid in self.pending_rollbacks:
            status, _ = self.node.tx_status(txid)
            if status not in ("committed", "rejected"):
                return
        self.pending_rollbacks = []
        if self.retries_left > 0:
            self.journey.depart_pref = now + self.params.retry_backoff_ticks
            self._plan_not_before = now + self.params.retry_backoff_ticks
            self.journey.status = "planning"
            self.state = PLANNING
            self.stop_reported = False
            return
        self.state = FAILED
        self.journey.status = "failed"
        self.emit(now, "JourneyFailed", train=self.train,
                  journey=self.journey.id, at_element=self.element)

    # --- reorg watch ----------------------------------------------------------

    def _reservations_intact(self, now: int) -> bool:
        """After a fork the winning branch may have shed our reservations;
        halt until the node's re-proposals commit again (or fail hard)."""
        lost_for_good = False
        missing = False
        for i in sorted(self.leg_txids):
            if i < self.pos:
                continue
            element, window, _ = self.plan.leg(i)
            if self._holds(element, window):
                continue
            if window.end <= now:
                continue  # ran out legitimately; movement logic replans
            status, _ = self.node.tx_status(self.leg_txids[i])
            if status == "rejected":
                lost_for_good = True
            else:
                missing = True
        if lost_for_good:
            self._emergency_stop(now, "reservation_lost")
            self._replan_from_here(now)
            return False
        if missing:
            if not self.halted:
                self.halted = True
                self._emergency_stop(now, "reservation_missing")
            return False
        if self.halted:
            self.halted = False
            self.stop_reported = False
            self.must_halt = False
        return True

    def _emergency_stop(self, now: int, reason: str) -> None:
        self.must_halt = True
        if not self.stop_reported:
            self.stop_reported = True
            self.emit(now, "EmergencyStop", train=self.train,
                      at_element=self.element, reason=reason)

    def _replan_from_here(self, now: int) -> None:
        """Stopped mid-journey: shed all holdings and rebook from the
        element we are standing on."""
        self.emit(now, "Replan", train=self.train, from_element=self.element)
        self.retries_left -= 1
        # Release the element under us too: the fresh plan re-reserves it.
        for i in sorted(self.leg_txids):
            element, window, _ = self.plan.leg(i)
            if not self._holds(element, window):
                continue
            txid = self._submit("Release", {
                "train": self.train,
                "element": element,
                "window_start": window.start,
                "window_end": window.end,
                "rollback": i > self.pos,
                "implicit": False,
            }, now)
            self.pending_rollbacks.append(txid)
            if i > self.pos:
                self.emit(now, "RollbackRelease", train=self.train,
                          element=element)
        self.leg_txids = {}
        self.state = ROLLING_BACK

    # --- waiting and running -----------------------------------------------------

    def _step_waiting(self, now: int) -> None:
        if not self._reservations_intact(now):
            return
        self._ensure_switch_command(now)
        if now >= self.plan.depart:
            if self.journey.departed_tick is None:
                self.journey.departed_tick = now
                self.emit(now, "Departed", train=self.train,
                          journey=self.journey.id)
            self.journey.status = "running"
            self.state = RUNNING
            self._entered_tick = now

    def _step_running(self, now: int) -> None:
        if not self._reservations_intact(now):
            return
        plan = self.plan
        last = len(plan.route.elements) - 1
        if self.pos == last:
            if now >= self._entered_tick + self.params.ticks_per_element:
                self._finish(now, now - self.journey.departed_tick)
            return
        self._ensure_switch_command(now)
        nxt = plan.route.elements[self.pos + 1]
        window = plan.windows[self.pos + 1]
        if window.end <= now:
            self._emergency_stop(now, "window_expired")
            self._replan_from_here(now)
            return
        if window.start > now:
            return
        if self._entry_clear(nxt, window, now):
            self._move(now)
        elif now >= plan.windows[self.pos].end:
            self._emergency_stop(now, "blocked")
            self._replan_from_here(now)

    def _entry_clear(self, nxt: str, window, now: int) -> bool:
        state = self.node.state
        key = (self.train, nxt, window.start, window.end)
        if key not in state.reservations:
            return False
        occupant = state.occupancy_is.get(nxt)
        if occupant is not None and occupant != self.train:
            return False
        actual = self.physical.get(nxt)
        if actual is not None and actual != self.train:
            return False
        el = self.topo.element(nxt)
        if el.is_switch:
            need = self.plan.route.position_of(nxt)
            if state.switch_is.get(nxt) != need:
                return False
        here = self.topo.element(self.element)
        if here.is_switch:
            # leaving a switch needs it held in our route position too
            need = self.plan.route.position_of(self.element)
            if need is not None and state.switch_is.get(self.element) != need:
                return False
        return True

    def _move(self, now: int) -> None:
        prev = self.element
        self.pos += 1
        nxt = self.plan.route.elements[self.pos]
        self.physical[nxt] = self.train
        self.physical.pop(prev, None)
        self.element = nxt
        self._entered_tick = now
        self.emit(now, "EnteredElement", train=self.train, element=nxt,
                  index=self.pos)
        self._report_occupancy(nxt, self.train, now)
        self._report_occupancy(prev, None, now)
        self._release_leg(now, self.pos - 1)

    def _release_leg(self, now: int, i: int) -> None:
        element, window, _ = self.plan.leg(i)
        if not self._holds(element, window):
            return
        self._submit("Release", {
            "train": self.train,
            "element": element,
            "window_start": window.start,
            "window_end": window.end,
            "rollback": False,
            "implicit": False,
        }, now)
        self.emit(now, "EagerRelease", train=self.train, element=element)
        self.leg_txids.pop(i, None)

    def _ensure_switch_command(self, now: int) -> None:
        """One element ahead: make sure the next switch (and the one we may
        be standing on) is commanded to our position early enough for the
        twin to actuate and acknowledge."""
        if self.plan is None:
            return
        for target in (self.pos, self.pos + 1):
            if target >= len(self.plan.route.elements):
                continue
            self._command_switch(self.plan.route.elements[target], now)

    def _command_switch(self, element: str, now: int) -> None:
        el = self.topo.element(element)
        if not el.is_switch:
            return
        need = self.plan.route.position_of(element)
        state = self.node.state
        if need is None or state.switch_should_be.get(element) == need:
            return
        last = self._switch_cmd.get(element)
        if last is not None:
            txid, since = last
            status, _ = self.node.tx_status(txid)
            if status == "pending" or now - since < 3:
                return  # give the pool or a rejected command a beat
        txid = self._submit("SwitchCommand",
                            {"element": element, "position": need}, now)
        self._switch_cmd[element] = (txid, now)
        self.emit(now, "SwitchCommanded", train=self.train, element=element,
                  position=need)

    def cancel(self, now: int) -> None:
        """Withdraw the journey: shed every outstanding reservation and go
        idle where we stand. The train keeps occupying its element."""
        journey = self.journey
        if journey is None or journey.status in ("arrived", "failed",
                                                 "cancelled"):
            return
        if self.plan is not None:
            for i in sorted(self.leg_txids):
                element, window, _ = self.plan.leg(i)
                if not self._holds(element, window):
                    continue
                self._submit("Release", {
                    "train": self.train,
                    "element": element,
                    "window_start": window.start,
                    "window_end": window.end,
                    "rollback": window.start > now,
                    "implicit": False,
                }, now)
        self.leg_txids = {}
        self.pending = None
        self.pending_rollbacks = []
        self.plan = None
        self.halted = False
        self.stop_reported = False
        self.must_halt = False
        self.state = IDLE
        journey.status = "cancelled"
        self.emit(now, "JourneyCancelled", train=self.train,
                  journey=journey.id)

    def _finish(self, now: int, travel_ticks: int) -> None:
        if self.plan is not None and self.plan.route.elements:
            self._release_leg(now, len(self.plan.route.elements) - 1)
        self._report_occupancy(self.element, None, now)
        self.physical.pop(self.element, None)
        self.state = ARRIVED
        self.journey.status = "arrived"
        self.emit(now, "Arrived", train=self.train, journey=self.journey.id,
                  travel_ticks=travel_ticks)
