"""Gatekeeper rules: every state change is validated here before it may
enter the ledger, so a committed chain can never describe two trains
holding the same track at the same time.

All functions are pure over immutable snapshots: validate never mutates,
apply only mutates the state instance it is given (callers copy first).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ReplayError
from .ledger import Transaction
from .state import LedgerState, Reservation, TimeWindow
from .topology import Topology

# Reject reasons are part of the node API schema; exact strings matter.
CONFLICT = "Conflict"
INSUFFICIENT_FUNDS = "InsufficientFunds"
BAD_FEE = "BadFee"
UNKNOWN_ELEMENT = "UnknownElement"
NOT_OWNER = "NotOwner"
NO_SUCH_RESERVATION = "NoSuchReservation"
OCCUPIED = "Occupied"
WRONG_POSITION = "WrongPosition"
EXPIRED = "Expired"

REJECT_REASONS = (CONFLICT, INSUFFICIENT_FUNDS, BAD_FEE, UNKNOWN_ELEMENT,
                  NOT_OWNER, NO_SUCH_RESERVATION, OCCUPIED, WRONG_POSITION,
                  EXPIRED)


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reason: str | None = None


ACCEPT = Decision(True)


def reject(reason: str) -> Decision:
    return Decision(False, reason)


def fee_for(topo: Topology, element: str, window: TimeWindow) -> int:
    return topo.element(element).price_per_tick * (window.end - window.start)


class ContractRules:
    """Binds the gatekeeper to one genesis registry and one topology run.

    occupancy_reporter selects who may file occupancy reports: the train
    itself or the trackside element twin.
    """

    def __init__(self, genesis: dict, occupancy_reporter: str | None = None):
        self.genesis = genesis
        self.trains: dict[str, str] = dict(genesis.get("trains", {}))
        self.wallet_to_train = {w: t for t, w in self.trains.items()}
        self.occupancy_reporter = (
            occupancy_reporter or genesis.get("occupancy_reporter", "train"))
        if self.occupancy_reporter not in ("train", "element"):
            raise ValueError(
                f"occupancy_reporter must be train or element, "
                f"got {self.occupancy_reporter!r}")

    def wallet_of(self, train: str) -> str | None:
        return self.trains.get(train)

    def apply_genesis(self, state: LedgerState, genesis: dict,
                      topo: Topology) -> None:
        want = genesis.get("topology_hash")
        have = topo.content_hash(genesis.get("hash_algo", "sha256"))
        if want != have:
            raise ReplayError(f"chain is bound to topology {want}, got {have}")
        for addr, amount in genesis.get("allocations", {}).items():
            if not isinstance(amount, int) or amount < 0:
                raise ReplayError(f"genesis allocation for {addr} invalid")
            state.balances[addr] = amount
        for el in topo.elements.values():
            if el.is_switch:
                state.switch_should_be[el.id] = el.default_position
                state.switch_is[el.id] = el.default_position

    # --- validation -----------------------------------------------------

    def validate(self, state: LedgerState, topo: Topology, tx: Transaction,
                 now: int) -> Decision:
        handler = getattr(self, f"_validate_{tx.kind.lower()}", None)
        if handler is None:
            return reject(BAD_FEE)
        return handler(state, topo, tx, now)

    def _validate_reserve(self, state, topo, tx, now) -> Decision:
        p = tx.payload
        if p["element"] not in topo.elements:
            return reject(UNKNOWN_ELEMENT)
        el = topo.elements[p["element"]]
        if self.wallet_of(p.get("train", "")) != tx.sender:
            return reject(NOT_OWNER)
        pos = p.get("required_position")
        if el.is_switch:
            if pos is None or pos not in el.positions:
                return reject(WRONG_POSITION)
        elif pos is not None:
            return reject(WRONG_POSITION)
        start, end = p["window_start"], p["window_end"]
        if start < 0 or end <= start:
            return reject(EXPIRED)
        if end <= now:
            return reject(EXPIRED)
        window = TimeWindow(start, end)
        if p["fee"] != fee_for(topo, el.id, window):
            return reject(BAD_FEE)
        for res in state.reservations.values():
            if res.element == el.id and res.window.overlaps(window):
                return reject(CONFLICT)
        if state.balances.get(tx.sender, 0) < p["fee"]:
            return reject(INSUFFICIENT_FUNDS)
        return ACCEPT

    def _validate_release(self, state, topo, tx, now) -> Decision:
        p = tx.payload
        key = (p["train"], p["element"], p["window_start"], p["window_end"])
        res = state.reservations.get(key)
        if res is None:
            return reject(NO_SUCH_RESERVATION)
        if self.wallet_of(res.train) != tx.sender:
            return reject(NOT_OWNER)
        occupant = state.occupant(res.element)
        if occupant is not None and occupant != res.train:
            return reject(OCCUPIED)
        if p.get("rollback") and res.window.start > now:
            owner = topo.element(res.element).owner_wallet
            if state.balances.get(owner, 0) < res.fee:
                return reject(INSUFFICIENT_FUNDS)
        return ACCEPT

    def _validate_transfer(self, state, topo, tx, now) -> Decision:
        p = tx.payload
        amount = p.get("amount")
        if not isinstance(amount, int) or amount <= 0:
            return reject(BAD_FEE)
        if state.balances.get(tx.sender, 0) < amount:
            return reject(INSUFFICIENT_FUNDS)
        return ACCEPT

    def _validate_occupancyreport(self, state, topo, tx, now) -> Decision:
        p = tx.payload
        element = p.get("element")
        if element not in topo.elements:
            return reject(UNKNOWN_ELEMENT)
        train = p.get("train")
        if self.occupancy_reporter == "element":
            if topo.elements[element].owner_wallet != tx.sender:
                return reject(NOT_OWNER)
            if train is not None and train not in self.trains:
                return reject(NOT_OWNER)
            return ACCEPT
        if train is not None:
            if self.wallet_of(train) != tx.sender:
                return reject(NOT_OWNER)
        else:
            occupant = state.occupant(element)
            if occupant is None or self.wallet_of(occupant) != tx.sender:
                return reject(NOT_OWNER)
        return ACCEPT

    def _validate_switchcommand(self, state, topo, tx, now) -> Decision:
        p = tx.payload
        element = p.get("element")
        if element not in topo.elements:
            return reject(UNKNOWN_ELEMENT)
        el = topo.elements[element]
        if not el.is_switch or p.get("position") not in el.positions:
            return reject(WRONG_POSITION)
        controlling = self.controlling_reservation(state, element, now)
        if controlling is None:
            return reject(NO_SUCH_RESERVATION)
        if self.wallet_of(controlling.train) != tx.sender:
            return reject(CONFLICT)
        if p["position"] != controlling.required_position:
            return reject(WRONG_POSITION)
        return ACCEPT

    def _validate_switchack(self, state, topo, tx, now) -> Decision:
        p = tx.payload
        element = p.get("element")
        if element not in topo.elements:
            return reject(UNKNOWN_ELEMENT)
        el = topo.elements[element]
        if not el.is_switch or p.get("position") not in el.positions:
            return reject(WRONG_POSITION)
        if el.owner_wallet != tx.sender:
            return reject(NOT_OWNER)
        if state.switch_should_be.get(element) != p["position"]:
            return reject(WRONG_POSITION)
        return ACCEPT

    @staticmethod
    def controlling_reservation(state: LedgerState, element: str,
                                now: int) -> Reservation | None:
        """The reservation currently entitled to command the switch: the
        earliest-starting one that has not yet expired. A holder may
        pre-command before its window opens, but never while an earlier
        unexpired window belongs to someone else."""
        live = [r for r in state.reservations.values()
                if r.element == element and r.window.end > now]
        if not live:
            return None
        return min(live, key=lambda r: (r.window.start, r.train))

    # --- application ----------------------------------------------------

    def apply(self, state: LedgerState, topo: Topology, tx: Transaction) -> None:
        getattr(self, f"_apply_{tx.kind.lower()}")(state, topo, tx)

    def _apply_reserve(self, state, topo, tx) -> None:
        res = Reservation.from_payload(tx.payload)
        state.reservations[res.key()] = res
        owner = topo.element(res.element).owner_wallet
        state.balances[tx.sender] = state.balances.get(tx.sender, 0) - res.fee
        state.balances[owner] = state.balances.get(owner, 0) + res.fee

    def _apply_release(self, state, topo, tx) -> None:
        p = tx.payload
        key = (p["train"], p["element"], p["window_start"], p["window_end"])
        res = state.reservations.pop(key)
        if p.get("rollback") and res.window.start > state.tick_of_head:
            owner = topo.element(res.element).owner_wallet
            train_wallet = self.wallet_of(res.train)
            state.balances[owner] -= res.fee
            state.balances[train_wallet] = (
                state.balances.get(train_wallet, 0) + res.fee)

    def _apply_transfer(self, state, topo, tx) -> None:
        p = tx.payload
        state.balances[tx.sender] -= p["amount"]
        state.balances[p["to"]] = state.balances.get(p["to"], 0) + p["amount"]

    def _apply_occupancyreport(self, state, topo, tx) -> None:
        p = tx.payload
        if p.get("train") is None:
            state.occupancy_is.pop(p["element"], None)
        else:
            state.occupancy_is[p["element"]] = p["train"]

    def _apply_switchcommand(self, state, topo, tx) -> None:
        state.switch_should_be[tx.payload["element"]] = tx.payload["position"]

    def _apply_switchack(self, state, topo, tx) -> None:
        state.switch_is[tx.payload["element"]] = tx.payload["position"]


def expire_reservations(state: LedgerState, now: int) -> list[dict]:
    """Release payloads for reservations whose window has ended, unless the
    reserving train is still physically on the element (no implicit release
    while there is active usage)."""
    proposals = []
    for res in sorted(state.reservations.values(),
                      key=lambda r: (r.element, r.window.start, r.train)):
        if res.window.end <= now and state.occupant(res.element) != res.train:
            proposals.append({
                "train": res.train,
                "element": res.element,
                "window_start": res.window.start,
                "window_end": res.window.end,
                "rollback": False,
                "implicit": True,
            })
    return proposals


TX_PAYLOAD_KEYS = {
    "Reserve": {"train", "element", "window_start", "window_end",
                "required_position", "fee"},
    "Release": {"train", "element", "window_start", "window_end",
                "rollback", "implicit"},
    "Transfer": {"to", "amount"},
    "OccupancyReport": {"element", "train"},
    "SwitchCommand": {"element", "position"},
    "SwitchAck": {"element", "position"},
}


def payload_well_formed(tx: Transaction) -> bool:
    """Ingress schema check; malformed transactions never reach validate."""
    keys = TX_PAYLOAD_KEYS.get(tx.kind)
    if keys is None or not isinstance(tx.payload, dict):
        return False
    if set(tx.payload) != keys:
        return False
    ints = {k: v for k, v in tx.payload.items()
            if k in ("window_start", "window_end", "fee", "amount")}
    if any(not isinstance(v, int) or isinstance(v, bool) for v in ints.values()):
        return False
    return isinstance(tx.nonce, int) and tx.nonce > 0
