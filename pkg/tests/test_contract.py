import pytest

from railchain import topogen
from railchain.contract import (ContractRules, TX_PAYLOAD_KEYS,
                                expire_reservations, fee_for,
                                payload_well_formed)
from railchain.crypto import convention_secret
from railchain.ledger import make_tx
from railchain.state import LedgerState, Reservation, TimeWindow


@pytest.fixture()
def ring(keyring):
    for train in ("T1", "T2"):
        keyring.register(convention_secret("train", train))
    return keyring


def wallets(ring):
    return {t: ring.address_of(convention_secret("train", t))
            for t in ("T1", "T2")}


def rules_for(ring, reporter="train"):
    return ContractRules({"trains": wallets(ring),
                          "occupancy_reporter": reporter})


def fresh_state(ring, topo, balance=100):
    state = LedgerState()
    for w in wallets(ring).values():
        state.balances[w] = balance
    for el in topo.elements.values():
        state.balances.setdefault(el.owner_wallet, 0)
        if el.is_switch:
            state.switch_should_be[el.id] = el.default_position
            state.switch_is[el.id] = el.default_position
    return state


def reserve_tx(ring, train, element, start, end, fee, pos=None, nonce=1):
    return make_tx(ring, wallets(ring)[train], "Reserve", {
        "train": train, "element": element, "window_start": start,
        "window_end": end, "required_position": pos, "fee": fee}, nonce)


def release_tx(ring, sender_train, payload_train, element, start, end,
               rollback=False, nonce=2):
    return make_tx(ring, wallets(ring)[sender_train], "Release", {
        "train": payload_train, "element": element, "window_start": start,
        "window_end": end, "rollback": rollback, "implicit": False}, nonce)


def put_reservation(state, train, element, start, end, fee=0, pos=None):
    res = Reservation(train, element, TimeWindow(start, end), pos, fee)
    state.reservations[res.key()] = res
    return res


# --- Reserve -----------------------------------------------------------------

def test_reserve_accept_and_apply(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    tx = reserve_tx(ring, "T1", "B2", 5, 10, fee=5)
    assert rules.validate(state, tiny3, tx, now=0).accepted
    rules.apply(state, tiny3, tx)
    w1 = wallets(ring)["T1"]
    owner = tiny3.element("B2").owner_wallet
    assert state.balances[w1] == 95
    assert state.balances[owner] == 5
    assert state.reservations[("T1", "B2", 5, 10)].fee == 5


def test_reserve_overlap_conflict(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    put_reservation(state, "T2", "B2", 5, 10)
    for start, end in ((7, 12), (0, 6), (5, 10), (9, 10)):
        tx = reserve_tx(ring, "T1", "B2", start, end, fee=end - start)
        assert rules.validate(state, tiny3, tx, 0).reason == "Conflict"


def test_reserve_abutting_windows_accepted(ring, tiny3):
    """[0,5) and [5,10) share only the boundary tick, which belongs to the
    second window; both may stand."""
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    put_reservation(state, "T2", "B2", 0, 5)
    tx = reserve_tx(ring, "T1", "B2", 5, 10, fee=5)
    assert rules.validate(state, tiny3, tx, 0).accepted


def test_reserve_reject_reasons(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    cases = [
        (reserve_tx(ring, "T1", "B9", 5, 10, 5), "UnknownElement"),
        (reserve_tx(ring, "T1", "B2", 5, 10, 4), "BadFee"),
        (reserve_tx(ring, "T1", "B2", 5, 5, 0), "Expired"),
        (reserve_tx(ring, "T1", "B2", 5, 10, 5, pos="left"), "WrongPosition"),
        (reserve_tx(ring, "T1", "B2", 0, 300, 300), "InsufficientFunds"),
    ]
    for tx, reason in cases:
        assert rules.validate(state, tiny3, tx, 0).reason == reason


def test_reserve_expired_window(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    tx = reserve_tx(ring, "T1", "B2", 5, 10, 5)
    assert rules.validate(state, tiny3, tx, now=10).reason == "Expired"
    assert rules.validate(state, tiny3, tx, now=9).accepted


def test_reserve_not_owner(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    tx = make_tx(ring, wallets(ring)["T2"], "Reserve", {
        "train": "T1", "element": "B2", "window_start": 5, "window_end": 10,
        "required_position": None, "fee": 5}, 1)
    assert rules.validate(state, tiny3, tx, 0).reason == "NotOwner"


def test_reserve_on_switch_needs_position(ring, keyring):
    topo = topogen.switchy(keyring)
    rules, state = rules_for(ring), fresh_state(ring, topo)
    fee = fee_for(topo, "S1", TimeWindow(5, 10))
    missing = reserve_tx(ring, "T1", "S1", 5, 10, fee)
    assert rules.validate(state, topo, missing, 0).reason == "WrongPosition"
    bad = reserve_tx(ring, "T1", "S1", 5, 10, fee, pos="up")
    assert rules.validate(state, topo, bad, 0).reason == "WrongPosition"
    good = reserve_tx(ring, "T1", "S1", 5, 10, fee, pos="right")
    assert rules.validate(state, topo, good, 0).accepted


# --- Release -----------------------------------------------------------------

def test_release_reject_reasons(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    missing = release_tx(ring, "T1", "T1", "B2", 5, 10)
    assert rules.validate(state, tiny3, missing, 0).reason == "NoSuchReservation"
    put_reservation(state, "T1", "B2", 5, 10)
    foreign = release_tx(ring, "T2", "T1", "B2", 5, 10)
    assert rules.validate(state, tiny3, foreign, 0).reason == "NotOwner"
    state.occupancy_is["B2"] = "T2"
    held = release_tx(ring, "T1", "T1", "B2", 5, 10)
    assert rules.validate(state, tiny3, held, 0).reason == "Occupied"
    state.occupancy_is["B2"] = "T1"  # own occupancy never blocks a release
    assert rules.validate(state, tiny3, held, 0).accepted


def test_release_rollback_refunds_before_start(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    w1 = wallets(ring)["T1"]
    owner = tiny3.element("B2").owner_wallet
    reserve = reserve_tx(ring, "T1", "B2", 5, 10, 5)
    rules.apply(state, tiny3, reserve)
    state.tick_of_head = 2  # before the window opens
    back = release_tx(ring, "T1", "T1", "B2", 5, 10, rollback=True)
    assert rules.validate(state, tiny3, back, 2).accepted
    rules.apply(state, tiny3, back)
    assert state.balances[w1] == 100
    assert state.balances[owner] == 0
    assert state.reservations == {}


def test_release_rollback_keeps_fee_after_start(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    w1 = wallets(ring)["T1"]
    rules.apply(state, tiny3, reserve_tx(ring, "T1", "B2", 5, 10, 5))
    state.tick_of_head = 7  # window already open: the slot was consumed
    rules.apply(state, tiny3,
                release_tx(ring, "T1", "T1", "B2", 5, 10, rollback=True))
    assert state.balances[w1] == 95
    assert state.reservations == {}


def test_release_plain_never_refunds(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    w1 = wallets(ring)["T1"]
    rules.apply(state, tiny3, reserve_tx(ring, "T1", "B2", 5, 10, 5))
    state.tick_of_head = 0
    rules.apply(state, tiny3,
                release_tx(ring, "T1", "T1", "B2", 5, 10, rollback=False))
    assert state.balances[w1] == 95


def test_release_rollback_needs_owner_funds(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    put_reservation(state, "T1", "B2", 5, 10, fee=5)
    owner = tiny3.element("B2").owner_wallet
    state.balances[owner] = 0  # fee was never paid into this state
    back = release_tx(ring, "T1", "T1", "B2", 5, 10, rollback=True)
    assert rules.validate(state, tiny3, back, 0).reason == "InsufficientFunds"


# --- Transfer ------------------------------------------------------------------

def test_transfer_validate_and_apply(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    w = wallets(ring)
    tx = make_tx(ring, w["T1"], "Transfer", {"to": w["T2"], "amount": 30}, 1)
    assert rules.validate(state, tiny3, tx, 0).accepted
    rules.apply(state, tiny3, tx)
    assert state.balances[w["T1"]] == 70
    assert state.balances[w["T2"]] == 130


def test_transfer_rejects(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    w = wallets(ring)
    for amount, reason in ((0, "BadFee"), (-3, "BadFee"), ("5", "BadFee"),
                           (101, "InsufficientFunds")):
        tx = make_tx(ring, w["T1"], "Transfer",
                     {"to": w["T2"], "amount": amount}, 1)
        assert rules.validate(state, tiny3, tx, 0).reason == reason


# --- OccupancyReport --------------------------------------------------------------

def test_occupancy_train_mode(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    w = wallets(ring)
    enter = make_tx(ring, w["T1"], "OccupancyReport",
                    {"element": "B2", "train": "T1"}, 1)
    assert rules.validate(state, tiny3, enter, 0).accepted
    rules.apply(state, tiny3, enter)
    assert state.occupant("B2") == "T1"

    impostor = make_tx(ring, w["T2"], "OccupancyReport",
                       {"element": "B2", "train": "T1"}, 1)
    assert rules.validate(state, tiny3, impostor, 0).reason == "NotOwner"

    # Clearing is only for whoever is actually standing there.
    wrong_clear = make_tx(ring, w["T2"], "OccupancyReport",
                          {"element": "B2", "train": None}, 1)
    assert rules.validate(state, tiny3, wrong_clear, 0).reason == "NotOwner"
    clear = make_tx(ring, w["T1"], "OccupancyReport",
                    {"element": "B2", "train": None}, 2)
    assert rules.validate(state, tiny3, clear, 0).accepted
    rules.apply(state, tiny3, clear)
    assert state.occupant("B2") is None


def test_occupancy_element_mode(ring, tiny3):
    rules = rules_for(ring, reporter="element")
    state = fresh_state(ring, tiny3)
    owner = tiny3.element("B2").owner_wallet
    ok = make_tx(ring, owner, "OccupancyReport",
                 {"element": "B2", "train": "T1"}, 1)
    assert rules.validate(state, tiny3, ok, 0).accepted
    from_train = make_tx(ring, wallets(ring)["T1"], "OccupancyReport",
                         {"element": "B2", "train": "T1"}, 1)
    assert rules.validate(state, tiny3, from_train, 0).reason == "NotOwner"
    ghost = make_tx(ring, owner, "OccupancyReport",
                    {"element": "B2", "train": "T9"}, 1)
    assert rules.validate(state, tiny3, ghost, 0).reason == "NotOwner"


def test_occupancy_unknown_element(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    tx = make_tx(ring, wallets(ring)["T1"], "OccupancyReport",
                 {"element": "B9", "train": "T1"}, 1)
    assert rules.validate(state, tiny3, tx, 0).reason == "UnknownElement"


# --- switches ----------------------------------------------------------------------

def test_switch_command_lifecycle(ring, keyring):
    topo = topogen.switchy(keyring)
    rules, state = rules_for(ring), fresh_state(ring, topo)
    w = wallets(ring)

    cmd = make_tx(ring, w["T1"], "SwitchCommand",
                  {"element": "S1", "position": "right"}, 1)
    # Nobody holds S1 yet: no command rights.
    assert rules.validate(state, topo, cmd, 0).reason == "NoSuchReservation"

    put_reservation(state, "T1", "S1", 5, 10, pos="right")
    assert rules.validate(state, topo, cmd, 0).accepted
    rules.apply(state, topo, cmd)
    assert state.switch_should_be["S1"] == "right"

    # The commanded position must be what the reservation asked for.
    off_plan = make_tx(ring, w["T1"], "SwitchCommand",
                       {"element": "S1", "position": "left"}, 2)
    assert rules.validate(state, topo, off_plan, 0).reason == "WrongPosition"

    # Another train cannot command while T1's window controls the switch.
    thief = make_tx(ring, w["T2"], "SwitchCommand",
                    {"element": "S1", "position": "right"}, 1)
    assert rules.validate(state, topo, thief, 0).reason == "Conflict"


def test_switch_command_on_block(ring, tiny3):
    rules, state = rules_for(ring), fresh_state(ring, tiny3)
    tx = make_tx(ring, wallets(ring)["T1"], "SwitchCommand",
                 {"element": "B2", "position": "left"}, 1)
    assert rules.validate(state, tiny3, tx, 0).reason == "WrongPosition"


def test_switch_ack(ring, keyring):
    topo = topogen.switchy(keyring)
    rules, state = rules_for(ring), fresh_state(ring, topo)
    owner = topo.element("S1").owner_wallet
    state.switch_should_be["S1"] = "right"

    ack = make_tx(ring, owner, "SwitchAck",
                  {"element": "S1", "position": "right"}, 1)
    assert rules.validate(state, topo, ack, 0).accepted
    rules.apply(state, topo, ack)
    assert state.switch_is["S1"] == "right"

    stale = make_tx(ring, owner, "SwitchAck",
                    {"element": "S1", "position": "left"}, 2)
    assert rules.validate(state, topo, stale, 0).reason == "WrongPosition"
    forged = make_tx(ring, wallets(ring)["T1"], "SwitchAck",
                     {"element": "S1", "position": "right"}, 1)
    assert rules.validate(state, topo, forged, 0).reason == "NotOwner"


def test_controlling_reservation_order(ring, tiny3):
    state = LedgerState()
    put_reservation(state, "T2", "B2", 8, 12)
    put_reservation(state, "T1", "B2", 4, 8)
    ctl = ContractRules.controlling_reservation
    assert ctl(state, "B2", now=5).train == "T1"
    # T1's window has ended; control passes to the next holder.
    assert ctl(state, "B2", now=8).train == "T2"
    assert ctl(state, "B2", now=12) is None
    assert ctl(state, "B9", now=0) is None


# --- expiry ---------------------------------------------------------------------

def test_expire_reservations_order_and_shape(ring):
    state = LedgerState()
    put_reservation(state, "T2", "B2", 0, 6)
    put_reservation(state, "T1", "B1", 0, 4)
    put_reservation(state, "T1", "B2", 0, 4)
    put_reservation(state, "T1", "B3", 5, 9)  # still live at now=6
    before = dict(state.reservations)
    out = expire_reservations(state, now=6)
    assert [(p["element"], p["window_start"], p["train"]) for p in out] == \
        [("B1", 0, "T1"), ("B2", 0, "T1"), ("B2", 0, "T2")]
    assert out[0] == {"train": "T1", "element": "B1", "window_start": 0,
                      "window_end": 4, "rollback": False, "implicit": True}
    assert state.reservations == before  # scan is read-only


def test_expire_skips_occupied_by_holder(ring):
    state = LedgerState()
    put_reservation(state, "T1", "B2", 0, 4)
    state.occupancy_is["B2"] = "T1"
    assert expire_reservations(state, now=10) == []
    state.occupancy_is["B2"] = "T2"  # someone else there: holder's hold ended
    assert len(expire_reservations(state, now=10)) == 1


def test_expire_boundary_is_window_end(ring):
    state = LedgerState()
    put_reservation(state, "T1", "B2", 0, 4)
    assert expire_reservations(state, now=3) == []
    assert len(expire_reservations(state, now=4)) == 1


# --- payload schema -----------------------------------------------------------------

def test_payload_well_formed_exact_keys(ring):
    w1 = wallets(ring)["T1"]
    good = make_tx(ring, w1, "Transfer", {"to": "x", "amount": 1}, 1)
    assert payload_well_formed(good)
    extra = make_tx(ring, w1, "Transfer",
                    {"to": "x", "amount": 1, "memo": "hi"}, 1)
    assert not payload_well_formed(extra)
    short = make_tx(ring, w1, "Transfer", {"to": "x"}, 1)
    assert not payload_well_formed(short)


def test_payload_well_formed_int_fields(ring):
    w1 = wallets(ring)["T1"]
    bool_amount = make_tx(ring, w1, "Transfer", {"to": "x", "amount": True}, 1)
    assert not payload_well_formed(bool_amount)
    str_start = make_tx(ring, w1, "Reserve", {
        "train": "T1", "element": "B2", "window_start": "5", "window_end": 10,
        "required_position": None, "fee": 5}, 1)
    assert not payload_well_formed(str_start)


def test_payload_well_formed_nonce(ring):
    w1 = wallets(ring)["T1"]
    zero = make_tx(ring, w1, "Transfer", {"to": "x", "amount": 1}, 0)
    assert not payload_well_formed(zero)


def test_payload_keys_cover_all_kinds():
    assert set(TX_PAYLOAD_KEYS) == {"Reserve", "Release", "Transfer",
                                    "OccupancyReport", "SwitchCommand",
                                    "SwitchAck"}


def test_fee_for(ring, tiny3):
    assert fee_for(tiny3, "B2", TimeWindow(3, 8)) == 5
