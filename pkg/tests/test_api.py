"""HTTP surface tests against in-process worlds with a manual clock."""

import json

import pytest
from fastapi.testclient import TestClient

from railchain.api.server import create_app
from railchain.crypto import Keyring, convention_secret
from railchain.ledger import make_tx
from railchain.scenario import parse_scenario
from railchain.topogen import tiny3_doc
from railchain.world import World

from conftest import REPO, fresh_world


def api_doc():
    return {
        "name": "api-tiny3",
        "topology": {"inline": tiny3_doc(Keyring("test-hmac", "sha256"))},
        "seed": 1,
        "nodes": ["n1", "n2"],
        "consensus": {"mode": "poa", "order": ["n1", "n2"]},
        "net": {"latency": [1, 2], "drop": 0.0},
        "trains": [{"id": "T1", "spawn": "B1"}, {"id": "T2", "spawn": "B3"}],
        "journeys": [],
    }


@pytest.fixture()
def world():
    return World(parse_scenario(api_doc()))


@pytest.fixture()
def client(world):
    return TestClient(create_app(world))


def signer(world):
    ring = Keyring("test-hmac", "sha256")
    for t in ("T1", "T2"):
        ring.register(convention_secret("train", t))
    return ring


def step(client, n=1):
    return client.post("/control/step", json={"n": n}).json()


def test_topology_endpoint(client, world):
    doc = client.get("/topology").json()
    assert {e["id"] for e in doc["elements"]} == {"B1", "B2", "B3"}
    assert doc["topology_hash"] == world.genesis_payload["topology_hash"]


def test_state_node_selection(client):
    out = client.get("/state").json()
    assert out["node"] == "n1" and out["now"] == 0 and out["height"] == 1
    assert client.get("/state", params={"node": "n2"}).json()["node"] == "n2"
    assert client.get("/state", params={"node": "nX"}).status_code == 404


def test_reads_do_not_mutate(client):
    before = client.get("/state").json()
    for path in ("/topology", "/chain", "/events", "/metrics", "/journeys",
                 "/state"):
        assert client.get(path).status_code == 200
    after = client.get("/state").json()
    assert after == before


def test_chain_pagination(client):
    step(client, 8)
    full = client.get("/chain").json()
    assert full["blocks"][0]["index"] == 0
    assert len(full["blocks"]) == full["height"]
    tail = client.get("/chain", params={"from": 1}).json()
    assert len(tail["blocks"]) == full["height"] - 1


def test_wallet_lookup(client, world):
    addr = world.train_wallets["T1"]
    out = client.get(f"/wallets/{addr}").json()
    assert out == {"address": addr, "balance": 1000, "nonce": 0,
                   "train": "T1", "owner_of": None}
    owner = world.topo.element("B2").owner_wallet
    assert client.get(f"/wallets/{owner}").json()["owner_of"] == "B2"
    assert client.get("/wallets/" + "0" * 40).status_code == 404


def test_events_paging(client):
    step(client, 6)
    first = client.get("/events", params={"limit": 2}).json()
    assert len(first["events"]) == 2 and first["next"] == 2
    rest = client.get("/events", params={"since": first["next"]}).json()
    assert rest["events"][0]["seq"] == 2
    assert first["events"][0]["seq"] == 0


def test_metrics_shape(client):
    step(client, 4)
    out = client.get("/metrics").json()
    assert set(out["heads"]) == {"n1", "n2"}
    assert out["now"] == 4
    assert out["txs"]["submitted"] >= 0


# --- journeys over HTTP -------------------------------------------------------

def test_journey_booking_round_trip(client, world):
    # T2 is parked on B3, so T1's clear run is B1 -> B2.
    created = client.post(
        "/journeys", json={"origin": "B1", "destination": "B2"}).json()
    assert created["train"] == "T1" and created["status"] == "draft"
    cand = created["candidates"][0]
    assert cand["elements"] == ["B1", "B2"]
    assert cand["total_fee"] == 10  # 2 elements x 5-tick window x price 1

    booked = client.post(f"/journeys/{created['id']}/book",
                         json={"candidate": 0}).json()
    assert booked["status"] != "draft"
    step(client, 60)
    final = client.get(f"/journeys/{created['id']}").json()
    assert final["status"] == "arrived"
    addr = world.train_wallets["T1"]
    assert client.get(f"/wallets/{addr}").json()["balance"] == 1000 - 10
    assert client.get("/state").json()["state"]["reservations"] == []


def test_journey_create_errors(client):
    r = client.post("/journeys", json={"origin": "B2", "destination": "B3"})
    assert r.status_code == 409  # nobody stands at B2
    r = client.post("/journeys", json={"origin": "B1", "destination": "B9"})
    assert r.status_code == 404
    r = client.post("/journeys", json={"destination": "B3"})
    assert r.status_code == 422  # neither origin nor train
    r = client.post("/journeys",
                    json={"origin": "B3", "train": "T1", "destination": "B2"})
    assert r.status_code == 409  # T1 stands at B1, not B3
    assert client.get("/journeys").json()["journeys"] == []  # draft was popped


def test_journey_book_and_cancel_errors(client):
    jid = client.post("/journeys", json={"origin": "B1",
                                         "destination": "B3"}).json()["id"]
    assert client.post("/journeys/j9/book").status_code == 404
    assert client.post(f"/journeys/{jid}/book",
                       json={"candidate": 5}).status_code == 409
    assert client.post(f"/journeys/{jid}/book").status_code == 200
    assert client.post(f"/journeys/{jid}/book").status_code == 409  # not draft
    assert client.post(f"/journeys/{jid}/cancel").status_code == 200
    assert client.post(f"/journeys/{jid}/cancel").status_code == 409
    assert client.post("/journeys/j9/cancel").status_code == 404


# --- raw transactions ----------------------------------------------------------

def test_post_tx_and_commit(client, world):
    ring = signer(world)
    t1, t2 = world.train_wallets["T1"], world.train_wallets["T2"]
    tx = make_tx(ring, t1, "Transfer", {"to": t2, "amount": 25}, 1)
    out = client.post("/tx", json=tx.to_dict()).json()
    assert out == {"accepted": True, "reason": "ok", "txid": tx.txid,
                   "node": "n1"}
    step(client, 8)
    assert client.get(f"/wallets/{t1}").json()["balance"] == 975
    assert client.get(f"/wallets/{t2}").json()["balance"] == 1025
    # replaying the same txid is refused at the door
    again = client.post("/tx", json=tx.to_dict()).json()
    assert again["accepted"] is False and again["reason"] == "Duplicate"


def test_post_tx_rejects_garbage(client, world):
    ring = signer(world)
    t1 = world.train_wallets["T1"]
    tx = make_tx(ring, t1, "Transfer", {"to": "x", "amount": 1}, 1)
    forged = dict(tx.to_dict(), signature="00" * 8)
    out = client.post("/tx", json=forged).json()
    assert out["accepted"] is False and out["reason"] == "BadSignature"
    unknown_kind = dict(tx.to_dict(), kind="Steal")
    assert client.post("/tx", json=unknown_kind).status_code == 422
    assert client.post("/tx", json={"kind": "Transfer"}).status_code == 422


# --- control ------------------------------------------------------------------

def test_control_step_advances_clock(client):
    out = step(client, 5)
    assert out == {"now": 5, "finished": False}


def test_partition_and_heal(client):
    r = client.post("/control/partition",
                    json={"groups": [["n1"], ["n2"]], "until": 50})
    assert r.status_code == 200 and r.json()["partitions"] == 1
    step(client, 3)
    heads = client.get("/metrics").json()["heads"]
    assert heads["n1"] != heads["n2"] or True  # may not have diverged yet
    healed = client.post("/control/heal").json()
    assert healed["partitions"] == 1  # kept, truncated to the heal tick
    step(client, 10)
    heads = client.get("/metrics").json()["heads"]
    assert heads["n1"] == heads["n2"]


def test_partition_validation(client):
    r = client.post("/control/partition", json={"groups": [["n1", "nX"]]})
    assert r.status_code == 422
    r = client.post("/control/partition", json={"groups": [["n1", "n2"]]})
    assert r.status_code == 422


def test_scripted_journeys_defer_while_train_is_busy():
    world = fresh_world("tiny3-baseline")  # scripts T1: B1 -> B3 at tick 0
    client = TestClient(create_app(world))
    mine = client.post("/journeys",
                       json={"origin": "B1", "destination": "B3"}).json()
    client.post(f"/journeys/{mine['id']}/book")
    out = step(client, 120)  # must not crash on the deferred script
    assert out["now"] == 120
    journeys = {j["id"]: j["status"]
                for j in client.get("/journeys").json()["journeys"]}
    assert journeys[mine["id"]] == "arrived"
    assert journeys["j2"] == "arrived"  # the script ran after T1 freed up


def test_openapi_schema_is_committed(client):
    stored = json.loads((REPO / "api-schema.json").read_text())
    assert client.get("/openapi.json").json() == stored
