"""Builders for the canonical demo topologies and random test networks.

Element owner wallets follow the simulator convention: the owner secret of
element E is ``owner:E`` and its wallet address is derived from that secret
under the scenario's signature scheme. Generated files therefore bind to
the scheme they were generated for (shipped files use test-hmac).
"""

from __future__ import annotations

import json

import numpy as np

from .crypto import Keyring, convention_secret
from .topology import Topology, loads_topology


def owner_secret(element_id: str) -> str:
    return convention_secret("owner", element_id)


def _el(keyring: Keyring, eid: str, kind: str = "block", length: int = 100,
        price: int = 1, positions: list[str] | None = None,
        default: str | None = None) -> dict:
    d = {
        "id": eid,
        "kind": kind,
        "length_m": length,
        "price_per_tick": price,
        "owner_wallet": keyring.register(owner_secret(eid)),
    }
    if kind == "switch":
        d["positions"] = positions or ["left", "right"]
        d["default_position"] = default or "left"
    return d


def _both_ways(src: str, dst: str, position: str | None = None) -> list[dict]:
    fwd = {"from": src, "to": dst}
    bwd = {"from": dst, "to": src}
    if position is not None:
        fwd["required_position"] = position
        bwd["required_position"] = position
    return [fwd, bwd]


def tiny3_doc(keyring: Keyring) -> dict:
    """Three blocks in a line, B1-B2-B3, each price 1 per tick."""
    return {
        "elements": [_el(keyring, e) for e in ("B1", "B2", "B3")],
        "edges": _both_ways("B1", "B2") + _both_ways("B2", "B3"),
    }


def switchy_doc(keyring: Keyring) -> dict:
    """B1 feeds switch S1; left connects to B2, right connects to B3."""
    elements = [
        _el(keyring, "B1"),
        _el(keyring, "S1", kind="switch", length=40),
        _el(keyring, "B2"),
        _el(keyring, "B3"),
    ]
    edges = (
        # trunk side: passable whichever way the blades are thrown
        _both_ways("B1", "S1", "left") + _both_ways("B1", "S1", "right")
        + _both_ways("S1", "B2", "left") + _both_ways("S1", "B3", "right")
    )
    return {"elements": elements, "edges": edges}


def diamond_doc(keyring: Keyring) -> dict:
    """B1 -> S1 -> {B2a, B2b} -> S2 -> B3, both middle paths length-equal."""
    elements = [
        _el(keyring, "B1"),
        _el(keyring, "S1", kind="switch", length=40),
        _el(keyring, "B2a"),
        _el(keyring, "B2b"),
        _el(keyring, "S2", kind="switch", length=40),
        _el(keyring, "B3"),
    ]
    edges = (
        _both_ways("B1", "S1", "left") + _both_ways("B1", "S1", "right")
        + _both_ways("S1", "B2a", "left") + _both_ways("S1", "B2b", "right")
        + _both_ways("B2a", "S2", "left") + _both_ways("B2b", "S2", "right")
        + _both_ways("S2", "B3", "left") + _both_ways("S2", "B3", "right")
    )
    return {"elements": elements, "edges": edges}


def build(doc: dict) -> Topology:
    return loads_topology(json.dumps(doc))


def tiny3(keyring: Keyring) -> Topology:
    return build(tiny3_doc(keyring))


def switchy(keyring: Keyring) -> Topology:
    return build(switchy_doc(keyring))


def diamond(keyring: Keyring) -> Topology:
    return build(diamond_doc(keyring))


def random_line_doc(rng: np.random.Generator, n_elements: int,
                    keyring: Keyring) -> dict:
    """Chain of blocks and diamond bulges, bidirectional, n_elements total.

    This is the "DIAMOND-class" family used by the randomized runs: a main
    line where some sections split into two parallel blocks between a pair
    of switches, so trains genuinely contend for shared track.
    """
    if n_elements < 3:
        raise ValueError("need at least 3 elements")
    elements: list[dict] = []
    edges: list[dict] = []
    counter = {"B": 0, "S": 0}

    def block() -> str:
        counter["B"] += 1
        eid = f"B{counter['B']}"
        elements.append(_el(keyring, eid, length=int(rng.integers(50, 200)),
                            price=int(rng.integers(1, 4))))
        return eid

    def switch() -> str:
        counter["S"] += 1
        eid = f"S{counter['S']}"
        elements.append(_el(keyring, eid, kind="switch", length=40,
                            price=int(rng.integers(1, 3))))
        return eid

    head = block()
    remaining = n_elements - 1
    while remaining > 0:
        # a diamond bulge consumes 4 elements (switch, 2 blocks, switch) + exit block
        if remaining >= 5 and rng.random() < 0.5:
            s_in, mid_a, mid_b, s_out = switch(), block(), block(), switch()
            tail = block()
            edges += _both_ways(head, s_in, "left") + _both_ways(head, s_in, "right")
            edges += _both_ways(s_in, mid_a, "left") + _both_ways(s_in, mid_b, "right")
            edges += _both_ways(mid_a, s_out, "left") + _both_ways(mid_b, s_out, "right")
            edges += _both_ways(s_out, tail, "left") + _both_ways(s_out, tail, "right")
            head = tail
            remaining -= 5
        else:
            nxt = block()
            edges += _both_ways(head, nxt)
            head = nxt
            remaining -= 1
    return {"elements": elements, "edges": edges}


def random_topology(rng: np.random.Generator, n_elements: int,
                    keyring: Keyring) -> Topology:
    return build(random_line_doc(rng, n_elements, keyring))
