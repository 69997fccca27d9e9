"""Track network graph: elements, directed edges, and traversal queries.

The topology is the physical world the ledger mirrors. It is immutable
after load and safe to share across any number of readers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .crypto import canonical_json, hash_hex, is_wallet_address
from .errors import ParseError, UnknownElement, ValidationError

ELEMENT_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,32}$")

BLOCK = "block"
SWITCH = "switch"
PLATFORM = "platform"
KINDS = (BLOCK, SWITCH, PLATFORM)

_ELEMENT_KEYS = {
    "id", "kind", "length_m", "price_per_tick", "owner_wallet",
    "positions", "default_position", "ui_hint",
}
_EDGE_KEYS = {"from", "to", "required_position"}


@dataclass(frozen=True)
class TrackElement:
    id: str
    kind: str
    length_m: int
    price_per_tick: int
    owner_wallet: str
    positions: tuple[str, ...] = ()
    default_position: str | None = None
    ui_hint: tuple[float, float] | None = None

    @property
    def is_switch(self) -> bool:
        return self.kind == SWITCH


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    required_position: str | None = None


@dataclass(frozen=True)
class Topology:
    elements: dict[str, TrackElement]
    edges: tuple[Edge, ...]
    _out: dict[str, tuple[Edge, ...]] = field(default_factory=dict, repr=False)

    def element(self, element_id: str) -> TrackElement:
        try:
            return self.elements[element_id]
        except KeyError:
            raise UnknownElement(f"unknown element: {element_id}") from None

    def outgoing(self, element_id: str) -> tuple[Edge, ...]:
        self.element(element_id)
        return self._out.get(element_id, ())

    def canonical(self) -> dict:
        """Plain-data form with deterministic ordering, used for hashing."""
        return {
            "elements": [
                _element_to_dict(self.elements[i]) for i in sorted(self.elements)
            ],
            "edges": [
                {"from": e.src, "to": e.dst, "required_position": e.required_position}
                for e in sorted(self.edges, key=lambda e: (
                    e.src, e.dst, e.required_position or ""))
            ],
        }

    def content_hash(self, algo: str = "sha256") -> str:
        return hash_hex(canonical_json(self.canonical()), algo)


def _element_to_dict(el: TrackElement) -> dict:
    d = {
        "id": el.id,
        "kind": el.kind,
        "length_m": el.length_m,
        "price_per_tick": el.price_per_tick,
        "owner_wallet": el.owner_wallet,
    }
    if el.kind == SWITCH:
        d["positions"] = sorted(el.positions)
        d["default_position"] = el.default_position
    if el.ui_hint is not None:
        d["ui_hint"] = {"x": el.ui_hint[0], "y": el.ui_hint[1]}
    return d


def _require_int(value, name: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return value


def _parse_element(raw: dict) -> TrackElement:
    if not isinstance(raw, dict):
        raise ParseError(f"element entry must be an object, got {raw!r}")
    unknown = set(raw) - _ELEMENT_KEYS
    if unknown:
        raise ParseError(f"unknown element keys: {sorted(unknown)}")
    for key in ("id", "kind", "length_m", "price_per_tick", "owner_wallet"):
        if key not in raw:
            raise ParseError(f"element missing required key {key!r}: {raw!r}")

    eid = raw["id"]
    if not isinstance(eid, str) or not ELEMENT_ID_RE.match(eid):
        raise ValidationError(f"invalid element id: {eid!r}")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ParseError(f"element {eid}: unknown kind {kind!r}")
    length = _require_int(raw["length_m"], f"element {eid}: length_m", minimum=1)
    price = _require_int(raw["price_per_tick"], f"element {eid}: price_per_tick", minimum=0)
    owner = raw["owner_wallet"]
    if not isinstance(owner, str) or not is_wallet_address(owner):
        raise ValidationError(f"element {eid}: owner_wallet is not a wallet address")

    positions: tuple[str, ...] = ()
    default = None
    if kind == SWITCH:
        if "positions" not in raw or "default_position" not in raw:
            raise ParseError(f"switch {eid} requires positions and default_position")
        pos = raw["positions"]
        if (not isinstance(pos, list) or len(pos) < 2
                or any(not isinstance(p, str) for p in pos)):
            raise ValidationError(f"switch {eid}: positions must be >= 2 labels")
        if len(set(pos)) != len(pos):
            raise ValidationError(f"switch {eid}: duplicate position labels")
        positions = tuple(pos)
        default = raw["default_position"]
        if default not in positions:
            raise ValidationError(
                f"switch {eid}: default_position {default!r} not in positions")
    else:
        if "positions" in raw or "default_position" in raw:
            raise ValidationError(f"element {eid}: positions only allowed on switches")

    ui_hint = None
    if "ui_hint" in raw:
        hint = raw["ui_hint"]
        if (not isinstance(hint, dict) or set(hint) != {"x", "y"}
                or any(not isinstance(hint[k], (int, float)) for k in ("x", "y"))):
            raise ParseError(f"element {eid}: ui_hint must be {{x, y}}")
        ui_hint = (float(hint["x"]), float(hint["y"]))

    return TrackElement(eid, kind, length, price, owner, positions, default, ui_hint)


def _parse_edge(raw: dict, elements: dict[str, TrackElement]) -> Edge:
    if not isinstance(raw, dict):
        raise ParseError(f"edge entry must be an object, got {raw!r}")
    unknown = set(raw) - _EDGE_KEYS
    if unknown:
        raise ParseError(f"unknown edge keys: {sorted(unknown)}")
    for key in ("from", "to"):
        if key not in raw or not isinstance(raw[key], str):
            raise ParseError(f"edge missing endpoint {key!r}: {raw!r}")
    src, dst = raw["from"], raw["to"]
    label = f"edge {src}->{dst}"
    for endpoint in (src, dst):
        if endpoint not in elements:
            raise ValidationError(f"{label}: endpoint {endpoint!r} does not exist")
    if src == dst:
        raise ValidationError(f"{label}: self-loop edges are forbidden")

    src_el, dst_el = elements[src], elements[dst]
    if src_el.is_switch and dst_el.is_switch:
        raise ValidationError(
            f"{label}: adjacent switches are unsupported; insert a block between them")
    switch_el = src_el if src_el.is_switch else dst_el if dst_el.is_switch else None

    pos = raw.get("required_position")
    if switch_el is None:
        if pos is not None:
            raise ValidationError(f"{label}: required_position on a switchless edge")
    else:
        if pos is None:
            raise ValidationError(f"{label}: edges touching a switch need required_position")
        if pos not in switch_el.positions:
            raise ValidationError(
                f"{label}: required_position {pos!r} not in {switch_el.id}.positions")
    return Edge(src, dst, pos)


def loads_topology(text: str) -> Topology:
    """Parse and validate a topology document (see load_topology)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"topology is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("topology document must be an object")
    unknown = set(doc) - {"elements", "edges"}
    if unknown:
        raise ParseError(f"unknown top-level keys: {sorted(unknown)}")
    if not isinstance(doc.get("elements"), list) or not isinstance(doc.get("edges"), list):
        raise ParseError("topology requires 'elements' and 'edges' arrays")

    elements: dict[str, TrackElement] = {}
    for raw in doc["elements"]:
        el = _parse_element(raw)
        if el.id in elements:
            raise ParseError(f"duplicate element id: {el.id}")
        elements[el.id] = el

    edges: list[Edge] = []
    seen: set[tuple] = set()
    for raw in doc["edges"]:
        edge = _parse_edge(raw, elements)
        key = (edge.src, edge.dst, edge.required_position)
        if key in seen:
            raise ValidationError(f"duplicate edge: {edge.src}->{edge.dst}"
                                  f" ({edge.required_position})")
        seen.add(key)
        edges.append(edge)

    out: dict[str, list[Edge]] = {}
    for edge in edges:
        out.setdefault(edge.src, []).append(edge)
    return Topology(
        elements=elements,
        edges=tuple(edges),
        _out={k: tuple(v) for k, v in out.items()},
    )


def load_topology(path: str | Path) -> Topology:
    """Load and validate a topology file.

    The file is strict JSON with top-level `elements` and `edges` arrays;
    unknown keys are rejected. Identical file bytes always produce a
    structurally identical Topology.
    """
    p = Path(path)
    if not p.exists():
        raise ParseError(f"topology file not found: {p}")
    return loads_topology(p.read_text(encoding="utf-8"))


def neighbors(topo: Topology, at: str) -> list[tuple[str, str | None]]:
    """Elements one directed edge away from `at`, with the switch position
    each traversal requires. Sorted by (element id, position)."""
    result = [(e.dst, e.required_position) for e in topo.outgoing(at)]
    return sorted(result, key=lambda p: (p[0], p[1] or ""))
