"""Route search and scheduling over a track topology.

Routes are simple element paths. A switch on the path must be traversable
in a single position that satisfies both the entering and the leaving edge;
paths that would need the switch to flip mid-traversal are not routes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .state import LedgerState, TimeWindow
from .topology import Topology


@dataclass(frozen=True)
class Route:
    elements: tuple[str, ...]
    # (switch id, position) for every switch on the path, in path order.
    positions: tuple[tuple[str, str], ...]
    length_m: int

    def position_of(self, element: str) -> str | None:
        for eid, pos in self.positions:
            if eid == element:
                return pos
        return None


@dataclass(frozen=True)
class TimedRoute:
    route: Route
    depart: int
    windows: tuple[TimeWindow, ...]
    fees: tuple[int, ...]

    @property
    def total_fee(self) -> int:
        return sum(self.fees)

    @property
    def arrive(self) -> int:
        return self.windows[-1].start

    def leg(self, i: int) -> tuple[str, TimeWindow, int]:
        return self.route.elements[i], self.windows[i], self.fees[i]


def find_candidate_routes(topo: Topology, origin: str, dest: str,
                          k: int = 3) -> list[Route]:
    """Up to k shortest simple paths, ordered by (total element length in
    metres, then element id sequence). Exhaustive best-first search; meant
    for control-room sized networks, not national ones.
    """
    topo.element(origin)
    topo.element(dest)
    if k <= 0:
        return []
    if origin == dest:
        el = topo.element(origin)
        pos = ((origin, el.default_position),) if el.is_switch else ()
        return [Route((origin,), pos, el.length_m)]

    # Heap entries: (length, elements, positions, position we entered the
    # last element with -- None when it is not a switch or is the origin).
    start = (topo.element(origin).length_m, (origin,), (), None)
    heap: list[tuple] = [start]
    found: list[Route] = []
    while heap and len(found) < k:
        length, elements, positions, enter_pos = heapq.heappop(heap)
        at = elements[-1]
        if at == dest:
            found.append(Route(elements, positions, length))
            continue
        at_el = topo.elements[at]
        for edge in topo.outgoing(at):
            if edge.dst in elements:
                continue
            if at_el.is_switch:
                if enter_pos is not None and edge.required_position != enter_pos:
                    continue
                new_positions = positions
                if enter_pos is None:  # origin was a switch; exit edge decides
                    new_positions = positions + ((at, edge.required_position),)
            else:
                new_positions = positions
            next_el = topo.elements[edge.dst]
            next_enter = None
            if next_el.is_switch:
                next_enter = edge.required_position
                new_positions = new_positions + ((edge.dst, next_enter),)
            heapq.heappush(heap, (
                length + next_el.length_m,
                elements + (edge.dst,),
                new_positions,
                next_enter,
            ))
    return found


def schedule(topo: Topology, route: Route, depart: int, ticks_per_element: int,
             margin: int = 0) -> TimedRoute:
    """Assign each element the window [depart + i*t, depart + (i+1)*t + margin).

    Consecutive windows deliberately overlap by `margin` ticks so the train
    still holds the element it is leaving while it enters the next one.
    """
    if depart < 0 or ticks_per_element < 1 or margin < 0:
        raise ValueError("schedule needs depart >= 0, ticks_per_element >= 1, "
                         "margin >= 0")
    windows = tuple(
        TimeWindow(depart + i * ticks_per_element,
                   depart + (i + 1) * ticks_per_element + margin)
        for i in range(len(route.elements)))
    fees = tuple(
        topo.element(eid).price_per_tick * (w.end - w.start)
        for eid, w in zip(route.elements, windows))
    return TimedRoute(route, depart, windows, fees)


def filter_available(timed_routes: list[TimedRoute], state: LedgerState,
                     train: str | None = None) -> list[TimedRoute]:
    """Keep routes whose every (element, window) is free of committed
    reservations, preserving input order. Reservations held by `train`
    itself do not count as conflicts (it will release or reuse them)."""
    result = []
    for tr in timed_routes:
        ok = True
        for element, window, _fee in map(tr.leg, range(len(tr.route.elements))):
            for res in state.reservations_on(element):
                if res.train != train and res.window.overlaps(window):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            result.append(tr)
    return result
