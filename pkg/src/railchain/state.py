"""Ledger-derived world state: balances, reservations, switch and occupancy mirrors."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True, order=True)
class TimeWindow:
    """Half-open tick interval [start, end)."""

    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid time window [{self.start}, {self.end})")

    def overlaps(self, other: "TimeWindow") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, tick: int) -> bool:
        return self.start <= tick < self.end


@dataclass(frozen=True)
class Reservation:
    """One train holding one element for one window, at a fixed fee."""

    train: str
    element: str
    window: TimeWindow
    required_position: str | None
    fee: int

    def key(self) -> tuple:
        return (self.train, self.element, self.window.start, self.window.end)

    def canonical(self) -> dict:
        return {
            "train": self.train,
            "element": self.element,
            "window_start": self.window.start,
            "window_end": self.window.end,
            "required_position": self.required_position,
            "fee": self.fee,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Reservation":
        return cls(
            train=payload["train"],
            element=payload["element"],
            window=TimeWindow(payload["window_start"], payload["window_end"]),
            required_position=payload.get("required_position"),
            fee=payload["fee"],
        )


@dataclass
class LedgerState:
    """State derived by replaying a chain; owned by exactly one replayer.

    Snapshots are produced with copy(); all contained values are immutable,
    so a copy is safe to hand to concurrent readers.
    """

    balances: dict[str, int] = field(default_factory=dict)
    reservations: dict[tuple, Reservation] = field(default_factory=dict)
    switch_should_be: dict[str, str] = field(default_factory=dict)
    switch_is: dict[str, str] = field(default_factory=dict)
    occupancy_is: dict[str, str] = field(default_factory=dict)
    nonces: dict[str, int] = field(default_factory=dict)
    tick_of_head: int = 0

    def copy(self) -> "LedgerState":
        return LedgerState(
            balances=dict(self.balances),
            reservations=dict(self.reservations),
            switch_should_be=dict(self.switch_should_be),
            switch_is=dict(self.switch_is),
            occupancy_is=dict(self.occupancy_is),
            nonces=dict(self.nonces),
            tick_of_head=self.tick_of_head,
        )

    def reservations_on(self, element: str) -> list[Reservation]:
        return [r for r in self.reservations.values() if r.element == element]

    def occupant(self, element: str) -> str | None:
        return self.occupancy_is.get(element)

    def canonical(self) -> dict:
        return {
            "balances": dict(sorted(self.balances.items())),
            "reservations": [
                r.canonical()
                for r in sorted(
                    self.reservations.values(),
                    key=lambda r: (r.element, r.window.start, r.train, r.window.end),
                )
            ],
            "switch_should_be": dict(sorted(self.switch_should_be.items())),
            "switch_is": dict(sorted(self.switch_is.items())),
            "occupancy_is": dict(sorted(self.occupancy_is.items())),
            "nonces": dict(sorted(self.nonces.items())),
            "tick_of_head": self.tick_of_head,
        }
