"""Append-only run log. Every observable thing that happens in a run is an
event dict; metrics, the replay check, and the determinism check all consume
this log and nothing else."""

from __future__ import annotations

from .crypto import canonical_json, hash_hex

EVENT_KINDS = (
    "TxSubmitted", "TxRejected", "BlockCommitted",
    "PlanChosen", "ReserveCommitted", "BookingFailure", "BookingSucceeded",
    "RollbackRelease", "Departed", "EnteredElement", "EagerRelease",
    "SwitchCommanded", "SwitchAcked", "OccupancySet", "OccupancyCleared",
    "EmergencyStop", "Replan", "Arrived", "JourneyFailed", "JourneyCancelled",
    "ForkReport", "SafetyAlarm", "PartitionStarted", "PartitionHealed",
    "RunFinished",
)


class EventLog:
    def __init__(self):
        self.events: list[dict] = []

    def emit(self, tick: int, kind: str, **fields) -> dict:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {kind}")
        event = {"seq": len(self.events), "tick": tick, "kind": kind, **fields}
        self.events.append(event)
        return event

    def since(self, seq: int) -> list[dict]:
        return self.events[seq:]

    def of_kind(self, *kinds: str) -> list[dict]:
        return [e for e in self.events if e["kind"] in kinds]

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.events)

    def digest(self, algo: str = "sha256") -> str:
        return hash_hex(self.canonical_bytes(), algo)
