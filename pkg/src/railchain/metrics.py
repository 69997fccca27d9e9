"""Run metrics, recomputed purely from the event log so any consumer of a
persisted log arrives at identical numbers."""

from __future__ import annotations

from collections import Counter


def compute_metrics(events: list[dict]) -> dict:
    kinds = Counter(e["kind"] for e in events)
    ticks = max((e["tick"] for e in events), default=0)

    travel = [e["travel_ticks"] for e in events if e["kind"] == "Arrived"]
    booking_started: dict[str, int] = {}
    booking_ticks: list[int] = []
    for e in events:
        if e["kind"] == "PlanChosen":
            booking_started[e["train"]] = e["tick"]
        elif e["kind"] == "BookingSucceeded" and e["train"] in booking_started:
            booking_ticks.append(e["tick"] - booking_started.pop(e["train"]))

    commits_by_node: Counter = Counter(
        e["node"] for e in events if e["kind"] == "BlockCommitted")
    rejects = Counter(
        e["reason"] for e in events if e["kind"] == "TxRejected")

    def avg(xs: list[int]) -> float | None:
        return round(sum(xs) / len(xs), 3) if xs else None

    return {
        "ticks": ticks,
        "journeys": {
            "planned": kinds["PlanChosen"],
            "arrived": kinds["Arrived"],
            "failed": kinds["JourneyFailed"],
        },
        "bookings": {
            "succeeded": kinds["BookingSucceeded"],
            "failures": kinds["BookingFailure"],
            "rollback_releases": kinds["RollbackRelease"],
            "avg_ticks": avg(booking_ticks),
        },
        "txs": {
            "submitted": kinds["TxSubmitted"],
            "rejected": kinds["TxRejected"],
            "reject_reasons": dict(sorted(rejects.items())),
        },
        "blocks": {
            "committed_events": kinds["BlockCommitted"],
            "by_node": dict(sorted(commits_by_node.items())),
        },
        "incidents": {
            "forks": kinds["ForkReport"],
            "safety_alarms": kinds["SafetyAlarm"],
            "emergency_stops": kinds["EmergencyStop"],
            "replans": kinds["Replan"],
        },
        "avg_travel_ticks": avg(travel),
    }
