"""Discrete-tick message network with latency, loss, and partitions.

Determinism contract: every (src, dst) channel owns an RNG seeded from
(seed, src, dst) only, so delivery outcomes do not depend on the order in
which unrelated channels are used. Messages due the same tick deliver in
send order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NetConfig:
    latency_min: int = 1
    latency_max: int = 2
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latency_min < 1 or self.latency_max < self.latency_min:
            raise ConfigError("latency bounds need 1 <= min <= max")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ConfigError("drop_prob must be in [0, 1)")


@dataclass(frozen=True)
class PartitionSpec:
    """Cross-group sends are dropped while from_tick <= now < to_tick."""

    groups: tuple[frozenset[str], ...]
    from_tick: int
    to_tick: int

    def group_of(self, node: str) -> int | None:
        for i, g in enumerate(self.groups):
            if node in g:
                return i
        return None

    def active(self, now: int) -> bool:
        return self.from_tick <= now < self.to_tick

    def severs(self, src: str, dst: str, now: int) -> bool:
        if not self.active(now):
            return False
        a, b = self.group_of(src), self.group_of(dst)
        return a is not None and b is not None and a != b


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    kind: str
    body: dict
    sent_tick: int
    due_tick: int
    seq: int


@dataclass
class Network:
    node_ids: tuple[str, ...]
    config: NetConfig
    partitions: list[PartitionSpec] = field(default_factory=list)
    sent: int = 0
    dropped: int = 0
    delivered: int = 0
    _queue: list[Message] = field(default_factory=list)
    _seq: int = 0
    _rngs: dict[tuple[str, str], np.random.Generator] = field(default_factory=dict)

    def _rng(self, src: str, dst: str) -> np.random.Generator:
        key = (src, dst)
        rng = self._rngs.get(key)
        if rng is None:
            digest = hashlib.sha256(
                f"{self.config.seed}|{src}|{dst}".encode()).digest()
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(
                    int.from_bytes(digest[:8], "big"))))
            self._rngs[key] = rng
        return rng

    def severed(self, src: str, dst: str, now: int) -> bool:
        return any(p.severs(src, dst, now) for p in self.partitions)

    def send(self, src: str, dst: str, kind: str, body: dict[str, Any],
             now: int) -> None:
        if dst not in self.node_ids or dst == src:
            raise ConfigError(f"cannot send {kind} from {src} to {dst}")
        self.sent += 1
        if self.severed(src, dst, now):
            self.dropped += 1
            return
        rng = self._rng(src, dst)
        lost = bool(rng.random() < self.config.drop_prob)
        latency = int(rng.integers(self.config.latency_min,
                                   self.config.latency_max + 1))
        if lost:
            self.dropped += 1
            return
        self._seq += 1
        self._queue.append(Message(src, dst, kind, body, now,
                                   now + latency, self._seq))

    def broadcast(self, src: str, kind: str, body: dict[str, Any],
                  now: int) -> None:
        for dst in self.node_ids:
            if dst != src:
                self.send(src, dst, kind, body, now)

    def deliver_due(self, now: int) -> list[Message]:
        due = [m for m in self._queue if m.due_tick <= now]
        if due:
            self._queue = [m for m in self._queue if m.due_tick > now]
            due.sort(key=lambda m: (m.due_tick, m.seq))
            self.delivered += len(due)
        return due

    def idle(self, ignore_kinds: tuple[str, ...] = ()) -> bool:
        if not ignore_kinds:
            return not self._queue
        return all(m.kind in ignore_kinds for m in self._queue)

    def add_partition(self, spec: PartitionSpec) -> None:
        known = {n for g in spec.groups for n in g}
        unknown = known - set(self.node_ids)
        if unknown:
            raise ConfigError(f"partition names unknown nodes: {sorted(unknown)}")
        if spec.to_tick <= spec.from_tick:
            raise ConfigError("partition needs from_tick < to_tick")
        self.partitions.append(spec)

    def heal(self, now: int) -> None:
        """End every active partition this tick; drop ones not yet begun."""
        healed = []
        for p in self.partitions:
            if p.from_tick >= now:
                continue  # never took effect
            healed.append(p if p.to_tick <= now
                          else PartitionSpec(p.groups, p.from_tick, now))
        self.partitions = healed
