"""Event queue and link-delay model."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass(order=True)
class SimEvent:
    deliver_at: int
    sequence: int
    destination: str = field(compare=False)
    payload: Any = field(compare=False)
    source: str = field(default="", compare=False)


class EventQueue:
    """Min-heap on (deliver_at, sequence); the sequence counter makes ordering total."""

    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = 0

    def push(self, deliver_at: int, destination: str, payload, source: str = "") -> SimEvent:
        event = SimEvent(deliver_at, self._seq, destination, payload, source)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def pop_due(self, now: int) -> Optional[SimEvent]:
        if self._heap and self._heap[0].deliver_at <= now:
            return heapq.heappop(self._heap)
        return None

    def next_time(self) -> Optional[int]:
        return self._heap[0].deliver_at if self._heap else None

    def __len__(self):
        return len(self._heap)


class DelayModel:
    """Uniform integer delay in [d_min, d_max], with optional per-link overrides."""

    def __init__(self, d_min: int, d_max: int, seed: int, overrides: Optional[dict] = None):
        if not 1 <= d_min <= d_max:
            raise ValueError("need 1 <= d_min <= d_max")
        self.d_min = d_min
        self.d_max = d_max
        self.rng = random.Random(seed)
        self.overrides = dict(overrides or {})

    def delay(self, src: str, dst: str) -> int:
        fixed = self.overrides.get((src, dst))
        if fixed is not None:
            return fixed
        return self.rng.randint(self.d_min, self.d_max)
