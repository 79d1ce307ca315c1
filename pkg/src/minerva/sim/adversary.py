"""Adversary plan: who gets corrupted, when it bites, and what it does.

Corruption is mildly adaptive: a request made at tick t never takes effect
before t + 1, whatever delay was asked for. A budget caps the corrupted
fraction of any one committee.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

log = logging.getLogger(__name__)

HONEST = "none"
BYZANTINE_VOTE = "byzantine_vote"
SILENT = "silent"
LEAK_ADDRESSES = "leak_addresses"
WITHHOLD_BLOCKS = "withhold_blocks"


class BudgetExceeded(Exception):
    pass


class UnknownAddress(Exception):
    pass


def allowed_corruptions(budget: Fraction, size: int) -> int:
    """ceil(budget * size), computed exactly."""
    return math.ceil(Fraction(budget) * size)


def check_budget(count: int, size: int, budget: Fraction) -> None:
    limit = allowed_corruptions(budget, size)
    if count > limit:
        raise BudgetExceeded(f"{count} corruptions requested, budget allows {limit} of {size}")


@dataclass(frozen=True)
class Corruption:
    node: str
    trigger_at: int
    effect_at: int
    strategy: str


def corrupt(node: str, when: int, tau: int, strategy: str,
            warnings: Optional[list] = None) -> Corruption:
    """Schedule ``node`` to turn at ``when + tau``; tau below 1 is raised to 1."""
    if tau < 1:
        msg = f"corruption delay {tau} for {node} raised to 1 tick"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        tau = 1
    return Corruption(node, when, when + tau, strategy)


@dataclass(frozen=True)
class DdosWindow:
    targets: frozenset
    start: int
    end: int

    def covers(self, node: str, now: int) -> bool:
        return self.start <= now < self.end and node in self.targets


def ddos(known: Iterable[str], targets: Iterable[str], start: int, duration: int) -> DdosWindow:
    """Silence ``targets`` for ``duration`` ticks; only addresses the
    adversary actually learned can be attacked."""
    known = set(known)
    targets = set(targets)
    missing = sorted(targets - known)
    if missing:
        raise UnknownAddress(f"adversary never learned {missing}")
    return DdosWindow(frozenset(targets), start, start + duration)


@dataclass
class AdversaryPlan:
    strategy: str = HONEST
    count: int = 0
    nodes: tuple = ()
    target: str = "committee"
    term: int = 0
    tau: int = 1
    budget: Fraction = Fraction(1, 3)
    equivocate: bool = False
    ddos_duration: int = 100
    gamma: float = 0.5
    corruptions: list = field(default_factory=list)
    ddos_windows: list = field(default_factory=list)
    leaked: dict = field(default_factory=dict)  # node -> set of node ids it exposed
    warnings: list = field(default_factory=list)

    @property
    def active(self) -> bool:
        return self.strategy != HONEST and (self.count > 0 or bool(self.nodes))

    def pick(self, candidates: list[str], committee_size: Optional[int] = None) -> list[str]:
        """Nodes to corrupt out of ``candidates`` (already in a stable order)."""
        chosen = list(self.nodes) if self.nodes else candidates[: self.count]
        if committee_size is not None:
            check_budget(len(chosen), committee_size, self.budget)
        return chosen

    def schedule(self, nodes: Iterable[str], when: int) -> list[Corruption]:
        out = [corrupt(n, when, self.tau, self.strategy, self.warnings) for n in nodes]
        self.corruptions.extend(out)
        return out

    def silenced(self, node: str, now: int) -> bool:
        return any(w.covers(node, now) for w in self.ddos_windows)


@dataclass
class Coalition:
    """State shared by corrupted nodes: equivocation splits and the private chain."""

    members: set = field(default_factory=set)
    # (serial, round) -> (digest A, digest B, honest group that saw A)
    splits: dict = field(default_factory=dict)
    private_view: object = None
    lead_state: object = None
