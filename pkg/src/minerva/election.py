"""Committee election by fruit merit.

Candidates are opted-in miners with at least ``nu`` fruits in the last
``window`` snail blocks. Each candidate owns an equal-width slice of [0, 1)
in id order, and draws from a seed chained off the previous election pick
members until ``csize`` distinct ones are found.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .encoding import ZERO_DIGEST, digest
from .prng import HashRNG


class NoCandidates(Exception):
    pass


@dataclass(frozen=True)
class ElectionParams:
    window: int = 144
    nu: int = 100
    csize: int = 31
    opt_in: Optional[frozenset] = None  # None: every miner is willing

    def __post_init__(self):
        if self.window < 1 or self.nu < 1:
            raise ValueError("window and nu must be >= 1")
        if self.csize < 4:
            raise ValueError("csize must be >= 4")
        if self.opt_in is not None:
            object.__setattr__(self, "opt_in", frozenset(self.opt_in))

    def willing(self, node: str) -> bool:
        return self.opt_in is None or node in self.opt_in


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple  # ((node id, fruit count), ...) sorted by id
    intervals: dict = field(default_factory=dict)

    @property
    def ids(self) -> tuple:
        return tuple(node for node, _ in self.candidates)

    def __len__(self):
        return len(self.candidates)


def equal_intervals(ids: Sequence[str]) -> dict:
    m = len(ids)
    return {node: (Fraction(i, m), Fraction(i + 1, m)) for i, node in enumerate(ids)}


def candidate_set(counts: dict, params: ElectionParams) -> CandidateSet:
    chosen = tuple(sorted((node, n) for node, n in counts.items()
                          if n >= params.nu and params.willing(node)))
    if not chosen:
        raise NoCandidates(f"no willing miner has {params.nu} fruits in the window")
    return CandidateSet(chosen, equal_intervals([node for node, _ in chosen]))


def fruit_counts(blocks: Sequence) -> Counter:
    return Counter(f.miner for b in blocks for f in b.fruits)


def collect_candidates(chain, params: ElectionParams) -> CandidateSet:
    """Candidates from the fruits included in the last ``window`` blocks of ``chain``."""
    blocks = chain.blocks if hasattr(chain, "blocks") else chain
    recent = [b for b in blocks[-params.window:] if b.number > 0]
    return candidate_set(fruit_counts(recent), params)


@dataclass(frozen=True)
class ElectionSeed:
    seed: bytes = ZERO_DIGEST

    def rng(self) -> HashRNG:
        return HashRNG(self.seed, b"election")

    def draws(self, count: int) -> list[float]:
        """The first ``count`` draws as floats in [0, 1), for inspection."""
        rng = self.rng()
        return [rng.next_u64() / 2 ** 64 for _ in range(count)]


GENESIS_SEED = ElectionSeed(ZERO_DIGEST)


def derive_seed(prev: ElectionSeed, recent_blocks: Iterable) -> ElectionSeed:
    """seed' = H(prev.seed || hashes of the recent blocks)."""
    hashes = b"".join(b if isinstance(b, bytes) else b.hash for b in recent_blocks)
    return ElectionSeed(digest(b"election-seed" + prev.seed + hashes))


def elect(cands: CandidateSet, seed: ElectionSeed, csize: int,
          exclude: Iterable[str] = ()) -> list[str]:
    """Draw until ``csize`` distinct members are picked or candidates run out.

    A draw u (a 64-bit word read as u / 2**64) hits candidate floor(u*m/2**64),
    which is exactly the equal-width interval it falls in. Repeats and
    excluded ids are skipped. Output order is selection order.
    """
    ids = cands.ids
    m = len(ids)
    if m == 0:
        raise NoCandidates("empty candidate set")
    excluded = set(exclude)
    eligible = sum(1 for node in ids if node not in excluded)
    target = min(csize, eligible)
    rng = seed.rng()
    chosen: list[str] = []
    picked = set()
    while len(chosen) < target:
        node = ids[(rng.next_u64() * m) >> 64]
        if node in picked or node in excluded:
            continue
        picked.add(node)
        chosen.append(node)
    return chosen


@dataclass(frozen=True)
class ElectionRecord:
    term_id: int
    seed: bytes
    candidates: tuple
    members: tuple
    election_block: bytes = ZERO_DIGEST
    fallback: bool = False

    def to_json(self) -> dict:
        return {
            "term": self.term_id,
            "seed": self.seed.hex(),
            "election_block": self.election_block.hex(),
            "candidates": [[node, n] for node, n in self.candidates],
            "members": list(self.members),
            "fallback": self.fallback,
        }


def run_election(term_id: int, blocks: Sequence, prev: ElectionSeed, params: ElectionParams,
                 incumbent: Sequence[str] = (), exclude: Iterable[str] = ()) -> tuple[ElectionRecord, ElectionSeed]:
    """Full rotation step on the chain ``blocks`` ending at the flagged block.

    With no eligible candidate the incumbent committee carries over.
    """
    seed = derive_seed(prev, blocks[-params.csize:])
    election_block = blocks[-1].hash
    try:
        cands = collect_candidates(blocks, params)
        members = elect(cands, seed, params.csize, exclude)
        if not members:
            raise NoCandidates("every candidate is excluded")
    except NoCandidates:
        return ElectionRecord(term_id, seed.seed, (), tuple(incumbent), election_block, True), seed
    return ElectionRecord(term_id, seed.seed, cands.candidates, tuple(members), election_block), seed


def genesis_election(nodes: Sequence[str], params: ElectionParams,
                     exclude: Iterable[str] = ()) -> ElectionRecord:
    """First committee: every willing node is a candidate, seed is all zero."""
    willing = sorted(n for n in nodes if params.willing(n))
    if not willing:
        raise NoCandidates("no willing node at genesis")
    cands = CandidateSet(tuple((n, 0) for n in willing), equal_intervals(willing))
    members = elect(cands, GENESIS_SEED, params.csize, exclude)
    return ElectionRecord(0, GENESIS_SEED.seed, cands.candidates, tuple(members))
