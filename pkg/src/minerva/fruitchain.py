"""Fruitchain snailchain: fruit and block mining, recency, adoption and fork choice.

A single mining draw hashes ``(tip, body, message, miner)`` with the rotating
truehash. The low 64 bits decide whether the draw is a fruit (it then digests
the oldest fast-block message that lacks a recent fruit), the high 64 bits
decide whether it is a block (it then packages the contiguous run of recent,
unincluded fruits). Both may succeed in one draw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Optional, Sequence

from . import truehash as th
from .encoding import ZERO_DIGEST, from_jsonable, to_jsonable
from .types import (
    NULL_MESSAGE,
    FastMessage,
    Fruit,
    SnailBlock,
    block_body_digest,
    fruits_hash,
    genesis_snail_block,
    mining_header,
)

TWO_64 = 1 << 64
DEFAULT_RECENCY = 17


class InvalidFruit(Exception):
    pass


class InvalidChain(Exception):
    pass


class NoPendingMessage(Exception):
    pass


class EmptyBranchSet(Exception):
    pass


def _weight(target: int) -> int:
    return max(1, TWO_64 // max(1, target))


@dataclass(frozen=True)
class MiningParams:
    """Thresholds are on 64-bit slices of the mining hash; a draw passes when
    the slice is strictly below the threshold, so ``2**64`` always passes."""

    block_difficulty: int
    fruit_difficulty: int
    recency: int = DEFAULT_RECENCY
    pointer_window: Optional[int] = None
    block_interval: int = 600
    fruit_interval: int = 1
    elect_every: int = 0
    tiebreak: str = "hash"
    fruit_pointer_depth: int = 0  # fruits hang this many blocks below the miner's tip

    def __post_init__(self):
        if self.pointer_window is None:
            object.__setattr__(self, "pointer_window", self.recency)
        if self.recency < 1:
            raise ValueError("recency must be >= 1")
        if self.block_interval <= 0 or self.fruit_interval <= 0:
            raise ValueError("intervals must be positive")
        if not (0 < self.block_difficulty <= self.fruit_difficulty <= TWO_64):
            raise ValueError("need 0 < block_difficulty <= fruit_difficulty <= 2**64")
        if not 0 <= self.fruit_pointer_depth < self.recency:
            raise ValueError("fruit_pointer_depth must lie in [0, recency)")
        if self.tiebreak not in ("hash", "pointer"):
            raise ValueError("tiebreak must be 'hash' or 'pointer'")

    @classmethod
    def from_intervals(cls, block_interval: int, fruit_interval: int = 1,
                       attempts_per_tick: int = 1, **kwargs) -> "MiningParams":
        """Thresholds giving the requested expected intervals in ticks."""
        d_block = TWO_64 // (block_interval * attempts_per_tick)
        d_fruit = min(TWO_64, TWO_64 // (fruit_interval * attempts_per_tick))
        return cls(d_block, d_fruit, block_interval=block_interval,
                   fruit_interval=fruit_interval, **kwargs)

    @property
    def block_weight(self) -> int:
        return _weight(self.block_difficulty)

    @property
    def fruit_weight(self) -> int:
        return _weight(self.fruit_difficulty)


@dataclass(frozen=True)
class ChainView:
    blocks: tuple
    pending: Mapping = field(default_factory=lambda: MappingProxyType({}))
    owner: str = ""

    def __post_init__(self):
        if not isinstance(self.pending, MappingProxyType):
            object.__setattr__(self, "pending", MappingProxyType(dict(self.pending)))

    @property
    def tip(self) -> SnailBlock:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @cached_property
    def total_fruits(self) -> int:
        return sum(len(b.fruits) for b in self.blocks)

    @cached_property
    def total_difficulty(self) -> int:
        return chain_difficulty(self.blocks)

    @cached_property
    def last_serial(self) -> int:
        return chain_last_serial(self.blocks)

    def recent_hashes(self, recency: int) -> frozenset:
        memo = self.__dict__.setdefault("_recent", {})
        out = memo.get(recency)
        if out is None:
            out = memo[recency] = frozenset(b.hash for b in self.blocks[-recency:])
        return out

    def with_owner(self, owner: str) -> "ChainView":
        """Same chain and pool under another owner, sharing cached values."""
        other = ChainView(self.blocks, self.pending, owner)
        for key in ("total_fruits", "total_difficulty", "last_serial", "_recent"):
            if key in self.__dict__:
                other.__dict__[key] = self.__dict__[key]
        return other


def genesis_view(owner: str = "") -> ChainView:
    return ChainView((genesis_snail_block(),), {}, owner)


def chain_last_serial(blocks: Sequence[SnailBlock]) -> int:
    for block in reversed(blocks):
        if block.fruits:
            return block.fruits[-1].serial
    return 0


def chain_difficulty(blocks: Sequence[SnailBlock]) -> int:
    return sum(f.fruit_difficulty for b in blocks for f in b.fruits)


def is_recent(f: Fruit, chain, recency: int = DEFAULT_RECENCY) -> bool:
    """True iff the fruit hangs from one of the last ``recency`` blocks, tip included."""
    if isinstance(chain, ChainView):
        return f.pointer_hash in chain.recent_hashes(recency)
    return any(b.hash == f.pointer_hash for b in chain[-recency:])


def select_contiguous(pending: Iterable[Fruit], last_included_serial: int) -> list[Fruit]:
    """Fruits with serials last+1, last+2, ... up to the first gap.

    Where several fruits share a serial the one with the lowest hash is used.
    """
    best: dict[int, Fruit] = {}
    for f in pending:
        cur = best.get(f.serial)
        if cur is None or f.hash < cur.hash:
            best[f.serial] = f
    out = []
    serial = last_included_serial + 1
    while serial in best:
        out.append(best[serial])
        serial += 1
    return out


def fork_choice(branches: Iterable[Sequence[SnailBlock]]) -> Sequence[SnailBlock]:
    """Branch with the highest fruit-difficulty sum; ties go to the smallest tip hash."""
    branches = list(branches)
    if not branches:
        raise EmptyBranchSet("no branches to choose from")
    return min(branches, key=lambda b: (-chain_difficulty(b), b[-1].hash))


class Fruitchain:
    """Validation context shared by the nodes of one simulation.

    Holds the mining parameters, the base truehash parameters, a store of
    every block seen (so truehash epochs can be resolved along any branch),
    and a cache of blocks already validated. Block validity depends only on
    the block and its ancestors, so the cache is keyed by block hash.

    ``certified`` decides whether a fast-block message carries a valid
    committee certificate; the default accepts every message.
    """

    def __init__(self, params: MiningParams, truehash_params: Optional[th.TruehashParams] = None,
                 certified: Optional[Callable[[FastMessage], bool]] = None):
        self.params = params
        self.truehash_base = truehash_params or th.TruehashParams()
        self.certified = certified or (lambda message: True)
        genesis = genesis_snail_block()
        self.genesis = genesis
        self.blocks: dict[bytes, SnailBlock] = {genesis.hash: genesis}
        self._valid: dict[bytes, bool] = {genesis.hash: True}
        self._epoch_params: dict[bytes, th.TruehashParams] = {}
        self._good_fruits: dict[bytes, Fruit] = {}
        self.invalid_fruits = 0
        self.invalid_chains = 0

    # -- block store ---------------------------------------------------
    def remember(self, block: SnailBlock) -> None:
        self.blocks.setdefault(block.hash, block)

    def ancestor(self, block_hash: bytes, height: int) -> SnailBlock:
        block = self.blocks[block_hash]
        while block.number > height:
            block = self.blocks[block.parent_hash]
        return block

    def params_at(self, tip_hash: bytes) -> th.TruehashParams:
        """Truehash parameters for mining on top of ``tip_hash``."""
        tip = self.blocks[tip_hash]
        E = self.truehash_base.epoch_length
        epoch = tip.number // E
        if epoch == 0:
            return self.truehash_base
        boundary = self.ancestor(tip_hash, epoch * E)
        cached = self._epoch_params.get(boundary.hash)
        if cached is None:
            history = []
            block = boundary
            for _ in range(E):
                history.append(block.hash)
                block = self.blocks[block.parent_hash]
            history.reverse()
            cached = th.rotate_element(history, self.truehash_base, boundary.number)
            self._epoch_params[boundary.hash] = cached
        return cached

    # -- fruits ----------------------------------------------------------
    def check_fruit(self, f: Fruit) -> None:
        if self._good_fruits.get(f.hash) == f:
            return
        p = self.params
        if f.pointer_hash not in self.blocks or f.parent_hash not in self.blocks:
            raise InvalidFruit("fruit refers to an unknown block")
        if f.fruit_difficulty != p.fruit_weight:
            raise InvalidFruit("wrong fruit difficulty")
        expected = th.truehash(self.params_at(f.parent_hash), f.header(), f.nonce)
        if expected != f.hash:
            raise InvalidFruit("mining hash mismatch")
        if th.suffix64(f.hash) >= p.fruit_difficulty:
            raise InvalidFruit("fruit does not meet difficulty")
        if not self.certified(f.message):
            raise InvalidFruit("digest does not match a certified fast block")
        self._good_fruits[f.hash] = f

    # -- blocks ----------------------------------------------------------
    def check_block(self, block: SnailBlock, prefix: Sequence[SnailBlock]) -> None:
        """Validate ``block`` as the successor of ``prefix`` (genesis..parent)."""
        p = self.params
        parent = prefix[-1]
        if block.parent_hash != parent.hash or block.number != parent.number + 1:
            raise InvalidChain(f"block {block.number} does not link to its parent")
        pos = max(0, parent.number - p.pointer_window)
        if block.pointer_hash != prefix[pos].hash or block.pointer_number != pos:
            raise InvalidChain(f"block {block.number} has a bad pointer")
        if block.difficulty != p.block_weight or block.fruit_difficulty != p.fruit_weight:
            raise InvalidChain(f"block {block.number} declares wrong difficulty")
        expected_flag = bool(p.elect_every) and block.number % p.elect_every == 0
        if block.to_elect != expected_flag:
            raise InvalidChain(f"block {block.number} has a wrong ToElect flag")
        if block.fruits_hash != fruits_hash(block.fruits):
            raise InvalidChain(f"block {block.number} fruits_hash mismatch")
        params = self.params_at(parent.hash) if parent.hash in self.blocks else self.truehash_base
        h = th.truehash(params, block.header(), block.nonce)
        if h != block.hash or th.prefix64(h) >= p.block_difficulty:
            raise InvalidChain(f"block {block.number} fails proof of work")
        recent = frozenset(b.hash for b in prefix[-p.recency:])
        serial = chain_last_serial(prefix)
        for f in block.fruits:
            serial += 1
            if f.serial != serial:
                raise InvalidChain(f"block {block.number} fruit serials are not contiguous")
            if f.pointer_hash not in recent:
                raise InvalidChain(f"block {block.number} includes a non-recent fruit")
            try:
                self.check_fruit(f)
            except InvalidFruit as exc:
                raise InvalidChain(f"block {block.number}: {exc}") from None

    def validate_chain(self, blocks: Sequence[SnailBlock]) -> None:
        if not blocks or blocks[0].hash != self.genesis.hash:
            raise InvalidChain("chain does not start at genesis")
        start = len(blocks) - 1
        while start > 0:
            cached = self.blocks.get(blocks[start].hash)
            if self._valid.get(blocks[start].hash) and (cached is blocks[start] or cached == blocks[start]):
                break
            start -= 1
        for i in range(start + 1, len(blocks)):
            block = blocks[i]
            self.remember(blocks[i - 1])
            self.check_block(block, blocks[:i])
            self.remember(block)
            self._valid[block.hash] = True

    def is_valid(self, block_hash: bytes) -> bool:
        return self._valid.get(block_hash, False)


def _prune(pending: dict, last_serial: int) -> dict:
    return {k: f for k, f in pending.items() if f.serial > last_serial}


def on_hear_fruit(view: ChainView, fruit: Fruit, rules: Fruitchain) -> ChainView:
    """Add a heard fruit to F, keeping one fruit per message."""
    try:
        rules.check_fruit(fruit)
    except InvalidFruit:
        rules.invalid_fruits += 1
        raise
    if fruit.serial <= view.last_serial:
        return view
    key = (fruit.serial, fruit.digest)
    current = view.pending.get(key)
    if current == fruit:
        return view
    if current is not None:
        # a stale fruit never blocks a recent one for the same message
        recency = rules.params.recency
        old_recent, new_recent = is_recent(current, view, recency), is_recent(fruit, view, recency)
        if old_recent and not new_recent:
            return view
        if old_recent == new_recent:
            if rules.params.tiebreak == "hash":
                wins = fruit.hash < current.hash
            else:
                wins = fruit.parent_hash < current.parent_hash
            if not wins:
                return view
    pending = dict(view.pending)
    pending[key] = fruit
    return ChainView(view.blocks, pending, view.owner)


def _switch(view: ChainView, blocks: tuple) -> ChainView:
    """Adopt ``blocks``; fruits of abandoned blocks return to the pool."""
    pending = dict(view.pending)
    new_hashes = {b.hash for b in blocks}
    for old in view.blocks:
        if old.hash not in new_hashes:
            for f in old.fruits:
                pending.setdefault((f.serial, f.digest), f)
    return ChainView(blocks, _prune(pending, chain_last_serial(blocks)), view.owner)


def on_hear_chain(view: ChainView, chain: Sequence[SnailBlock], rules: Fruitchain) -> ChainView:
    """Adopt ``chain`` iff it validates and carries strictly more fruits."""
    chain = tuple(chain)
    try:
        rules.validate_chain(chain)
    except InvalidChain:
        rules.invalid_chains += 1
        raise
    if sum(len(b.fruits) for b in chain) > view.total_fruits:
        return _switch(view, chain)
    return view


def adopt_own_block(view: ChainView, block: SnailBlock, rules: Fruitchain) -> ChainView:
    """A miner always extends its own chain with the block it just mined."""
    rules.remember(block)
    rules._valid[block.hash] = True
    return _switch(view, view.blocks + (block,))


def next_message(view: ChainView, messages: Mapping[int, FastMessage], recency: int) -> FastMessage:
    """Oldest heard message whose serial has no recent, unincluded fruit."""
    recent = view.recent_hashes(recency)
    covered = {f.serial for f in view.pending.values() if f.pointer_hash in recent}
    for serial in sorted(s for s in messages if s > view.last_serial):
        if serial not in covered:
            return messages[serial]
    raise NoPendingMessage("no fast-block message left to mine")


@dataclass(frozen=True)
class MineResult:
    fruit: Optional[Fruit] = None
    block: Optional[SnailBlock] = None


def block_candidate(view: ChainView, params: MiningParams, message: FastMessage,
                    now: int = 0) -> SnailBlock:
    tip = view.tip
    recent = view.recent_hashes(params.recency)
    eligible = [f for f in view.pending.values() if f.pointer_hash in recent]
    fruits = tuple(select_contiguous(eligible, view.last_serial))
    pos = max(0, tip.number - params.pointer_window)
    number = tip.number + 1
    return SnailBlock(
        parent_hash=tip.hash,
        uncle_hash=ZERO_DIGEST,
        coinbase=view.owner,
        pointer_hash=view.blocks[pos].hash,
        pointer_number=pos,
        fruits_hash=fruits_hash(fruits),
        fast_hash=message.digest,
        fast_number=message.serial,
        sign_hash=ZERO_DIGEST,
        bloom=b"",
        difficulty=params.block_weight,
        fruit_difficulty=params.fruit_weight,
        number=number,
        publickey=b"",
        to_elect=bool(params.elect_every) and number % params.elect_every == 0,
        time=now,
        extra=b"",
        mix_digest=ZERO_DIGEST,
        nonce=0,
        fruits=fruits,
    )


def mine_step(view: ChainView, messages: Mapping[int, FastMessage], params: MiningParams,
              truehash_params: th.TruehashParams, rng, now: int = 0) -> Optional[MineResult]:
    """One nonce draw. Returns None when neither threshold is met."""
    try:
        message = next_message(view, messages, params.recency)
    except NoPendingMessage:
        message = None
    candidate = block_candidate(view, params, message or NULL_MESSAGE, now)
    nonce = rng.getrandbits(64)
    body = block_body_digest(candidate)
    header = mining_header(candidate.parent_hash, body, message or NULL_MESSAGE, view.owner)
    h = th.truehash(truehash_params, header, nonce)
    fruit = block = None
    if message is not None and th.suffix64(h) < params.fruit_difficulty:
        hang = view.blocks[max(0, view.height - params.fruit_pointer_depth)].hash
        fruit = Fruit(view.tip.hash, hang, body, message.digest, message.serial, view.owner,
                      nonce, params.fruit_weight, h)
    if th.prefix64(h) < params.block_difficulty:
        block = replace(candidate, nonce=nonce, hash=h,
                        mix_digest=th.mix_digest(truehash_params, header, nonce))
    if fruit is None and block is None:
        return None
    return MineResult(fruit, block)


def dump_chain(blocks: Sequence[SnailBlock], path) -> None:
    """JSON-lines, one block per line, fields in canonical order."""
    with open(path, "w") as fh:
        for block in blocks:
            fh.write(json.dumps(to_jsonable(block)) + "\n")


def load_chain(path) -> tuple:
    with open(path) as fh:
        return tuple(from_jsonable(SnailBlock, json.loads(line)) for line in fh if line.strip())
