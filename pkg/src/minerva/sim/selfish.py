"""Selfish mining: the lead-based withholding policy and an abstract mining race.

The race draws one mining attempt per step and assigns it to a miner by
hash share. In ``nakamoto`` mode every attempt is a block and the longest
chain wins. In ``fruitchain`` mode every attempt is a fruit, a fraction of
attempts are also blocks, fruits are broadcast at once and hang from a block
a few levels below the miner's tip, and honest nodes adopt the chain with
more fruits. The withholding miner uses the same block policy in both modes.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from ..encoding import digest
from ..fruitchain import (
    Fruitchain,
    MiningParams,
    adopt_own_block,
    genesis_view,
    mine_step,
    on_hear_fruit,
)
from ..truehash import TruehashParams
from ..types import FastMessage

NAKAMOTO = "nakamoto"
FRUITCHAIN = "fruitchain"

# actions returned by selfish_strategy
WAIT = "wait"
ADOPT = "adopt"
PUBLISH_ALL = "publish_all"
PUBLISH_MATCH = "publish_match"


@dataclass
class LeadState:
    private: int = 0    # withheld-branch blocks since the fork
    public: int = 0     # public-branch blocks since the fork
    published: int = 0  # private blocks already released
    racing: bool = False


def selfish_strategy(state: LeadState, event: str) -> str:
    """Classical lead-based withholding.

    ``event`` is ``"mine"`` (the withholding miner found a block) or
    ``"honest"`` (a public block appeared). Returns what to do with the
    private branch; ``state`` is updated in place.
    """
    if event == "mine":
        state.private += 1
        if state.racing:
            state.racing = False
            return PUBLISH_ALL
        return WAIT
    if event != "honest":
        raise ValueError(f"unknown event {event!r}")
    lead = state.private - state.public
    state.public += 1
    if lead <= 0:
        return ADOPT
    if lead == 1:
        state.racing = True
        return PUBLISH_ALL
    if lead == 2:
        return PUBLISH_ALL
    return PUBLISH_MATCH


@dataclass(eq=False)
class Block:
    parent: Optional["Block"]
    miner: int
    height: int
    fruits: tuple = ()
    fruit_total: int = 0

    def ancestors(self, count: int) -> list:
        out = []
        b = self
        while b is not None and len(out) < count:
            out.append(b)
            b = b.parent
        return out


@dataclass(frozen=True)
class RaceFruit:
    ident: int
    miner: int
    hang: Block


@dataclass
class RaceResult:
    block_miners: Counter
    fruit_miners: Counter
    blocks: int
    fruits: int
    shares: tuple
    adversary: Optional[int]

    def block_share(self, miner: int) -> float:
        return self.block_miners[miner] / self.blocks if self.blocks else 0.0

    def fruit_share(self, miner: int) -> float:
        return self.fruit_miners[miner] / self.fruits if self.fruits else 0.0


def _included(tip: Block, depth: int) -> set:
    return {f.ident for b in tip.ancestors(depth) for f in b.fruits}


def _better(a: Block, b: Block, mode: str) -> bool:
    if mode == NAKAMOTO:
        return a.height > b.height
    return a.fruit_total > b.fruit_total


def selfish_race(shares: Sequence[float], adversary: Optional[int], mode: str, steps: int,
                 seed: int = 0, gamma: float = 0.5, block_prob: float = 0.1,
                 recency: int = 17, pointer_depth: int = 4) -> RaceResult:
    """Run ``steps`` mining attempts and report who owns the final chain."""
    if mode not in (NAKAMOTO, FRUITCHAIN):
        raise ValueError(f"unknown mode {mode!r}")
    rng = random.Random(seed)
    miners = list(range(len(shares)))
    genesis = Block(None, -1, 0)
    public = genesis           # honest nodes' first-seen best tip
    rival: Optional[Block] = None  # released branch tied with ``public``
    private = genesis          # withholding miner's tip
    withheld: list = []        # private blocks not yet released
    state = LeadState()
    pool: list = []
    next_fruit = 0

    def honest_tip() -> Block:
        if rival is not None and rng.random() < gamma:
            return rival
        return public

    def make_block(parent: Block, miner: int) -> Block:
        fruits = ()
        if mode == FRUITCHAIN:
            window = {id(b) for b in parent.ancestors(recency)}
            taken = _included(parent, recency)
            fruits = tuple(f for f in pool if id(f.hang) in window and f.ident not in taken)
        return Block(parent, miner, parent.height + 1, fruits, parent.fruit_total + len(fruits))

    def release(blocks: list) -> None:
        nonlocal public, rival
        if not blocks:
            return
        tip = blocks[-1]
        if _better(tip, public, mode):
            public, rival = tip, None
        elif not _better(public, tip, mode):
            rival = tip

    for _ in range(steps):
        miner = rng.choices(miners, weights=shares)[0]
        is_adv = miner == adversary
        base = private if is_adv else honest_tip()
        if mode == FRUITCHAIN:
            hang = base.ancestors(pointer_depth + 1)[-1]
            pool.append(RaceFruit(next_fruit, miner, hang))
            next_fruit += 1
            if rng.random() >= block_prob:
                continue
        block = make_block(base, miner)
        if is_adv:
            private = block
            withheld.append(block)
            action = selfish_strategy(state, "mine")
        else:
            if base is rival:
                public, rival = block, None
            elif _better(block, public, mode) or base is public:
                public, rival = block, None
            action = selfish_strategy(state, "honest") if adversary is not None else ADOPT
        if adversary is None:
            continue
        if action == ADOPT:
            private = public
            withheld = []
            state = LeadState()
        elif action == PUBLISH_ALL:
            release(withheld)
            withheld = []
            if not state.racing:
                if public is private:
                    state = LeadState()
                else:
                    private = public
                    state = LeadState()
        elif action == PUBLISH_MATCH:
            k = next(i for i, b in enumerate(withheld) if b.height >= public.height)
            release(withheld[: k + 1])
            withheld = withheld[k + 1:]
        if mode == FRUITCHAIN and len(pool) > 4096:
            horizon = public.height - recency - pointer_depth - 64
            pool = [f for f in pool if f.hang.height >= horizon]
    if withheld:
        release(withheld)
    final = public
    chain = final.ancestors(final.height)
    blocks = Counter(b.miner for b in chain)
    fruits = Counter(f.miner for b in chain for f in b.fruits)
    return RaceResult(blocks, fruits, len(chain), sum(fruits.values()), tuple(shares), adversary)


def honest_fruit_shares(shares: Sequence[float], fruits: int, seed: int = 0,
                        block_interval: int = 20, fruit_interval: int = 2) -> tuple[Counter, int]:
    """All-honest mining with real truehash draws on one shared view.

    Runs until the chain holds ``fruits`` fruits and returns (fruits per miner
    index in the chain, number of draws).
    """
    params = MiningParams.from_intervals(block_interval, fruit_interval)
    rules = Fruitchain(params, TruehashParams())
    names = [f"m{i}" for i in range(len(shares))]
    view = genesis_view()
    rng = random.Random(seed)
    miners = range(len(shares))
    msg_cache: dict = {}

    def upcoming(serial):
        # an endless stream of certified messages
        out = {}
        for s in range(serial + 1, serial + 4 * block_interval):
            if s not in msg_cache:
                msg_cache[s] = FastMessage(digest(b"msg" + s.to_bytes(8, "big")), s)
            out[s] = msg_cache[s]
        return out

    draws = 0
    while view.total_fruits < fruits:
        idx = rng.choices(miners, weights=shares)[0]
        mine_view = view.with_owner(names[idx])
        th = rules.params_at(view.tip.hash)
        out = mine_step(mine_view, upcoming(view.last_serial), params, th, rng, draws)
        draws += 1
        if out is None:
            continue
        if out.fruit is not None:
            mine_view = on_hear_fruit(mine_view, out.fruit, rules)
        if out.block is not None:
            mine_view = adopt_own_block(mine_view, out.block, rules)
        view = mine_view.with_owner("")
    counts = Counter()
    for b in view.blocks:
        for f in b.fruits:
            counts[names.index(f.miner)] += 1
    return counts, draws
