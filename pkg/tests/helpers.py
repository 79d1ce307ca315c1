"""Small builders shared by the test modules."""

import random
from dataclasses import replace

from minerva import truehash as th
from minerva.encoding import digest
from minerva.fruitchain import Fruitchain, MiningParams, adopt_own_block, genesis_view, mine_step, on_hear_fruit
from minerva.types import FastMessage, Fruit, genesis_snail_block

TWO_64 = 1 << 64


def messages(n, start=1):
    return {s: FastMessage(bytes([s % 256]) * 32, s) for s in range(start, start + n)}


def easy_rules(block_odds=4, recency=17, **kw):
    """Every draw is a fruit; one draw in ``block_odds`` is also a block."""
    epoch = kw.pop("epoch", 20)
    params = MiningParams(TWO_64 // block_odds, TWO_64, recency=recency, **kw)
    return Fruitchain(params, th.TruehashParams(epoch_length=epoch))


def grow(rules, view, msgs, rng, blocks, owner="m0", max_draws=100_000):
    """Mine on ``view`` until ``blocks`` more blocks exist; fruits go to the pool."""
    view = view.with_owner(owner) if view.owner != owner else view
    target = view.height + blocks
    for _ in range(max_draws):
        if view.height >= target:
            return view
        res = mine_step(view, msgs, rules.params, rules.params_at(view.tip.hash), rng)
        if res is None:
            continue
        if res.fruit is not None:
            view = on_hear_fruit(view, res.fruit, rules)
        if res.block is not None:
            view = adopt_own_block(view, res.block, rules)
    raise AssertionError("mining did not finish")


def fresh_chain(seed=0, blocks=5, n_msgs=200, owner="m0", **kw):
    rules = easy_rules(**kw)
    view = grow(rules, genesis_view(owner), messages(n_msgs), random.Random(seed), blocks, owner)
    return rules, view


def fake_fruit(serial, h=None, difficulty=1, miner="m", pointer=bytes(32)):
    h = h if h is not None else bytes([serial % 256]) * 32
    return Fruit(pointer, pointer, bytes(32), bytes(32), serial, miner, 0, difficulty, h)


def make_branch(rng, shared, length, max_fruits):
    blocks = list(shared)
    for _ in range(length):
        fs = tuple(fake_fruit(1, difficulty=rng.randint(1, 5)) for _ in range(rng.randint(0, max_fruits)))
        blocks.append(replace(genesis_snail_block(), fruits=fs, number=len(blocks), hash=rng.randbytes(32)))
    return tuple(blocks)


def block_with(number, miners):
    fruits = tuple(Fruit(bytes(32), bytes(32), bytes(32), bytes(32), i, m, 0, 1, digest(f"{number}/{i}".encode()))
                   for i, m in enumerate(miners))
    return replace(genesis_snail_block(), number=number, fruits=fruits, hash=digest(f"b{number}".encode()))


def chain_of(counts, per_block=50):
    """Genesis plus blocks whose fruits give each miner ``counts[miner]`` fruits."""
    flat = [m for m, n in sorted(counts.items()) for _ in range(n)]
    blocks = [genesis_snail_block()]
    for i in range(0, len(flat), per_block):
        blocks.append(block_with(len(blocks), flat[i:i + per_block]))
    return blocks


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict = {}


def verdict(number, name, ok, detail=""):
    line = f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line
