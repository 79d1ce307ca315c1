import itertools
import random
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minerva.encoding import digest
from minerva.harness.rewards import (GasPool, InvalidAlpha, committee_count, distribute_block_reward,
                                     equal_split, net_positions, reward_split, settle_gas_pool)
from minerva.types import Fruit, genesis_snail_block


def block(coinbase, fruit_miners):
    fruits = tuple(Fruit(bytes(32), bytes(32), bytes(32), bytes(32), i, m, 0, 1, digest(bytes([i % 256, len(m)])))
                   for i, m in enumerate(fruit_miners))
    return replace(genesis_snail_block(), number=1, coinbase=coinbase, fruits=fruits)


def test_n_equals_alpha_is_exact_half():
    for n in range(2, 60):
        assert reward_split(n, n, 1000) == (500, 500)
        assert reward_split(n, n, 1001) == (500, 501)
    assert reward_split(3, Fraction(3), 10 ** 18) == (5 * 10 ** 17, 5 * 10 ** 17)


def test_split_examples():
    assert reward_split(1, 3, 100) == (25, 75)
    assert reward_split(0, 2, 100) == (0, 100)
    assert reward_split(2, Fraction(3, 2), 7) == (4, 3)


def test_split_monotone_in_committees():
    for alpha in (Fraction(3, 2), 2, 5, 17):
        shares = [reward_split(n, alpha, 10_000)[0] for n in range(51)]
        assert shares == sorted(shares)
        assert all(b + p == 10_000 for b, p in (reward_split(n, alpha, 10_000) for n in range(51)))


@pytest.mark.parametrize("alpha", [1, Fraction(1, 2), 0, -3])
def test_alpha_must_exceed_one(alpha):
    with pytest.raises(InvalidAlpha):
        reward_split(1, alpha, 100)


def test_distribute_examples():
    b = block("m", ["a", "a", "b", "c"])
    assert distribute_block_reward(b, 100, Fraction(1, 10)) == {"a": 45, "b": 22, "c": 22, "m": 11}
    assert distribute_block_reward(block("m", []), 100) == {"m": 100}
    assert distribute_block_reward(b, 100, 0, base=20) == {"a": 40, "b": 20, "c": 20, "m": 20}


def test_distribute_conserves_exhaustively():
    miners = ["a", "b", "m"]
    for n in range(0, 6):
        for combo in itertools.product(miners, repeat=n):
            b = block("m", list(combo))
            for reward in (0, 1, 7, 100, 997):
                for beta in (0, Fraction(1, 10), Fraction(1, 3), 1):
                    for base in {0, reward // 3, reward}:
                        out = distribute_block_reward(b, reward, beta, base)
                        assert sum(out.values()) == reward
                        assert all(v > 0 for v in out.values())


def test_distribute_proportional_to_fruit_count():
    b = block("m", ["a"] * 30 + ["b"] * 10)
    out = distribute_block_reward(b, 4000, 0)
    assert out == {"a": 3000, "b": 1000}


def test_settle_small_pools_exhaustive():
    for size in (3, 5):
        members = [f"n{i}" for i in range(size)]
        values = range(4) if size == 3 else range(3)
        for combo in itertools.product(values, repeat=size):
            pool = GasPool(1, dict(zip(members, combo)))
            s = settle_gas_pool(pool)
            assert s.mu == Fraction(sum(combo), size)
            assert all(v == s.mu for v in net_positions(pool, s).values())
            assert sum(s.principal.values()) == sum(combo)
            assert max(s.principal.values()) - min(s.principal.values()) <= 1
            assert all(a > 0 for _, _, a in s.transfers)
            assert len(s.transfers) <= size - 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=31))
def test_settle_random_pools(values):
    pool = GasPool(7, {f"n{i:02d}": v for i, v in enumerate(values)})
    s = settle_gas_pool(pool)
    assert all(v == s.mu for v in net_positions(pool, s).values())
    assert sum(s.principal.values()) == pool.total
    paid_in = sum(a for _, _, a in s.transfers)
    assert paid_in == sum(s.mu - v for v in values if v < s.mu)


def test_equal_split():
    assert equal_split(10, ["a", "b", "c"]) == {"a": 4, "b": 3, "c": 3}
    rng = random.Random(3)
    for _ in range(500):
        k = rng.randint(1, 40)
        total = rng.randint(0, 10 ** 9)
        assert sum(equal_split(total, [str(i) for i in range(k)]).values()) == total


def test_committee_count_thresholds():
    assert committee_count([10, 10], 2, spawn_above=8, retire_below=2) == 3
    assert committee_count([1, 1], 2, spawn_above=8, retire_below=2) == 1
    assert committee_count([1, 1], 1, spawn_above=8, retire_below=2) == 1
    assert committee_count([5], 2, spawn_above=8, retire_below=2) == 2
    assert committee_count([], 4, 8, 2) == 4
    assert committee_count([100] + [3] * 8, 2, 8, 2) == 2  # old spike outside the window


def test_empty_pool_rejected():
    with pytest.raises(ValueError):
        GasPool(1).mu
