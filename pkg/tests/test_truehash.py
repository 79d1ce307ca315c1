import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from minerva import truehash as th
from minerva.encoding import digest

perms = st.integers(2, 24).flatmap(lambda n: st.tuples(st.permutations(range(n)), st.permutations(range(n))))


def test_pad_header_determinism_and_length():
    a = th.pad_header(b"header", 0)
    assert a == th.pad_header(b"header", 0)
    assert len(a) == 16 and len(th.pad_header(b"x", 3, 40)) == 40
    assert a.v != th.pad_header(b"header", 1).v


def test_identity_element_gives_base_digest():
    p = th.TruehashParams()
    assert p.current_element == tuple(range(16))
    for nonce in range(50):
        assert th.truehash(p, b"hdr", nonce) == th.vector_digest(th.pad_header(b"hdr", nonce).v)
        assert th.truehash(p, b"hdr", nonce) == th.mix_digest(p, b"hdr", nonce)


def test_distinct_elements_give_distinct_digests():
    rng = random.Random(3)
    differ = 0
    for _ in range(1000):
        g = tuple(rng.sample(range(16), 16))
        g2 = tuple(rng.sample(range(16), 16))
        if g == g2:
            continue
        a = th.truehash(th.TruehashParams(current_element=g), b"fixed", 7)
        b = th.truehash(th.TruehashParams(current_element=g2), b"fixed", 7)
        differ += a != b
    assert differ >= 990


@given(perms, st.data())
def test_action_is_a_homomorphism(pair, data):
    g, h = pair
    v = data.draw(st.lists(st.integers(0, 2**64 - 1), min_size=len(g), max_size=len(g)))
    assert th.act(h, th.act(g, v)) == th.act(th.compose(h, g), v)


def test_rotation_only_on_epoch_boundaries():
    p = th.TruehashParams(epoch_length=20)
    hist = [digest(bytes([i])) for i in range(20)]
    for bad in (0, 1, 19, 21, 39, -20):
        with pytest.raises(th.WrongEpochBoundary):
            th.rotate_element(hist, p, bad)
    with pytest.raises(th.WrongEpochBoundary):
        th.rotate_element(hist[:19], p, 20)
    assert th.rotation_heights(p, 100) == [20, 40, 60, 80, 100]
    assert th.rotate_element(hist, p, 20).current_element == th.rotate_element(list(hist), p, 40).current_element


def test_rotation_is_deterministic_and_fresh_each_epoch():
    p = th.TruehashParams()
    rng = random.Random(1)
    changed = 0
    for _ in range(1000):
        h1 = [rng.randbytes(32) for _ in range(20)]
        h2 = [rng.randbytes(32) for _ in range(20)]
        a = th.rotate_element(h1, p, 20)
        assert a == th.rotate_element(list(h1), p, 20)
        changed += a.current_element != th.rotate_element(h2, a, 40).current_element
    assert changed >= 999


def test_rotated_element_is_uniform_on_small_group():
    # S_3 has six elements; 6000 seeded shuffles should hit each about 1000 times
    p = th.TruehashParams(group_degree=3, epoch_length=1)
    counts = {}
    for i in range(6000):
        g = th.rotate_element([digest(i.to_bytes(4, "big"))], p, 1).current_element
        counts[g] = counts.get(g, 0) + 1
    assert len(counts) == 6
    chi2 = sum((c - 1000) ** 2 / 1000 for c in counts.values())
    assert chi2 < 20.5  # p ~ 0.001 at 5 degrees of freedom


def test_prefix_threshold_frequency_within_three_sigma():
    p = th.TruehashParams(current_element=tuple(reversed(range(16))))
    D = (1 << 64) // 10
    n = 100_000
    hits = sum(th.prefix64(th.truehash(p, b"uniform", k)) < D for k in range(n))
    q = D / 2**64
    sigma = math.sqrt(n * q * (1 - q))
    assert abs(hits - n * q) <= 3 * sigma


def test_params_invariants():
    with pytest.raises(ValueError):
        th.TruehashParams(group_degree=3, current_element=(0, 0, 1))
    with pytest.raises(ValueError):
        th.TruehashParams(epoch_length=0)
