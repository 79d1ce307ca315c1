import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minerva.channel import (CommitteeChannel, InfeasibleParams, KeyPair, build_table, check_matrix,
                             generate_matrix, gsize_warning, is_strongly_connected, open_sealed, seal)
from minerva.cli import matrix_seed

from oracles import closure_oracle


def test_hundred_seeds_at_31_4():
    for seed in range(100):
        m = generate_matrix(matrix_seed(seed), 31, 4)
        A = m.A
        assert all(sum(row) == 4 for row in A)
        assert all(sum(A[i][j] for i in range(31)) == 4 for j in range(31))
        assert all(A[i][i] == 0 for i in range(31))
        assert closure_oracle(A)
        assert check_matrix(A, 4) == []


def test_single_compromise_leaks_at_most_gsize_plus_one():
    members = [f"n{i}" for i in range(31)]
    addrs = {m: f"10.0.0.{i}:30303" for i, m in enumerate(members)}
    for seed in range(100):
        chan = CommitteeChannel.setup(members, addrs, matrix_seed(seed), 4)
        for j, m in enumerate(members):
            leaked = chan.leaked_by(m)
            assert len(leaked) <= 5
            expect = {addrs[members[i]] for i in chan.matrix.in_neighbors(j)} | {addrs[m]}
            assert leaked == expect


def test_connectivity_matches_closure_on_every_3x3():
    for bits in itertools.product((0, 1), repeat=9):
        A = [bits[0:3], bits[3:6], bits[6:9]]
        assert is_strongly_connected(A) == closure_oracle(A)


def test_only_three_cycles_pass_at_3x3_gsize_1():
    valid = [A for A in (
        [bits[0:3], bits[3:6], bits[6:9]] for bits in itertools.product((0, 1), repeat=9))
        if not check_matrix(A, 1)]
    assert sorted(valid) == sorted([[(0, 1, 0), (0, 0, 1), (1, 0, 0)], [(0, 0, 1), (1, 0, 0), (0, 1, 0)]])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.lists(
    st.lists(st.integers(0, 1), min_size=n, max_size=n), min_size=n, max_size=n)))
def test_connectivity_matches_closure_random(A):
    assert is_strongly_connected(A) == closure_oracle(A)


def test_block_diagonal_is_not_strongly_connected():
    # two disjoint 3-cycles: rows/cols sum to 1, diagonal zero, yet two islands
    A = [[0] * 6 for _ in range(6)]
    for base in (0, 3):
        for k in range(3):
            A[base + k][base + (k + 1) % 3] = 1
    assert not is_strongly_connected(A)
    assert check_matrix(A, 1) == ["not strongly connected"]


def test_check_matrix_reports_each_violation():
    A = [[1, 1, 0], [0, 0, 1], [1, 0, 0]]
    probs = check_matrix(A, 1)
    assert "nonzero diagonal" in probs and "row sum differs from gsize" in probs
    assert check_matrix([[0, 1], [1]], 1) == ["not square"]


def test_generation_deterministic_and_seed_sensitive():
    a = generate_matrix(matrix_seed(1), 13, 3)
    assert a == generate_matrix(matrix_seed(1), 13, 3)
    assert a.A != generate_matrix(matrix_seed(2), 13, 3).A


@pytest.mark.parametrize("csize,gsize", [(4, 4), (4, 0), (7, 9)])
def test_infeasible_params(csize, gsize):
    with pytest.raises(InfeasibleParams):
        generate_matrix(b"x", csize, gsize)


def test_gsize_warning_threshold():
    assert gsize_warning(31, 4) is None
    assert gsize_warning(31, 5) is None
    assert gsize_warning(31, 6) is not None
    assert gsize_warning(30, 5) is not None
    assert gsize_warning(30, 4) is None


def test_sealed_boxes_open_only_for_recipient():
    alice, bob = KeyPair.derive("alice"), KeyPair.derive("bob")
    box = seal(alice.public, 3, "1.2.3.4")
    assert open_sealed(alice.private, box) == "1.2.3.4"
    assert open_sealed(bob.private, box) is None
    table = build_table(0, bob.private, "own", [box, seal(bob.public, 5, "5.5.5.5")])
    assert table.known == {0: "own", 5: "5.5.5.5"}
