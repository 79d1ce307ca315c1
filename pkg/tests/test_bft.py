from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minerva.bft import (INNER, OUTER, CommitteeTerm, build_fast_block, Confirm, Decision, InsufficientStopSignatures,
                         InvalidProposal, Mempool, Propose, Query, StopSignal, TimestampHistory,
                         check_block, commit_quorum, count_stops, daily_stop, decode_stops,
                         emit_fast_block, encode_stops, export_daily_log, leader_propose, load_daily_log,
                         make_vote, max_faulty, mempool_update, sign, stop_threshold, tally,
                         validate_and_vote, verify_signature, verify_timestamp)
from minerva.encoding import ZERO_DIGEST, digest
from minerva.types import AccountState, Transaction, WorldState, genesis_fast_block

from oracles import LiteralGuard


def tx(sender="alice", nonce=0, T_p=0, seq=0, payload=1, recipient="bob"):
    return Transaction(account_nonce=nonce, gas_price=1, gas_limit=5, recipient=recipient, payload=payload,
                       physical_timestamp=T_p, sender=sender, sequence_number=seq)


# -- timestamp guard ---------------------------------------------------------

def test_timestamp_examples():
    hist = TimestampHistory(window=10)
    assert not verify_timestamp(tx(T_p=89), 100, hist)
    assert verify_timestamp(tx(T_p=100), 100, hist)
    h2 = TimestampHistory(window=30)
    assert verify_timestamp(tx(T_p=50), 50, h2)
    assert not verify_timestamp(tx(T_p=49), 50, h2)


def test_timestamp_truth_table_on_grid():
    grid = range(50)
    cases = 0
    for T_delta in (0, 1, 7, 30):
        for prev in [None, *grid]:
            for now in grid:
                for T_p in grid:
                    ours = TimestampHistory(window=T_delta)
                    oracle = LiteralGuard(T_delta)
                    if prev is not None:
                        seed = tx(T_p=prev)
                        ours.last_T_p["alice"] = prev
                        oracle.txn_history["alice"] = [seed]
                    t = tx(T_p=T_p)
                    assert verify_timestamp(t, now, ours) == oracle.check(t, now)
                    expect_last = oracle.txn_history.get("alice", [None])[-1]
                    assert ours.last_T_p.get("alice") == (expect_last.physical_timestamp if expect_last else None)
                    cases += 1
    assert cases == 4 * 51 * 50 * 50


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 49), st.integers(0, 49)), max_size=30),
       st.integers(0, 20))
def test_timestamp_sequences_match_literal_guard(events, T_delta):
    ours = TimestampHistory(window=T_delta)
    oracle = LiteralGuard(T_delta)
    for sender, now, T_p in events:
        t = tx(sender=sender, T_p=T_p)
        assert verify_timestamp(t, now, ours) == oracle.check(t, now)


# -- proposals -----------------------------------------------------------------

def setup_state(*names, balance=100):
    return WorldState({n: AccountState(0, balance) for n in names})


def propose(pool, state, now=10, hist=None, **kw):
    return leader_propose(pool, state, now, hist or TimestampHistory(30), leader="L",
                          parent=genesis_fast_block(state), **kw)


def test_proposal_sorted_by_timestamp_then_sequence():
    state = setup_state("a", "b", "c")
    pool = Mempool()
    mempool_update(pool, Propose(tx("a", T_p=5)))
    mempool_update(pool, Propose(tx("b", T_p=3)))
    assert [t.physical_timestamp for t in propose(pool, state).block.transactions] == [3, 5]
    pool = Mempool()
    pool.propose(tx("a", T_p=4, seq=2))
    pool.propose(tx("b", T_p=4, seq=1))
    assert [t.sequence_number for t in propose(pool, state).block.transactions] == [1, 2]


def test_bad_nonce_left_out_and_empty_pool_still_valid():
    state = setup_state("a")
    pool = Mempool()
    pool.propose(tx("a", nonce=3, T_p=5))
    pool.propose(tx("a", nonce=0, T_p=6))
    prop = propose(pool, state)
    assert [t.account_nonce for t in prop.block.transactions] == [0]
    empty = propose(Mempool(), state)
    assert empty.block.transactions == () and empty.block.state_root == state.root


def vote_on(prop, state, now=10):
    return validate_and_vote("m1", prop, state, now, TimestampHistory(30), parent=genesis_fast_block(state))


def test_validate_and_vote():
    state = setup_state("a", "b")
    pool = Mempool()
    pool.propose(tx("a", T_p=4))
    pool.propose(tx("b", T_p=6))
    prop = propose(pool, state)
    assert vote_on(prop, state).digest == prop.block.digest
    # an InsufficientBalance transaction
    poor = setup_state("a", "b", balance=1)
    assert vote_on(prop, poor).digest == ZERO_DIGEST
    # transactions in the wrong order, otherwise consistent
    swapped = list(reversed(prop.block.transactions))
    block, _ = build_fast_block(swapped, genesis_fast_block(state), state, "L", prop.block.time)
    bad = replace(prop, block=block)
    bad = replace(bad, signature=sign("L", INNER, bad.payload()))
    assert vote_on(bad, state).digest == ZERO_DIGEST
    with pytest.raises(InvalidProposal, match="sorted"):
        check_block(block, genesis_fast_block(state), state, TimestampHistory(30))
    # unsigned or forged proposals
    assert vote_on(replace(prop, signature=None), state).digest == ZERO_DIGEST
    assert vote_on(replace(prop, signature=sign("X", INNER, prop.payload())), state).digest == ZERO_DIGEST


def test_freshness_window_applies_to_fresh_proposals():
    state = setup_state("a")
    prop = propose(Mempool(), state, now=10)
    parent = genesis_fast_block(state)
    late = validate_and_vote("m", prop, state, 100, TimestampHistory(30), parent=parent, max_skew=30)
    assert late.digest == ZERO_DIGEST
    ok = validate_and_vote("m", prop, state, 35, TimestampHistory(30), parent=parent, max_skew=30)
    assert ok.digest == prop.block.digest


# -- tally and quorum ----------------------------------------------------------

def members(n):
    return [f"m{i:02d}" for i in range(n)]


def votes(ms, yes, no, target=b"\x01" * 32):
    out = [make_vote(m, 1, 0, target, "precommit") for m in ms[:yes]]
    out += [make_vote(m, 1, 0, ZERO_DIGEST, "precommit") for m in ms[yes:yes + no]]
    return out


def test_tally_examples_at_31():
    ms = members(31)
    assert tally(votes(ms, 21, 0), ms) is Decision.COMMITTED
    assert tally(votes(ms, 20, 11), ms) is Decision.FAILED
    assert tally(votes(ms, 20, 0), ms) is Decision.PENDING
    assert tally(votes(ms, 20, 10), ms) is Decision.PENDING


def test_tally_ignores_duplicates_and_outsiders():
    ms = members(4)
    vs = votes(ms, 2, 0) + [make_vote("m00", 1, 0, b"\x01" * 32, "precommit")] * 3
    vs += [make_vote("outsider", 1, 0, b"\x01" * 32, "precommit")]
    assert tally(vs, ms) is Decision.PENDING
    first_no = [make_vote("m00", 1, 0, ZERO_DIGEST, "precommit")] + votes(ms, 3, 0)
    assert tally(first_no, ms) is Decision.PENDING  # m00's later yes does not count


def test_quorum_formulations():
    for c in range(4, 101):
        f = max_faulty(c)
        q = commit_quorum(c)
        assert 3 * q > 2 * c >= 3 * (q - 1)  # smallest count above two thirds
        if c % 3 == 1:
            assert q == 2 * f + 1
        else:
            assert q > 2 * f + 1  # never weaker than 2f+1
        assert stop_threshold(c) == -(-c // 3)


@settings(max_examples=300)
@given(st.integers(4, 40), st.data())
def test_tally_matches_counting_oracle(c, data):
    ms = members(c)
    yes = data.draw(st.integers(0, c))
    no = data.draw(st.integers(0, c - yes))
    order = data.draw(st.permutations(range(yes + no)))
    vs = votes(ms, yes, no)
    vs = [vs[i] for i in order]
    if 3 * yes > 2 * c:
        expect = Decision.COMMITTED
    elif 3 * (c - no) <= 2 * c:
        expect = Decision.FAILED
    else:
        expect = Decision.PENDING
    assert tally(vs, ms) is expect


# -- emission, mempool, terms --------------------------------------------------

def test_emit_fast_block():
    state = setup_state("a")
    parent = replace(genesis_fast_block(state), serial=7, number=7)
    block, msg = emit_fast_block([], parent, state)
    assert block.serial == 8 and block.state_root == state.root
    assert msg.digest == block.digest and msg.serial == 8
    block2, _ = emit_fast_block([tx("a")], parent, state)
    assert block2.state_root != state.root


def test_mempool_events():
    pool = Mempool()
    assert mempool_update(pool, Query()) == frozenset()
    t = tx()
    mempool_update(pool, Propose(t))
    mempool_update(pool, Propose(t))
    assert list(pool.pending) == [t.tx_id]
    block, _ = emit_fast_block([t], genesis_fast_block(setup_state("alice")), setup_state("alice"))
    mempool_update(pool, Confirm(block))
    assert not pool.pending and mempool_update(pool, Query()) == {t.tx_id}
    mempool_update(pool, Propose(t))
    assert not pool.pending


def test_round_robin_leader():
    term = CommitteeTerm(0, members(7), start_serial=5, leader_index=2)
    assert term.leader(5) == "m02"
    assert term.leader(6) == "m03"
    assert term.leader(5, 1) == "m03"
    assert [term.leader(5, r) for r in range(7)] == [f"m{(2 + r) % 7:02d}" for r in range(7)]


def test_daily_stop_threshold():
    ms = members(31)
    term = CommitteeTerm(3, ms)
    e = digest(b"election")
    stops = [StopSignal.create(m, 3, e) for m in ms[:11]]
    final = daily_stop(term, stops)
    assert final.election_block == e and len(final.stoppers) == 11
    assert len(final.signatures) == 31
    assert all(s.namespace == OUTER and verify_signature(s, final.log_hash, OUTER) for s in final.signatures)
    with pytest.raises(InsufficientStopSignatures):
        daily_stop(term, stops[:10])
    outsider = StopSignal.create("intruder", 3, e)
    with pytest.raises(InsufficientStopSignatures):
        daily_stop(term, stops[:10] + [outsider])
    wrong_term = StopSignal.create(ms[20], 4, e)
    with pytest.raises(InsufficientStopSignatures):
        daily_stop(term, stops[:10] + [wrong_term, stops[0]])


def test_stop_signal_namespaces_and_codec():
    e = digest(b"x")
    s = StopSignal.create("m00", 1, e)
    assert s.signature.namespace == OUTER and s.valid()
    inner_forgery = replace(s, signature=sign("m00", INNER, StopSignal.payload_for(1, e)))
    inner_forgery = replace(inner_forgery, signature=replace(inner_forgery.signature, namespace=OUTER))
    assert not inner_forgery.valid()
    assert decode_stops(encode_stops([s])) == [s]
    assert decode_stops(b"") == [] and encode_stops([]) == b""
    term = CommitteeTerm(1, ["m00", "m01"])
    assert count_stops(term, [s, s]) == {e: {"m00"}}
    vote = make_vote("m00", 1, 0, e, "prevote")
    assert vote.signature.namespace == INNER
    assert not verify_signature(vote.signature, vote.payload(), OUTER)


def test_daily_log_export_round_trip(tmp_path):
    state = setup_state("alice")
    b1, _ = emit_fast_block([tx()], genesis_fast_block(state), state)
    path = tmp_path / "daylog.jsonl"
    with open(path, "w") as fh:
        export_daily_log(0, [b1], fh)
    assert load_daily_log(path) == [b1]


def test_committee_term_invariants():
    with pytest.raises(ValueError):
        CommitteeTerm(0, ["a", "a", "b", "c"])
    with pytest.raises(ValueError):
        CommitteeTerm(0, ["a", "b", "c", "d"], leader_index=4)
