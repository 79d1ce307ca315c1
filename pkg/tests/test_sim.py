from collections import namedtuple
from fractions import Fraction

import pytest

from minerva.config import ScenarioConfig
from minerva.harness.runner import check_assertions, metrics_document, simulate
from minerva.sim.adversary import BudgetExceeded, UnknownAddress, allowed_corruptions, check_budget, corrupt, ddos
from minerva.sim.metrics import common_prefix, fast_divergences, q_fast, q_snail, snail_consistency
from minerva.sim.selfish import ADOPT, PUBLISH_ALL, PUBLISH_MATCH, WAIT, LeadState, selfish_strategy

B = namedtuple("B", "hash number coinbase")


def small(**over):
    base = {"network.nodes": 10, "committee.csize": 4, "committee.gsize": 1,
            "run.horizon": 600, "workload.clients": 4}
    base.update(over)
    return ScenarioConfig().replace(**base)


def test_honest_small_run_is_safe_and_live():
    sim, report = simulate(small())
    assert report.consistency_ok and report.fast_divergences == 0
    assert report.liveness_ok and report.payments_confirmed == report.payments_eligible > 0
    assert report.election_agreement and report.truehash_agreement
    assert report.rewards["conserved"]
    assert all(check_assertions(sim.cfg, report).values())


def test_same_seed_same_bytes_other_seed_differs():
    a = simulate(small())[1]
    b = simulate(small())[1]
    cfg = small()
    assert metrics_document(cfg, a, {}) == metrics_document(cfg, b, {})
    c = simulate(small(**{"run.seed": 2}))[1]
    assert metrics_document(cfg, a, {}) != metrics_document(cfg, c, {})


def test_one_byzantine_of_four_cannot_break_safety():
    for seed in (1, 2, 3):
        _, report = simulate(small(**{"run.seed": seed, "adversary.strategy": "byzantine_vote",
                                      "adversary.corrupt": 1, "adversary.equivocate": True,
                                      "workload.tau_bound": 300}))
        assert report.corrupted and report.consistency_ok
        assert report.liveness_tau is not None


def test_silent_member_tolerated():
    _, report = simulate(small(**{"adversary.strategy": "silent", "adversary.corrupt": 1,
                                  "workload.tau_bound": 300}))
    assert report.consistency_ok and report.liveness_ok


def test_progress_resumes_after_flooding():
    # leaked members are flooded for a while; retransmission must restore progress
    _, report = simulate(small(**{"adversary.strategy": "leak_addresses", "adversary.corrupt": 1,
                                  "adversary.tau": 5, "adversary.ddos_duration": 100,
                                  "run.horizon": 1000, "workload.tau_bound": 300,
                                  "network.nodes": 12, "committee.csize": 7, "committee.gsize": 2}))
    assert report.messages_dropped > 0
    assert report.consistency_ok and report.liveness_ok
    assert report.payments_confirmed == report.payments_eligible > 0


def test_budget_enforced():
    with pytest.raises(BudgetExceeded):
        simulate(small(**{"adversary.strategy": "byzantine_vote", "adversary.corrupt": 2,
                          "adversary.budget": "1/4"}))
    assert allowed_corruptions(Fraction(1, 3), 31) == 11
    assert allowed_corruptions(Fraction(12, 31), 31) == 12
    check_budget(11, 31, Fraction(1, 3))
    with pytest.raises(BudgetExceeded):
        check_budget(12, 31, Fraction(1, 3))


def test_corruption_is_never_instant():
    warnings = []
    c = corrupt("n1", 50, 0, "silent", warnings)
    assert c.effect_at == 51 and warnings
    assert corrupt("n1", 50, 7, "silent").effect_at == 57


def test_ddos_needs_learned_addresses():
    w = ddos({"a", "b"}, {"a"}, 10, 5)
    assert w.covers("a", 10) and w.covers("a", 14) and not w.covers("a", 15) and not w.covers("b", 12)
    with pytest.raises(UnknownAddress):
        ddos({"a"}, {"a", "c"}, 0, 5)


def test_selfish_policy_table():
    s = LeadState()
    assert selfish_strategy(s, "honest") == ADOPT
    s = LeadState()
    assert selfish_strategy(s, "mine") == WAIT
    assert selfish_strategy(s, "honest") == PUBLISH_ALL and s.racing
    assert selfish_strategy(s, "mine") == PUBLISH_ALL and not s.racing
    s = LeadState()
    for _ in range(2):
        selfish_strategy(s, "mine")
    assert selfish_strategy(s, "honest") == PUBLISH_ALL
    s = LeadState()
    for _ in range(4):
        selfish_strategy(s, "mine")
    assert selfish_strategy(s, "honest") == PUBLISH_MATCH
    with pytest.raises(ValueError):
        selfish_strategy(s, "other")


def chain(*tags):
    return [B(t.encode(), i, "x") for i, t in enumerate(tags)]


def test_prefix_and_consistency_helpers():
    a, b = chain("g", "a", "b", "c"), chain("g", "a", "x")
    assert common_prefix(a, b) == 2 and common_prefix(a, a) == 4
    assert snail_consistency([a, b], 2) == (True, 2)
    assert snail_consistency([a, b], 1) == (False, 2)


def test_fast_divergence_counts_honest_only():
    commits = {1: {b"A": {("n1", 0), ("n2", 0)}},
               2: {b"A": {("n1", 0)}, b"B": {("n2", 0)}},
               3: {b"A": {("n1", 0)}, b"B": {("bad", 0)}}}
    assert fast_divergences(commits, lambda n: n != "bad") == 1


def test_quality_fractions():
    assert q_fast(["a", "b", "c"], {"b"}) == Fraction(2, 3)
    blocks = [B(b"g", 0, "")] + [B(bytes([i]), i, "bad" if i % 4 == 0 else "ok") for i in range(1, 9)]
    assert q_snail(blocks, {"bad"}, 4) == Fraction(3, 4)
    assert q_snail(blocks[:1], {"bad"}, 4) == 1
