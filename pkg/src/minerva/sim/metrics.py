"""Run measurements: committee and chain quality, consistency, liveness."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    horizon: int
    Q_fast: list = field(default_factory=list)      # per term: {term, csize, corrupted, q}
    Q_snail: float = 1.0
    consistency_ok: bool = True
    fast_divergences: int = 0
    snail_consistent: bool = True
    common_prefix_depth: int = 0
    liveness_tau: Optional[int] = None
    liveness_ok: bool = True
    payments_eligible: int = 0
    payments_confirmed: int = 0
    payments_unconfirmed: int = 0
    throughput: float = 0.0
    committed_txs: int = 0
    fast_height: int = 0
    snail_height: int = 0
    terms: int = 1
    election_agreement: bool = True
    truehash_agreement: bool = True
    truehash_epochs: int = 0
    invalid_fruits: int = 0
    invalid_chains: int = 0
    rejected_proposals: int = 0
    blocks_mined: int = 0
    fruits_mined: int = 0
    messages_sent: int = 0
    messages_dropped: int = 0
    corrupted: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    rewards: dict = field(default_factory=dict)
    sharding: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def common_prefix(a: Sequence, b: Sequence) -> int:
    """Number of leading blocks two chains share."""
    k = min(len(a), len(b))
    while k > 0 and a[k - 1].hash != b[k - 1].hash:
        k -= 1
    return k


def snail_consistency(chains: Sequence[Sequence], recency: int) -> tuple[bool, int]:
    """Every chain with its last ``recency`` blocks chopped must be a prefix of
    every other chain. Returns (ok, deepest divergence seen)."""
    ok = True
    depth = 0
    for i, a in enumerate(chains):
        for b in chains[i + 1:]:
            shared = common_prefix(a, b)
            d = max(len(a), len(b)) - shared
            depth = max(depth, d)
            if len(a) - shared > recency or len(b) - shared > recency:
                ok = False
    return ok, depth


def fast_divergences(commits: dict, honest: Callable[[str], bool]) -> int:
    """Serials at which honest nodes committed different blocks."""
    count = 0
    for serial in sorted(commits):
        digests = [d for d, who in commits[serial].items() if any(honest(n) for n, _ in who)]
        if len(digests) > 1:
            count += 1
    return count


def q_fast(members: Sequence[str], corrupted) -> Fraction:
    bad = sum(1 for m in members if m in corrupted)
    return Fraction(len(members) - bad, len(members))


def q_snail(blocks: Sequence, corrupted, recency: int) -> Fraction:
    recent = [b for b in blocks[-recency:] if b.number > 0]
    if not recent:
        return Fraction(1)
    honest = sum(1 for b in recent if b.coinbase not in corrupted)
    return Fraction(honest, len(recent))


def measure(sim) -> MetricsReport:
    cfg = sim.cfg
    w = sim.world
    honest = sim.honest_nodes()
    ref = sim.reference()
    corrupted = set(w.corrupted)
    report = MetricsReport(cfg.run.name, cfg.run.seed, cfg.run.horizon)

    for tid in sorted(w.terms):
        term = w.terms[tid]
        q = q_fast(term.members, corrupted)
        report.Q_fast.append({"term": tid, "csize": term.csize,
                              "corrupted": sum(1 for m in term.members if m in corrupted),
                              "q": float(q), "q_exact": str(q)})
    report.Q_snail = float(q_snail(ref.view.blocks, corrupted, cfg.snail.recency))

    report.fast_divergences = fast_divergences(w.commits, w.honest)
    ok, depth = snail_consistency([sim.nodes[n].view.blocks for n in honest], cfg.snail.recency)
    checks_ok = all(c["ok"] for c in sim.snail_checks) and ok
    report.snail_consistent = checks_ok
    report.common_prefix_depth = max([depth] + [c["depth"] for c in sim.snail_checks])
    report.consistency_ok = report.fast_divergences == 0 and checks_ok

    cutoff = cfg.run.horizon - cfg.workload.tau_bound
    eligible = [p for p in w.payments.values() if p.first_submit <= cutoff]
    confirmed = [p for p in eligible if p.confirmed_at is not None]
    report.payments_eligible = len(eligible)
    report.payments_confirmed = len(confirmed)
    report.payments_unconfirmed = len(eligible) - len(confirmed)
    if len(confirmed) == len(eligible):
        report.liveness_tau = max((p.confirmed_at - p.first_submit for p in confirmed), default=0)
        report.liveness_ok = report.liveness_tau <= cfg.workload.tau_bound
    else:
        report.liveness_tau = None
        report.liveness_ok = False

    report.committed_txs = sum(len(b.transactions) for b in ref.chain)
    report.throughput = round(report.committed_txs / cfg.run.horizon, 6)
    report.fast_height = ref.tip.serial
    report.snail_height = ref.view.height
    report.terms = len(w.terms)

    agree = True
    for tid, by_node in sorted(w.term_members.items()):
        views = {tuple(by_node[n]) for n in honest if n in by_node}
        if len(views) > 1:
            agree = False
    report.election_agreement = agree

    elements: dict = {}
    th_ok = True
    for n in honest:
        for boundary, element in sim.nodes[n].rotations.items():
            prev = elements.setdefault(boundary, element)
            if prev != element:
                th_ok = False
    for boundary, element in elements.items():
        shared = w.rules._epoch_params.get(boundary)
        if shared is not None and shared.current_element != element:
            th_ok = False
    report.truehash_agreement = th_ok
    report.truehash_epochs = len(elements)

    report.invalid_fruits = w.rules.invalid_fruits
    report.invalid_chains = w.rules.invalid_chains
    report.rejected_proposals = sum(sim.nodes[n].rejected_proposals for n in honest)
    report.blocks_mined = sim.blocks_mined
    report.fruits_mined = sim.fruits_mined
    report.messages_sent = sim.messages_sent
    report.messages_dropped = sim.messages_dropped
    report.corrupted = sorted(corrupted)
    report.warnings = list(w.plan.warnings)
    return report
