"""Reward and gas-pool arithmetic. Token amounts are integers; the average
gas cost and settlement transfers are exact fractions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence


class InvalidAlpha(ValueError):
    pass


def reward_split(n: int, alpha, total: int) -> tuple[int, int]:
    """(bft_share, pow_share) with bft_share = floor(total * n / (alpha + n)).

    The integer-division remainder goes to the PoW side.
    """
    alpha = Fraction(alpha)
    if alpha <= 1:
        raise InvalidAlpha(f"alpha must exceed 1, got {alpha}")
    if n < 0 or total < 0:
        raise ValueError("n and total must be non-negative")
    bft = math.floor(Fraction(total) * n / (alpha + n))
    return bft, total - bft


def _add(payouts: dict, who: str, amount: int) -> None:
    if amount:
        payouts[who] = payouts.get(who, 0) + amount


def distribute_block_reward(block, reward: int, beta=Fraction(1, 10), base: int = 0) -> dict:
    """Split one snail block's reward between its miner and its fruit miners.

    The block miner takes ``base`` plus a ``beta`` cut of what is left (the
    fruit pool); the rest of the pool goes to fruit miners in proportion to
    the number of fruits each contributed. Rounding leftovers go to the block
    miner, so the payouts always add up to ``reward``.
    """
    if not 0 <= base <= reward:
        raise ValueError("need 0 <= base <= reward")
    beta = Fraction(beta)
    miner = block.coinbase
    payouts: dict = {}
    fruits = block.fruits
    if not fruits:
        _add(payouts, miner, reward)
        return payouts
    pool = reward - base
    cut = math.floor(pool * beta)
    rest = pool - cut
    counts: dict = {}
    for f in fruits:
        counts[f.miner] = counts.get(f.miner, 0) + 1
    paid = 0
    for who in sorted(counts):
        share = rest * counts[who] // len(fruits)
        _add(payouts, who, share)
        paid += share
    _add(payouts, miner, base + cut + rest - paid)
    return payouts


@dataclass
class GasPool:
    committee_id: int
    contributions: dict = field(default_factory=dict)  # member -> tokens

    @property
    def mu(self) -> Fraction:
        if not self.contributions:
            raise ValueError("empty gas pool")
        return Fraction(sum(self.contributions.values()), len(self.contributions))

    @property
    def total(self) -> int:
        return sum(self.contributions.values())


@dataclass(frozen=True)
class Settlement:
    mu: Fraction
    transfers: tuple  # (payer, payee, amount)
    principal: dict   # member -> equal share of the pool


def settle_gas_pool(pool: GasPool) -> Settlement:
    """Members below the mean pay members above it, largest debt matched to
    largest credit first; the pool principal is then shared equally (leftover
    tokens to the first members in id order)."""
    mu = pool.mu
    debts = sorted(((mu - c, m) for m, c in pool.contributions.items() if c < mu), key=lambda x: (-x[0], x[1]))
    credits = sorted(((c - mu, m) for m, c in pool.contributions.items() if c > mu), key=lambda x: (-x[0], x[1]))
    debts = [list(x) for x in debts]
    credits = [list(x) for x in credits]
    transfers = []
    i = j = 0
    while i < len(debts) and j < len(credits):
        amount = min(debts[i][0], credits[j][0])
        transfers.append((debts[i][1], credits[j][1], amount))
        debts[i][0] -= amount
        credits[j][0] -= amount
        if debts[i][0] == 0:
            i += 1
        if credits[j][0] == 0:
            j += 1
    return Settlement(mu, tuple(transfers), equal_split(pool.total, sorted(pool.contributions)))


def net_positions(pool: GasPool, settlement: Settlement) -> dict:
    """Contribution after transfers, per member; equals mu for everyone."""
    net = {m: Fraction(c) for m, c in pool.contributions.items()}
    for payer, payee, amount in settlement.transfers:
        net[payer] += amount
        net[payee] -= amount
    return net


def committee_count(mu_history: Sequence, current: int, spawn_above, retire_below,
                    window: int = 8) -> int:
    """Active committee count after one rotation, from the windowed mean of
    settled gas costs: one more above ``spawn_above``, one fewer (never below
    one) under ``retire_below``."""
    recent = [Fraction(x) for x in mu_history[-window:]]
    if not recent:
        return current
    mean = sum(recent) / len(recent)
    if mean > Fraction(spawn_above):
        return current + 1
    if mean < Fraction(retire_below) and current > 1:
        return current - 1
    return current


def equal_split(total: int, members: Sequence[str]) -> dict:
    each, extra = divmod(total, len(members))
    return {m: each + (1 if k < extra else 0) for k, m in enumerate(members)}


def settle_run(sim, cfg) -> dict:
    """Pay out every snail block on the reference chain and settle each
    term's gas pool, then check that no token was created or lost."""
    ref = sim.reference()
    rw = cfg.rewards
    terms = ref.terms
    bounds = [(t.start_serial, t.end_serial if t.end_serial is not None else 10 ** 18, t) for t in terms]

    def term_for(serial: int):
        for lo, hi, t in bounds:
            if lo <= serial <= hi:
                return t
        return terms[0]

    payouts: dict = {}
    minted = paid = 0
    for block in ref.view.blocks[1:]:
        minted += rw.block_reward
        bft, pow_part = reward_split(rw.active_committees, rw.alpha, rw.block_reward)
        serial = block.fruits[-1].serial if block.fruits else 0
        for who, amount in equal_split(bft, term_for(max(serial, 1)).members).items():
            _add(payouts, who, amount)
            paid += amount
        for who, amount in distribute_block_reward(block, pow_part, cfg.beta, min(rw.base_reward, pow_part)).items():
            _add(payouts, who, amount)
            paid += amount

    fees_total = principal_total = 0
    balanced = True
    mus = []
    for term in terms:
        contributions = {m: 0 for m in term.members}
        for block in ref.chain[1:]:
            if term_for(block.serial) is term:
                fee = sum(tx.fee for tx in block.transactions)
                fees_total += fee
                if block.proposer in contributions:
                    contributions[block.proposer] += fee
        pool = GasPool(term.term_id, contributions)
        settlement = settle_gas_pool(pool)
        mus.append(str(settlement.mu))
        principal_total += sum(settlement.principal.values())
        if any(v != settlement.mu for v in net_positions(pool, settlement).values()):
            balanced = False
        for who, amount in settlement.principal.items():
            _add(payouts, who, amount)

    supply = cfg.workload.initial_balance * cfg.workload.clients
    balances = ref.state.total_balance()
    conserved = (paid == minted and principal_total == fees_total and balanced
                 and balances + fees_total == supply
                 and sum(payouts.values()) == minted + fees_total)
    return {
        "minted": minted,
        "paid": paid,
        "fees": fees_total,
        "fee_principal_paid": principal_total,
        "supply_initial": supply,
        "balances_final": balances,
        "gas_mu": mus,
        "conserved": conserved,
    }
