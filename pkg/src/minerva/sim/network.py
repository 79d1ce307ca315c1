"""Deterministic tick-driven simulation of miners, committee members and clients.

Every tick the clock advances by one, due messages are delivered in
(deliver_at, sequence) order, ``attempts_per_tick`` mining draws are handed to
miners in proportion to hash share, clients submit or resubmit payments, and
scheduled corruptions take effect. All randomness comes from generators
seeded by the scenario seed, so a (scenario, seed) pair replays exactly.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from typing import Optional

from ..bft import INNER, CommitteeTerm, Proposal, make_vote, sign
from ..channel import CommitteeChannel
from ..config import ScenarioConfig
from ..election import ElectionParams, genesis_election
from ..encoding import digest, set_hash
from ..fruitchain import Fruitchain, MiningParams, adopt_own_block, on_hear_fruit
from ..truehash import TruehashParams
from ..types import AccountState, Transaction, WorldState, genesis_fast_block
from .adversary import (
    LEAK_ADDRESSES,
    SILENT,
    WITHHOLD_BLOCKS,
    AdversaryPlan,
    BudgetExceeded,
    Coalition,
    DdosWindow,
    ddos,
)
from .events import EventQueue, DelayModel
from .node import ChainMsg, FruitMsg, Node, ProposalMsg, StartHeight, Timeout, TxMsg, VoteMsg, payload_digest
from .selfish import ADOPT, PUBLISH_ALL, PUBLISH_MATCH, LeadState, selfish_strategy

log = logging.getLogger(__name__)

TIMERS = (Timeout, StartHeight)


@dataclass
class Payment:
    sender: str
    nonce: int
    first_submit: int
    tx: Transaction
    attempts: int = 1
    confirmed_at: Optional[int] = None


@dataclass
class Client:
    id: str
    index: int
    next_nonce: int = 0
    outstanding: Optional[Payment] = None
    next_at: int = 0


class World:
    """Parameters and bookkeeping shared by every node of one run."""

    def __init__(self, cfg: ScenarioConfig):
        set_hash(cfg.run.hash)
        self.cfg = cfg
        s, c = cfg.snail, cfg.committee
        self.mining = MiningParams.from_intervals(
            s.block_interval, s.fruit_interval, s.attempts_per_tick, recency=s.recency,
            pointer_window=s.pointer_window, elect_every=c.elect_every, tiebreak=s.tiebreak,
            fruit_pointer_depth=s.fruit_pointer_depth)
        self.truehash = TruehashParams(group_degree=cfg.truehash.group_degree,
                                       epoch_length=cfg.truehash.epoch_length)
        self.certified: set = set()
        self.rules = Fruitchain(self.mining, self.truehash, certified=self.is_certified)
        opt_in = frozenset(cfg.network.opt_in) if cfg.network.opt_in else None
        self.election = ElectionParams(c.window, c.nu, c.csize, opt_in)
        self.node_ids = cfg.node_ids
        self.client_ids = [f"c{i:02d}" for i in range(cfg.workload.clients)]
        self.genesis_state = WorldState(
            {cid: AccountState(balance=cfg.workload.initial_balance) for cid in self.client_ids})
        self.genesis_fast = genesis_fast_block(self.genesis_state)
        self.genesis_record = genesis_election(self.node_ids, self.election)
        a = cfg.adversary
        self.plan = AdversaryPlan(a.strategy, a.corrupt, tuple(a.nodes), a.target, a.term, a.tau,
                                  cfg.budget, a.equivocate, a.ddos_duration, a.gamma)
        self.coalition = Coalition()
        self.adv_rng = random.Random(f"adversary/{cfg.run.seed}")
        self.max_skew = c.T_delta
        self.addresses = {n: f"10.0.{i // 250}.{i % 250 + 1}" for i, n in enumerate(self.node_ids)}
        self.by_address = {addr: n for n, addr in self.addresses.items()}
        self.commits: dict = {}       # serial -> digest -> [(node, tick)]
        self.terms: dict = {0: CommitteeTerm(0, self.genesis_record.members, 1)}
        self.term_members: dict = {}  # term id -> node -> members it computed
        self.finals: dict = {}        # term id -> FinalDailyLog (first seen)
        self.channels: dict = {}
        self.corrupted: dict = {}     # node -> tick the corruption took effect
        self.payments: dict = {}      # (sender, nonce) -> Payment
        self.clients: dict = {}
        self.sim = None

    def is_certified(self, message) -> bool:
        return (message.serial, message.digest) in self.certified

    def honest(self, node: str) -> bool:
        return node not in self.corrupted

    def chain_to(self, block_hash: bytes) -> list:
        blocks = []
        block = self.rules.blocks[block_hash]
        while True:
            blocks.append(block)
            if block.number == 0:
                break
            block = self.rules.blocks[block.parent_hash]
        blocks.reverse()
        return blocks

    # -- callbacks from nodes -----------------------------------------
    def on_commit(self, node: Node, block, cert, now: int) -> None:
        self.certified.add((block.serial, block.digest))
        self.commits.setdefault(block.serial, {}).setdefault(block.digest, []).append((node.id, now))
        self.sim.trace_event(now, node.id, "commit", block.digest)
        if node.strategy is not None:
            return
        for tx in block.transactions:
            pay = self.payments.get((tx.sender, tx.account_nonce))
            if pay is not None and pay.confirmed_at is None:
                pay.confirmed_at = now
                client = self.clients[tx.sender]
                client.outstanding = None
                client.next_nonce = pay.nonce + 1
                client.next_at = now + self.cfg.workload.think_time

    def on_term(self, node: Node, term: CommitteeTerm, final, now: int) -> None:
        self.term_members.setdefault(term.term_id, {})[node.id] = term.members
        if term.term_id not in self.terms:
            self.terms[term.term_id] = CommitteeTerm(term.term_id, term.members, term.start_serial,
                                                     term_start=now, election_block=term.election_block)
            self.finals[final.term_id] = final
            self.sim.trace_event(now, node.id, "term", term.election_block)
            self.sim.on_new_term(term, now)

    # -- coordinated equivocation ---------------------------------------
    def equivocate(self, leader: Node, serial: int, r: int, block, now: int) -> None:
        """Corrupted leader sends conflicting valid blocks to two halves of the
        honest members; every corrupted member votes for each block toward the
        half that saw it."""
        term = leader.term
        honest = [m for m in term.members if m not in self.corrupted]
        byz = [m for m in term.members if m in self.corrupted]
        half = (len(honest) + 1) // 2
        groups = (honest[:half], honest[half:])
        blocks = (block, replace(block, time=block.time + 1))
        self.coalition.splits[(serial, r)] = (blocks[0].digest, blocks[1].digest, tuple(groups[0]))
        for blk, group in zip(blocks, groups):
            prop = Proposal(leader.id, blk, r, -1)
            prop = replace(prop, signature=sign(leader.id, INNER, prop.payload()))
            for m in group:
                self.sim.send(leader.id, m, ProposalMsg(prop), now)
            for voter in byz:
                for phase in ("prevote", "precommit"):
                    vote = make_vote(voter, serial, r, blk.digest, phase)
                    for m in group:
                        self.sim.send(voter, m, VoteMsg(vote), now)
        for voter in byz:
            node = self.sim.nodes[voter]
            for blk in blocks:
                for phase in ("prevote", "precommit"):
                    node.handle(VoteMsg(make_vote(voter, serial, r, blk.digest, phase)), voter, now)
            prop = Proposal(leader.id, blocks[0], r, -1)
            node.handle(ProposalMsg(replace(prop, signature=sign(leader.id, INNER, prop.payload()))),
                        leader.id, now)


class Simulation:
    def __init__(self, cfg: ScenarioConfig, trace: bool = False):
        self.cfg = cfg
        self.world = World(cfg)
        self.world.sim = self
        seed = cfg.run.seed
        overrides = {}
        for link, ticks in cfg.network.link_delays.items():
            src, dst = link.split("->")
            overrides[(src.strip(), dst.strip())] = ticks
        self.delays = DelayModel(cfg.network.d_min, cfg.network.d_max, seed, overrides)
        self.queue = EventQueue()
        self.nodes = {n: Node(n, self.world) for n in self.world.node_ids}
        for node in self.nodes.values():
            node.net = self
        self.order = list(self.world.node_ids)
        self.shares = [float(x) for x in cfg.shares]
        self.mine_rng = random.Random(f"mining/{seed}")
        self.client_rng = random.Random(f"clients/{seed}")
        self.now = 0
        self.tracing = trace
        self.trace: list = []
        self.timeseries: list = []
        self.snail_checks: list = []
        self.pending_corruptions: list = []
        self.blocks_mined = 0
        self.fruits_mined = 0
        self.messages_sent = 0
        self.messages_dropped = 0
        self.lead = LeadState()
        self.withheld_published = 0
        for i, cid in enumerate(self.world.client_ids):
            client = Client(cid, i, next_at=1 + i % max(1, cfg.workload.think_time))
            self.world.clients[cid] = client
        for n in self.order:
            self.queue.push(cfg.committee.fast_interval, n, StartHeight(1), n)
        plan = self.world.plan
        if plan.active:
            if plan.target == "committee":
                if plan.term == 0:
                    self.on_new_term(self.world.terms[0], 0)
            else:
                chosen = plan.pick(self.order)
                share = sum(cfg.shares[self.order.index(n)] for n in chosen)
                if plan.target == "miners" and share > plan.budget:
                    raise BudgetExceeded(f"corrupted hash share {share} exceeds budget {plan.budget}")
                for c in plan.schedule(chosen, 0):
                    self.pending_corruptions.append(c)

    # -- transport ------------------------------------------------------
    def offline(self, node: str, now: int) -> bool:
        strategy = self.nodes[node].strategy if node in self.nodes else None
        return strategy in (SILENT, LEAK_ADDRESSES) or self.world.plan.silenced(node, now)

    def send(self, src: str, dst: str, payload, now: int) -> None:
        if self.offline(src, now):
            self.messages_dropped += 1
            return
        self.messages_sent += 1
        self.queue.push(now + self.delays.delay(src, dst), dst, payload, src)

    def broadcast(self, src: str, payload, now: int) -> None:
        for n in self.order:
            if n != src:
                self.send(src, n, payload, now)

    def timer(self, node: str, at: int, payload) -> None:
        self.queue.push(at, node, payload, node)

    def trace_event(self, now, node, kind, payload_hash: bytes) -> None:
        if self.tracing:
            self.trace.append({"tick": now, "node": node, "kind": kind, "digest": payload_hash.hex()})

    # -- adversary ------------------------------------------------------
    def on_new_term(self, term: CommitteeTerm, now: int) -> None:
        w = self.world
        salt = term.election_block + term.term_id.to_bytes(8, "big")
        w.channels[term.term_id] = CommitteeChannel.setup(
            term.members, {m: w.addresses[m] for m in term.members}, digest(b"gossip" + salt),
            self.cfg.committee.gsize, salt)
        plan = w.plan
        if plan.active and plan.target == "committee" and plan.term == term.term_id:
            chosen = plan.pick(list(term.members), term.csize)
            self.pending_corruptions.extend(plan.schedule(chosen, now))

    def _apply_corruptions(self) -> None:
        w = self.world
        due = [c for c in self.pending_corruptions if c.effect_at <= self.now]
        self.pending_corruptions = [c for c in self.pending_corruptions if c.effect_at > self.now]
        for c in due:
            node = self.nodes[c.node]
            node.strategy = c.strategy
            w.corrupted.setdefault(c.node, self.now)
            self.trace_event(self.now, c.node, "corrupt", digest(c.strategy.encode()))
            if c.strategy == WITHHOLD_BLOCKS:
                w.coalition.members.add(c.node)
                if w.coalition.private_view is None:
                    w.coalition.private_view = node.view
            if c.strategy == LEAK_ADDRESSES:
                chan = w.channels.get(w.plan.term) or w.channels.get(0)
                leaked = chan.leaked_by(c.node) if chan else set()
                own = w.addresses[c.node]
                known = {a for a in leaked if a != own}
                window = ddos(known, known, self.now, w.plan.ddos_duration)
                w.plan.ddos_windows.append(
                    DdosWindow(frozenset(w.by_address[a] for a in window.targets), window.start, window.end))
                w.plan.leaked[c.node] = sorted(w.by_address[a] for a in leaked)

    # -- mining -----------------------------------------------------------
    def _mine(self) -> None:
        for _ in range(self.cfg.snail.attempts_per_tick):
            miner = self.mine_rng.choices(self.order, weights=self.shares)[0]
            if self.offline(miner, self.now):
                continue
            node = self.nodes[miner]
            if node.strategy == WITHHOLD_BLOCKS:
                self._mine_withheld(node)
                continue
            result = node.mine(self.mine_rng, self.now)
            if result is None:
                continue
            if result.fruit is not None:
                self.fruits_mined += 1
                self.trace_event(self.now, miner, "fruit", result.fruit.hash)
            if result.block is not None:
                self.blocks_mined += 1
                self.trace_event(self.now, miner, "block", result.block.hash)
            node.publish_mined(result, self.now)

    def _mine_withheld(self, node: Node) -> None:
        w = self.world
        co = w.coalition
        result = node.mine(self.mine_rng, self.now, co.private_view)
        if result is None:
            return
        if result.fruit is not None:
            self.fruits_mined += 1
            co.private_view = on_hear_fruit(co.private_view.with_owner(node.id), result.fruit, w.rules)
            node.view = on_hear_fruit(node.view, result.fruit, w.rules)
            self.broadcast(node.id, FruitMsg(result.fruit), self.now)
        if result.block is not None:
            self.blocks_mined += 1
            self.trace_event(self.now, node.id, "block", result.block.hash)
            co.private_view = adopt_own_block(co.private_view.with_owner(node.id), result.block, w.rules)
            self._selfish_action(selfish_strategy(self.lead, "mine"), node)

    def _selfish_tick(self) -> None:
        """Feed public chain growth, as seen by one coalition member, to the policy."""
        co = self.world.coalition
        if not co.members or co.private_view is None:
            return
        listener = self.nodes[sorted(co.members)[0]]
        public = listener.view
        if co.lead_state is None:
            co.lead_state = public.height
        while public.height > co.lead_state:
            co.lead_state += 1
            self._selfish_action(selfish_strategy(self.lead, "honest"), listener)

    def _selfish_action(self, action: str, node: Node) -> None:
        co = self.world.coalition
        public = node.view
        if action == ADOPT:
            co.private_view = public
            self.lead = LeadState()
        elif action == PUBLISH_ALL:
            self._publish(node, co.private_view.blocks)
            if not self.lead.racing:
                self.lead = LeadState()
        elif action == PUBLISH_MATCH:
            self._publish(node, co.private_view.blocks[: public.height + 1])

    def _publish(self, node: Node, blocks) -> None:
        self.withheld_published += 1
        node.handle(ChainMsg(tuple(blocks)), node.id, self.now)
        self.broadcast(node.id, ChainMsg(tuple(blocks)), self.now)

    # -- clients ------------------------------------------------------------
    def _clients(self) -> None:
        w = self.world
        wl = self.cfg.workload
        ids = w.client_ids
        for cid in ids:
            client = w.clients[cid]
            pay = client.outstanding
            if pay is None:
                if self.now < client.next_at:
                    continue
                recipient = ids[(client.index + 1 + self.client_rng.randrange(max(1, len(ids) - 1))) % len(ids)]
                tx = Transaction(client.next_nonce, wl.gas_price, 1, recipient, wl.amount,
                                 physical_timestamp=self.now, sender=cid, sequence_number=0)
                pay = Payment(cid, client.next_nonce, self.now, tx)
                w.payments[(cid, pay.nonce)] = pay
                client.outstanding = pay
            elif self.now - pay.tx.physical_timestamp >= self.cfg.committee.T_delta:
                tx = pay.tx
                pay.tx = Transaction(tx.account_nonce, tx.gas_price, tx.gas_limit, tx.recipient,
                                     tx.payload, physical_timestamp=self.now, sender=cid,
                                     sequence_number=pay.attempts)
                pay.attempts += 1
            else:
                continue
            self.trace_event(self.now, cid, "submit", pay.tx.tx_id)
            for n in self.order:
                self.send(cid, n, TxMsg(pay.tx), self.now)

    # -- main loop --------------------------------------------------------------
    def step(self) -> int:
        """Advance one tick; returns the number of events delivered."""
        self.now += 1
        now = self.now
        self._apply_corruptions()
        delivered = 0
        while True:
            ev = self.queue.pop_due(now)
            if ev is None:
                break
            node = self.nodes.get(ev.destination)
            if node is None:
                continue
            if not isinstance(ev.payload, TIMERS):
                if self.offline(ev.destination, now):
                    self.messages_dropped += 1
                    continue
                self.trace_event(now, ev.destination, type(ev.payload).__name__, payload_digest(ev.payload))
            node.handle(ev.payload, ev.source, now)
            delivered += 1
        self._mine()
        self._selfish_tick()
        self._clients()
        if now % self.cfg.run.checkpoint_every == 0 or now == self.cfg.run.horizon:
            self.checkpoint()
        return delivered

    def run(self) -> "Simulation":
        while self.now < self.cfg.run.horizon:
            self.step()
        return self

    # -- checkpoints ------------------------------------------------------------
    def honest_nodes(self) -> list:
        return [n for n in self.order if self.world.honest(n)]

    def reference(self) -> Node:
        honest = self.honest_nodes()
        return self.nodes[honest[0] if honest else self.order[0]]

    def checkpoint(self) -> None:
        from .metrics import snail_consistency, fast_divergences
        lam = self.cfg.snail.recency
        chains = [self.nodes[n].view.blocks for n in self.honest_nodes()]
        ok, depth = snail_consistency(chains, lam)
        self.snail_checks.append({"tick": self.now, "ok": ok, "depth": depth})
        ref = self.reference()
        confirmed = sum(1 for p in self.world.payments.values() if p.confirmed_at is not None)
        self.timeseries.append({
            "tick": self.now,
            "snail_height": ref.view.height,
            "fast_height": max(self.nodes[n].tip.serial for n in self.honest_nodes() or self.order),
            "fruits": ref.view.total_fruits,
            "term": ref.term.term_id,
            "payments_confirmed": confirmed,
            "payments_pending": len(self.world.payments) - confirmed,
            "fork_depth": depth,
            "fast_divergences": fast_divergences(self.world.commits, self.world.honest),
        })
