"""One simulated participant: snailchain miner, fast-chain replica and,
while elected, committee member.

Committee agreement per serial is a two-phase locking protocol (prevote,
precommit) with round changes. A member prevotes a proposal only if it is
valid and compatible with its lock, precommits after seeing a quorum of
prevotes for one block (and locks on it), and commits on a quorum of
precommits. Quorum is more than two thirds of the committee. Committed
blocks, with their precommit certificate, are pushed to every other node so
replicas outside the committee follow along and are ready when elected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

from .. import truehash as th
from ..bft import (
    INNER,
    CommitteeTerm,
    InsufficientStopSignatures,
    InvalidProposal,
    Mempool,
    Proposal,
    StopSignal,
    TimestampHistory,
    Vote,
    build_fast_block,
    check_block,
    daily_stop,
    decode_stops,
    encode_stops,
    make_vote,
    select_transactions,
    sign,
    valid_vote,
    verify_signature,
)
from ..election import ElectionSeed, run_election
from ..encoding import ZERO_DIGEST, digest
from ..fruitchain import (
    InvalidChain,
    InvalidFruit,
    adopt_own_block,
    genesis_view,
    mine_step,
    on_hear_chain,
    on_hear_fruit,
)
from ..types import FastBlock, FastMessage, Transaction
from .adversary import BYZANTINE_VOTE, SILENT, WITHHOLD_BLOCKS

log = logging.getLogger(__name__)

PROPOSE, PREVOTE, PRECOMMIT = 0, 1, 2
SYNC_BATCH = 20
SYNC_COOLDOWN = 10


# -- messages ---------------------------------------------------------

@dataclass(frozen=True)
class TxMsg:
    tx: Transaction


@dataclass(frozen=True)
class FruitMsg:
    fruit: object


@dataclass(frozen=True)
class ChainMsg:
    blocks: tuple


@dataclass(frozen=True)
class ProposalMsg:
    proposal: Proposal


@dataclass(frozen=True)
class VoteMsg:
    vote: Vote


@dataclass(frozen=True)
class StopMsg:
    stop: StopSignal


@dataclass(frozen=True)
class DecidedMsg:
    block: FastBlock
    cert: tuple


@dataclass(frozen=True)
class SyncReq:
    from_serial: int


@dataclass(frozen=True)
class SyncResp:
    entries: tuple


@dataclass(frozen=True)
class Timeout:
    kind: str
    serial: int
    round: int


@dataclass(frozen=True)
class StartHeight:
    serial: int


def payload_digest(msg) -> bytes:
    """Short stable identifier of a message for the trace."""
    if isinstance(msg, TxMsg):
        return msg.tx.tx_id
    if isinstance(msg, FruitMsg):
        return msg.fruit.hash
    if isinstance(msg, ChainMsg):
        return msg.blocks[-1].hash
    if isinstance(msg, ProposalMsg):
        return msg.proposal.block.digest
    if isinstance(msg, VoteMsg):
        return digest(msg.vote.voter.encode() + msg.vote.payload())
    if isinstance(msg, DecidedMsg):
        return msg.block.digest
    return digest(repr(msg).encode())


@dataclass
class Height:
    """Agreement state for one serial."""

    serial: int
    round: int = 0
    step: int = PROPOSE
    started: bool = False
    locked: Optional[FastBlock] = None
    locked_round: int = -1
    valid: Optional[FastBlock] = None
    valid_round: int = -1
    polka_seen: set = field(default_factory=set)
    timers: set = field(default_factory=set)
    verdicts: dict = field(default_factory=dict)


class Node:
    def __init__(self, node_id: str, world):
        self.id = node_id
        self.world = world
        self.net = None
        cfg = world.cfg
        self.view = genesis_view(node_id)
        self.chain: list[FastBlock] = [world.genesis_fast]
        self.certs: list[tuple] = [()]
        self.state = world.genesis_state
        self.hist = TimestampHistory(cfg.committee.T_delta)
        self.pool = Mempool()
        self.fast_msgs: dict[int, FastMessage] = {}
        record = world.genesis_record
        self.records = [record]
        self.seed = ElectionSeed(record.seed)
        self.terms = [CommitteeTerm(0, record.members, start_serial=1, term_start=0)]
        self.term_stops: list[StopSignal] = []
        self.stop_pool: dict[str, StopSignal] = {}
        self.stop_sent: set = set()
        self.future: dict[int, tuple] = {}
        self.proposals: dict = {}
        self.votes: dict = {}
        self.senders: dict = {}
        self.height = Height(1)
        self.last_sync = -SYNC_COOLDOWN
        self.rotations: dict[bytes, tuple] = {}
        self.strategy: Optional[str] = None
        self.rejected_proposals = 0

    # -- helpers ------------------------------------------------------
    @property
    def term(self) -> CommitteeTerm:
        return self.terms[-1]

    @property
    def tip(self) -> FastBlock:
        return self.chain[-1]

    @property
    def byzantine(self) -> bool:
        return self.strategy in (BYZANTINE_VOTE,)

    def votes_honestly(self, serial: int, r: int) -> bool:
        if self.strategy in (None, WITHHOLD_BLOCKS):
            return True
        return self.byzantine and self.world.plan.equivocate and (serial, r) not in self.world.coalition.splits

    @property
    def is_member(self) -> bool:
        return self.id in self.term.members

    def _send_members(self, payload, now, include_self=True):
        for m in self.term.members:
            if m == self.id:
                if include_self:
                    self.handle(payload, self.id, now)
            else:
                self.net.send(self.id, m, payload, now)

    def _timeout_len(self, r: int) -> int:
        return self.world.cfg.committee.round_timeout + 2 * r

    # -- dispatch -----------------------------------------------------
    def handle(self, msg, source: str, now: int) -> None:
        if isinstance(msg, TxMsg):
            self._on_tx(msg.tx)
        elif isinstance(msg, FruitMsg):
            try:
                self.view = on_hear_fruit(self.view, msg.fruit, self.world.rules)
            except InvalidFruit:
                pass
        elif isinstance(msg, ChainMsg):
            self._on_chain(msg.blocks, now)
        elif isinstance(msg, ProposalMsg):
            self._on_proposal(msg.proposal, source, now)
        elif isinstance(msg, VoteMsg):
            self._on_vote(msg.vote, source, now)
        elif isinstance(msg, StopMsg):
            self._on_stop(msg.stop)
        elif isinstance(msg, DecidedMsg):
            self._on_decided(msg.block, msg.cert, source, now)
        elif isinstance(msg, SyncReq):
            self._on_sync_req(msg.from_serial, source, now)
        elif isinstance(msg, SyncResp):
            for block, cert in msg.entries:
                self._on_decided(block, cert, source, now)
        elif isinstance(msg, Timeout):
            self._on_timeout(msg, now)
        elif isinstance(msg, StartHeight):
            if msg.serial == self.height.serial and not self.height.started:
                self._start_round(0, now)
        else:
            raise TypeError(f"unknown message {msg!r}")

    # -- snailchain ---------------------------------------------------
    def mine(self, rng, now: int, view=None):
        """One mining draw on ``view`` (own public view by default)."""
        view = view or self.view
        if view.owner != self.id:
            view = view.with_owner(self.id)
        last = view.last_serial
        msgs = {s: self.fast_msgs[s] for s in range(last + 1, self.tip.serial + 1)}
        params = self.world.rules.params_at(view.tip.hash)
        return mine_step(view, msgs, self.world.mining, params, rng, now)

    def publish_mined(self, result, now: int) -> None:
        if result.fruit is not None:
            self.view = on_hear_fruit(self.view, result.fruit, self.world.rules)
            self.net.broadcast(self.id, FruitMsg(result.fruit), now)
        if result.block is not None:
            self.view = adopt_own_block(self.view, result.block, self.world.rules)
            self.net.broadcast(self.id, ChainMsg(self.view.blocks), now)
            self._after_snail(now)

    def _on_chain(self, blocks, now):
        before = self.view.tip.hash
        try:
            self.view = on_hear_chain(self.view, blocks, self.world.rules)
        except InvalidChain:
            return
        if self.view.tip.hash != before:
            self._after_snail(now)

    def _after_snail(self, now):
        self._record_rotations()
        self._maybe_stop(now)

    def _record_rotations(self):
        """Recompute the truehash rotation at every epoch boundary of the
        own chain, independently of the shared validation cache."""
        E = self.world.truehash.epoch_length
        blocks = self.view.blocks
        for height in range(E, len(blocks), E):
            boundary = blocks[height]
            if boundary.hash in self.rotations:
                continue
            history = [b.hash for b in blocks[height - E + 1:height + 1]]
            params = th.rotate_element(history, self.world.truehash, height)
            self.rotations[boundary.hash] = params.current_element

    def _election_number(self, term: CommitteeTerm) -> int:
        if term.election_block == ZERO_DIGEST:
            return 0
        return self.world.rules.blocks[term.election_block].number

    def _maybe_stop(self, now):
        term = self.term
        if not self.is_member or self.strategy not in (None, WITHHOLD_BLOCKS) or term.term_id in self.stop_sent:
            return
        floor = self._election_number(term)
        depth = self.world.mining.recency
        for b in self.view.blocks[floor + 1: max(0, self.view.height - depth + 1)]:
            if b.to_elect:
                self.stop_sent.add(term.term_id)
                stop = StopSignal.create(self.id, term.term_id, b.hash)
                self._send_members(StopMsg(stop), now)
                return

    def _on_stop(self, stop: StopSignal):
        if stop.term_id == self.term.term_id and stop.member in self.term.members and stop.valid():
            self.stop_pool.setdefault(stop.member, stop)

    # -- transactions -------------------------------------------------
    def _on_tx(self, tx: Transaction):
        acct = self.state.get(tx.sender)
        if acct is not None and tx.account_nonce < acct.nonce:
            return
        self.pool.propose(tx)

    def _prune_pool(self, now):
        window = self.hist.window
        for tx_id, tx in list(self.pool.pending.items()):
            acct = self.state.get(tx.sender)
            if (acct is not None and tx.account_nonce < acct.nonce) or now - tx.physical_timestamp > window:
                self.pool.drop(tx_id)

    # -- agreement ----------------------------------------------------
    def _start_round(self, r: int, now: int):
        h = self.height
        h.round, h.step, h.started = r, PROPOSE, True
        if not self.is_member:
            return
        if self.term.leader(h.serial, r) == self.id and self.strategy != SILENT:
            self._propose(now)
        self.net.timer(self.id, now + self._timeout_len(r), Timeout("propose", h.serial, r))
        self.net.timer(self.id, now + self._timeout_len(r), Timeout("resend", h.serial, r))
        if self.byzantine and not self.world.plan.equivocate:
            self._random_votes(h.serial, r, now)
        self._progress(now)

    def _unincluded_stops(self) -> list:
        used = {s.member for s in self.term_stops}
        return [self.stop_pool[m] for m in sorted(self.stop_pool) if m not in used]

    def _new_block(self, now: int) -> FastBlock:
        cfg = self.world.cfg.committee
        self._prune_pool(now)
        when = max(now, self.tip.time)
        txs = select_transactions(self.pool, self.state, when, self.hist, cfg.max_txs)
        block, _ = build_fast_block(txs, self.tip, self.state, self.id, when,
                                    encode_stops(self._unincluded_stops()))
        return block

    def _signed(self, block: FastBlock, r: int, vr: int) -> Proposal:
        prop = Proposal(self.id, block, r, vr)
        return replace(prop, signature=sign(self.id, INNER, prop.payload()))

    def _propose(self, now):
        h = self.height
        if self.byzantine and self.world.plan.equivocate:
            self.world.equivocate(self, h.serial, h.round, self._new_block(now), now)
            return
        if self.byzantine:
            bad = replace(self._new_block(now), state_root=digest(b"forged" + self.id.encode()))
            self._send_members(ProposalMsg(self._signed(bad, h.round, -1)), now)
            return
        if h.valid is not None:
            prop = self._signed(h.valid, h.round, h.valid_round)
        else:
            prop = self._signed(self._new_block(now), h.round, -1)
        self._send_members(ProposalMsg(prop), now)

    def _random_votes(self, serial, r, now):
        rng = self.world.adv_rng
        for phase in ("prevote", "precommit"):
            choice = rng.random()
            target = ZERO_DIGEST if choice < 0.5 else digest(b"junk" + bytes([rng.randrange(256)]))
            self._send_members(VoteMsg(make_vote(self.id, serial, r, target, phase)), now)

    def _on_proposal(self, prop: Proposal, source, now):
        if prop.signature is None or prop.signature.signer != prop.leader \
                or not verify_signature(prop.signature, prop.payload(), INNER):
            return
        s = prop.serial
        if s < self.height.serial:
            return
        key = (s, prop.round)
        self.proposals.setdefault(key, prop)
        self.senders.setdefault(key, set()).add(prop.leader)
        if s > self.height.serial:
            if s > self.height.serial + 1:
                self._want_sync(source, now)
            return
        self._progress(now)

    def _on_vote(self, vote: Vote, source, now):
        if vote.signature is None or vote.signature.signer != vote.voter \
                or not verify_signature(vote.signature, vote.payload(), INNER):
            return
        if vote.serial < self.height.serial:
            return
        bucket = self.votes.setdefault((vote.phase, vote.serial, vote.round), {})
        bucket.setdefault(vote.voter, vote)
        self.senders.setdefault((vote.serial, vote.round), set()).add(vote.voter)
        if vote.serial > self.height.serial:
            if vote.serial > self.height.serial + 1:
                self._want_sync(source, now)
            return
        self._progress(now)

    def _count(self, phase, serial, r) -> dict:
        """digest -> distinct member voters, for one (phase, serial, round)."""
        members = set(self.term.members)
        out: dict = {}
        for voter, vote in self.votes.get((phase, serial, r), {}).items():
            if voter in members:
                out.setdefault(vote.digest, []).append(vote)
        return out

    def _valid(self, block: FastBlock) -> bool:
        h = self.height
        cached = h.verdicts.get(block.digest)
        if cached is not None:
            return cached
        ok = block.serial == h.serial and block.proposer in self.term.members
        if ok:
            try:
                check_block(block, self.tip, self.state, self.hist)
            except InvalidProposal:
                ok = False
        if ok:
            for stop in decode_stops(block.extra):
                known = self.world.rules.blocks.get(stop.election_block)
                if (stop.term_id != self.term.term_id or stop.member not in self.term.members
                        or not stop.valid() or known is None or not known.to_elect):
                    ok = False
                    break
        if not ok:
            self.rejected_proposals += 1
        h.verdicts[block.digest] = ok
        return ok

    def _proposal(self, r) -> Optional[Proposal]:
        prop = self.proposals.get((self.height.serial, r))
        if prop is not None and prop.leader == self.term.leader(self.height.serial, r):
            return prop
        return None

    def _vote(self, phase, block_digest, now):
        h = self.height
        self._send_members(VoteMsg(make_vote(self.id, h.serial, h.round, block_digest, phase)), now)

    def _progress(self, now):
        changed = True
        while changed:
            changed = self._progress_once(now)

    def _progress_once(self, now) -> bool:
        h = self.height
        if not h.started or not self.is_member:
            return self._try_decide(now)
        if self._try_decide(now):
            return True
        q = self.term.quorum
        s, r = h.serial, h.round
        # round skip on a later round with f+1 participants
        skip = self.term.csize - q + 1
        for (ss, rr), who in sorted(self.senders.items()):
            if ss == s and rr > r and len(who & set(self.term.members)) >= skip:
                self._start_round(rr, now)
                return True
        if not self.votes_honestly(s, r):
            return False
        prop = self._proposal(r)
        if h.step == PROPOSE and prop is not None:
            block, vr = prop.block, prop.valid_round
            choice = None
            if vr == -1:
                fresh = abs(block.time - now) <= self.world.max_skew
                ok = fresh and self._valid(block) and (h.locked is None or h.locked.digest == block.digest)
                choice = block.digest if ok else ZERO_DIGEST
            elif 0 <= vr < r:
                polka = self._count("prevote", s, vr).get(block.digest, [])
                if len(polka) >= q:
                    ok = self._valid(block) and (h.locked_round <= vr or
                                                 (h.locked is not None and h.locked.digest == block.digest))
                    choice = block.digest if ok else ZERO_DIGEST
            else:
                choice = ZERO_DIGEST
            if choice is not None:
                h.step = PREVOTE
                self._vote("prevote", choice, now)
                return True
        if h.step >= PREVOTE:
            prevotes = self._count("prevote", s, r)
            total = sum(len(v) for v in prevotes.values())
            if total >= q and ("prevote", r) not in h.timers:
                h.timers.add(("prevote", r))
                self.net.timer(self.id, now + self._timeout_len(r), Timeout("prevote", s, r))
            if prop is not None and r not in h.polka_seen and \
                    len(prevotes.get(prop.block.digest, [])) >= q and self._valid(prop.block):
                h.polka_seen.add(r)
                h.valid, h.valid_round = prop.block, r
                if h.step == PREVOTE:
                    h.locked, h.locked_round = prop.block, r
                    h.step = PRECOMMIT
                    self._vote("precommit", prop.block.digest, now)
                return True
            if h.step == PREVOTE and len(prevotes.get(ZERO_DIGEST, [])) >= q:
                h.step = PRECOMMIT
                self._vote("precommit", ZERO_DIGEST, now)
                return True
        precommits = self._count("precommit", s, r)
        if sum(len(v) for v in precommits.values()) >= q and ("precommit", r) not in h.timers:
            h.timers.add(("precommit", r))
            self.net.timer(self.id, now + self._timeout_len(r), Timeout("precommit", s, r))
        return False

    def _try_decide(self, now) -> bool:
        h = self.height
        q = self.term.quorum
        rounds = sorted({key[2] for key in self.votes if key[0] == "precommit" and key[1] == h.serial})
        for r in rounds:
            for d, votes in sorted(self._count("precommit", h.serial, r).items()):
                if d == ZERO_DIGEST or len(votes) < q:
                    continue
                block = self._known_block(d)
                if block is None:
                    return False
                if self._valid(block):
                    self._commit(block, tuple(sorted(votes, key=lambda v: v.voter))[:q], now)
                    return True
        return False

    def _known_block(self, d: bytes) -> Optional[FastBlock]:
        for (s, _), prop in sorted(self.proposals.items(), key=lambda kv: kv[0]):
            if s == self.height.serial and prop.block.digest == d:
                return prop.block
        return None

    def _on_timeout(self, t: Timeout, now):
        h = self.height
        if t.serial != h.serial or t.round != h.round or not self.is_member:
            return
        if t.kind == "resend":
            self._resend(now)
            return
        if not self.votes_honestly(t.serial, t.round):
            if t.kind == "precommit":
                self._start_round(h.round + 1, now)
            return
        if t.kind == "propose" and h.step == PROPOSE:
            h.step = PREVOTE
            self._vote("prevote", ZERO_DIGEST, now)
        elif t.kind == "prevote" and h.step == PREVOTE:
            h.step = PRECOMMIT
            self._vote("precommit", ZERO_DIGEST, now)
        elif t.kind == "precommit":
            self._start_round(h.round + 1, now)
            return
        self._progress(now)

    def _resend(self, now):
        """Re-gossip this member's proposal and votes for the current round,
        so members that were cut off can catch up once they are reachable."""
        h = self.height
        if self.votes_honestly(h.serial, h.round):
            prop = self.proposals.get((h.serial, h.round))
            if prop is not None and prop.leader == self.id:
                self._send_members(ProposalMsg(prop), now, include_self=False)
            for phase in ("prevote", "precommit"):
                vote = self.votes.get((phase, h.serial, h.round), {}).get(self.id)
                if vote is not None:
                    self._send_members(VoteMsg(vote), now, include_self=False)
        self.net.timer(self.id, now + self._timeout_len(h.round), Timeout("resend", h.serial, h.round))

    # -- commit, decided and sync -------------------------------------
    def _cert_ok(self, block: FastBlock, cert) -> bool:
        members = set(self.term.members)
        voters = set()
        for v in cert:
            if (v.phase == "precommit" and v.serial == block.serial and v.digest == block.digest
                    and valid_vote(v, members)):
                voters.add(v.voter)
        return len(voters) >= self.term.quorum

    def _on_decided(self, block: FastBlock, cert, source, now):
        s = block.serial
        if s <= self.tip.serial:
            return
        if s > self.height.serial:
            self.future.setdefault(s, (block, cert))
            if s > self.height.serial + 1:
                self._want_sync(source, now)
            return
        if self._cert_ok(block, cert) and self._valid(block):
            self._commit(block, tuple(cert), now)

    def _want_sync(self, source, now):
        if source == self.id or now - self.last_sync < SYNC_COOLDOWN:
            return
        self.last_sync = now
        self.net.send(self.id, source, SyncReq(self.tip.serial + 1), now)

    def _on_sync_req(self, from_serial, source, now):
        entries = tuple((self.chain[s], self.certs[s])
                        for s in range(from_serial, min(len(self.chain), from_serial + SYNC_BATCH)))
        if entries:
            self.net.send(self.id, source, SyncResp(entries), now)

    def _commit(self, block: FastBlock, cert: tuple, now: int):
        state = check_block(block, self.tip, self.state, self.hist)
        term = self.term
        for tx in block.transactions:
            self.hist.record(tx)
        self.chain.append(block)
        self.certs.append(cert)
        self.state = state
        self.pool.confirm(block)
        self.fast_msgs[block.serial] = FastMessage(block.digest, block.serial)
        term.daily_log.append(block)
        self.term_stops.extend(decode_stops(block.extra))
        self.world.on_commit(self, block, cert, now)
        if self.strategy in (None, WITHHOLD_BLOCKS) and self.id in term.members and term.label(self.id) <= term.f:
            self.net.broadcast(self.id, DecidedMsg(block, cert), now)
        self._maybe_rotate(block, now)
        s = block.serial
        for key in [k for k in self.proposals if k[0] <= s]:
            del self.proposals[key]
        for key in [k for k in self.votes if k[1] <= s]:
            del self.votes[key]
        for key in [k for k in self.senders if k[0] <= s]:
            del self.senders[key]
        self.height = Height(s + 1)
        self._prune_pool(now)
        if self.is_member:
            self.net.timer(self.id, now + self.world.cfg.committee.fast_interval, StartHeight(s + 1))
        pending = self.future.pop(s + 1, None)
        for key in [k for k in self.future if k <= s + 1]:
            del self.future[key]
        if pending is not None:
            self._on_decided(pending[0], pending[1], self.id, now)

    def _maybe_rotate(self, block: FastBlock, now: int):
        term = self.term
        try:
            final = daily_stop(term, self.term_stops)
        except InsufficientStopSignatures:
            return
        term.term_end, term.end_serial = now, block.serial
        term.signed_log_hashes = list(final.signatures)
        blocks = self.world.chain_to(final.election_block)
        record, seed = run_election(term.term_id + 1, blocks, self.seed, self.world.election,
                                    incumbent=term.members)
        self.seed = seed
        self.records.append(record)
        new = CommitteeTerm(term.term_id + 1, record.members, start_serial=block.serial + 1,
                            term_start=now, election_block=final.election_block)
        self.terms.append(new)
        self.term_stops = []
        self.stop_pool = {}
        self.world.on_term(self, new, final, now)
        self._maybe_stop(now)
