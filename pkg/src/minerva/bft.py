"""Fastchain committee operations: timestamp guard, mempool, proposals, votes,
tally, fast-block emission and the stop rule that closes a committee term.

Signatures are simulated: a tag is a digest over (namespace, signer,
payload), and nodes only ever sign with their own id. Term messages are
namespaced, ``"0"`` for the inner BFT instance and ``"1"`` for the outer
daily protocol (stops and final log hashes).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .encoding import ZERO_DIGEST, digest, encode_fields, from_jsonable, to_jsonable
from .types import (
    FastBlock,
    FastMessage,
    Transaction,
    TxError,
    WorldState,
    apply_transaction,
    transactions_root,
)

INNER = "0"
OUTER = "1"
DEFAULT_T_DELTA = 30


class EmptyPool(Exception):
    pass


class DuplicateVoter(Exception):
    pass


class InsufficientStopSignatures(Exception):
    pass


class InvalidProposal(Exception):
    pass


# -- simulated signatures ------------------------------------------------

@dataclass(frozen=True)
class Signature:
    signer: str
    namespace: str
    tag: bytes


def _sig_tag(signer: str, namespace: str, payload: bytes) -> bytes:
    return digest(b"sig" + encode_fields((("ns", "str"), ("signer", "str"), ("payload", "bytes")),
                                         (namespace, signer, payload)))


def sign(signer: str, namespace: str, payload: bytes) -> Signature:
    if namespace not in (INNER, OUTER):
        raise ValueError(f"unknown namespace {namespace!r}")
    return Signature(signer, namespace, _sig_tag(signer, namespace, payload))


def verify_signature(sig: Signature, payload: bytes, namespace: Optional[str] = None) -> bool:
    if namespace is not None and sig.namespace != namespace:
        return False
    return sig.tag == _sig_tag(sig.signer, sig.namespace, payload)


# -- quorum arithmetic ---------------------------------------------------

def max_faulty(csize: int) -> int:
    return (csize - 1) // 3


def commit_quorum(csize: int) -> int:
    """Smallest yes-count that is strictly more than two thirds of csize."""
    return (2 * csize) // 3 + 1


def stop_threshold(csize: int) -> int:
    return -(-csize // 3)


# -- timestamp guard -----------------------------------------------------

@dataclass
class TimestampHistory:
    """Last accepted physical timestamp per sender.

    Only the tail of each sender's list matters to the ordering check, so
    nothing else is kept.
    """

    window: int = DEFAULT_T_DELTA
    last_T_p: dict = field(default_factory=dict)

    def copy(self) -> "TimestampHistory":
        return TimestampHistory(self.window, dict(self.last_T_p))

    def record(self, tx: Transaction) -> None:
        prev = self.last_T_p.get(tx.sender)
        if prev is None or tx.physical_timestamp > prev:
            self.last_T_p[tx.sender] = tx.physical_timestamp


def check_timestamp(tx: Transaction, now: int, hist: TimestampHistory) -> bool:
    if abs(now - tx.physical_timestamp) > hist.window:
        return False
    prev = hist.last_T_p.get(tx.sender)
    return prev is None or prev <= tx.physical_timestamp


def verify_timestamp(tx: Transaction, now: int, hist: TimestampHistory) -> bool:
    """Reject large clock skew or a sender going back in time; record on accept."""
    ok = check_timestamp(tx, now, hist)
    if ok:
        hist.record(tx)
    return ok


# -- mempool -------------------------------------------------------------

@dataclass
class Mempool:
    pending: dict = field(default_factory=dict)
    confirmed: set = field(default_factory=set)

    def propose(self, tx: Transaction) -> None:
        if tx.tx_id not in self.confirmed:
            self.pending[tx.tx_id] = tx

    def confirm(self, block: FastBlock) -> None:
        for tx in block.transactions:
            self.confirmed.add(tx.tx_id)
            self.pending.pop(tx.tx_id, None)

    def query(self) -> frozenset:
        return frozenset(self.confirmed)

    def drop(self, tx_id: bytes) -> None:
        self.pending.pop(tx_id, None)


@dataclass(frozen=True)
class Propose:
    tx: Transaction


@dataclass(frozen=True)
class Confirm:
    block: FastBlock


@dataclass(frozen=True)
class Query:
    pass


def mempool_update(pool: Mempool, event):
    """Apply one mempool event; Query returns the confirmed id set instead."""
    if isinstance(event, Propose):
        pool.propose(event.tx)
    elif isinstance(event, Confirm):
        pool.confirm(event.block)
    elif isinstance(event, Query):
        return pool.query()
    else:
        raise TypeError(f"unknown mempool event {event!r}")
    return pool


# -- proposals and votes -------------------------------------------------

def tx_order_key(tx: Transaction):
    return (tx.physical_timestamp, tx.sequence_number, tx.tx_id)


def is_sorted_by_timestamp(txs: Sequence[Transaction]) -> bool:
    keys = [(tx.physical_timestamp, tx.sequence_number) for tx in txs]
    return all(a <= b for a, b in zip(keys, keys[1:]))


def build_fast_block(txs: Sequence[Transaction], parent: FastBlock, state: WorldState,
                     proposer: str, now: int, extra: bytes = b"",
                     snail: Optional[tuple] = None) -> tuple[FastBlock, WorldState]:
    """Apply ``txs`` on ``state`` and wrap them as the successor of ``parent``."""
    for tx in txs:
        state = apply_transaction(state, tx)
    snail_hash, snail_number = snail or (ZERO_DIGEST, 0)
    block = FastBlock(
        parent_hash=parent.digest,
        state_root=state.root,
        transactions_root=transactions_root(txs),
        receipt_hash=ZERO_DIGEST,
        proposer=proposer,
        bloom=b"",
        snail_hash=snail_hash,
        snail_number=snail_number,
        number=parent.number + 1,
        gas_limit=sum(tx.gas_limit for tx in txs),
        gas_used=sum(tx.gas_used for tx in txs),
        time=now,
        extra=extra,
        transactions=tuple(txs),
        serial=parent.serial + 1,
    )
    return block, state


@dataclass(frozen=True)
class Proposal:
    leader: str
    block: FastBlock
    round: int = 0
    valid_round: int = -1
    signature: Optional[Signature] = None

    @property
    def serial(self) -> int:
        return self.block.serial

    def payload(self) -> bytes:
        return encode_fields((("block", "digest"), ("round", "i64"), ("vr", "i64")),
                             (self.block.digest, self.round, self.valid_round))


def select_transactions(pool: Mempool, state: WorldState, now: int, hist: TimestampHistory,
                        max_txs: Optional[int] = None, margin: int = 0) -> list[Transaction]:
    """Largest prefix-greedy subset that passes the guard and applies in order.

    ``margin`` narrows the skew window so that transactions near its edge are
    left for later instead of being rejected by slower validators.
    """
    hist = hist.copy()
    narrowed = TimestampHistory(max(0, hist.window - margin), hist.last_T_p)
    chosen = []
    for tx in sorted(pool.pending.values(), key=tx_order_key):
        if max_txs is not None and len(chosen) >= max_txs:
            break
        if not check_timestamp(tx, now, narrowed):
            continue
        try:
            next_state = apply_transaction(state, tx)
        except TxError:
            continue
        narrowed.record(tx)
        state = next_state
        chosen.append(tx)
    return chosen


def leader_propose(pool: Mempool, state: WorldState, now: int, hist: TimestampHistory, *,
                   leader: str, parent: FastBlock, round: int = 0, extra: bytes = b"",
                   max_txs: Optional[int] = None, margin: int = 0,
                   snail: Optional[tuple] = None) -> Proposal:
    """Sorted, guard-checked proposal signed by the leader. An empty pool
    still yields a valid (empty) block."""
    txs = select_transactions(pool, state, now, hist, max_txs, margin)
    block, _ = build_fast_block(txs, parent, state, leader, now, extra, snail)
    prop = Proposal(leader, block, round)
    return replace(prop, signature=sign(leader, INNER, prop.payload()))


def check_block(block: FastBlock, parent: FastBlock, state: WorldState,
                hist: TimestampHistory) -> WorldState:
    """Full validity of a proposed fast block; returns the post-state.

    The guard is evaluated against the block's own time so the verdict does
    not depend on when a member looks at it.
    """
    if block.parent_hash != parent.digest or block.serial != parent.serial + 1:
        raise InvalidProposal("does not extend the committed parent")
    if block.number != block.serial:
        raise InvalidProposal("number differs from serial")
    if block.time < parent.time:
        raise InvalidProposal("time goes backwards")
    if block.transactions_root != transactions_root(block.transactions):
        raise InvalidProposal("transactions_root mismatch")
    if not is_sorted_by_timestamp(block.transactions):
        raise InvalidProposal("transactions not sorted by physical timestamp")
    hist = hist.copy()
    for tx in block.transactions:
        if not verify_timestamp(tx, block.time, hist):
            raise InvalidProposal("timestamp guard rejects a transaction")
        try:
            state = apply_transaction(state, tx)
        except TxError as exc:
            raise InvalidProposal(f"illegal transaction: {exc}") from None
    if state.root != block.state_root:
        raise InvalidProposal("state_root mismatch")
    if block.gas_used != sum(tx.gas_used for tx in block.transactions):
        raise InvalidProposal("gas_used mismatch")
    return state


@dataclass(frozen=True)
class Vote:
    voter: str
    serial: int
    round: int
    digest: bytes
    phase: str = "precommit"
    signature: Optional[Signature] = None

    @property
    def yes(self) -> bool:
        return self.digest != ZERO_DIGEST

    def payload(self) -> bytes:
        return encode_fields((("phase", "str"), ("serial", "u64"), ("round", "u64"), ("d", "digest")),
                             (self.phase, self.serial, self.round, self.digest))


def make_vote(voter: str, serial: int, round: int, block_digest: bytes, phase: str) -> Vote:
    vote = Vote(voter, serial, round, block_digest, phase)
    return replace(vote, signature=sign(voter, INNER, vote.payload()))


def valid_vote(vote: Vote, members) -> bool:
    return (vote.voter in members and vote.signature is not None
            and vote.signature.signer == vote.voter
            and verify_signature(vote.signature, vote.payload(), INNER))


def validate_and_vote(member: str, prop: Proposal, state: WorldState, now: int,
                      hist: TimestampHistory, *, parent: FastBlock, max_skew: Optional[int] = None,
                      phase: str = "precommit") -> Vote:
    """Yes (a vote for the block digest) iff the proposal is well signed and
    every transaction is legal, guard-approved and correctly ordered."""
    ok = prop.signature is not None and prop.signature.signer == prop.leader \
        and verify_signature(prop.signature, prop.payload(), INNER) \
        and prop.block.proposer == prop.leader
    if ok and max_skew is not None and abs(prop.block.time - now) > max_skew:
        ok = False
    if ok:
        try:
            check_block(prop.block, parent, state, hist)
        except InvalidProposal:
            ok = False
    return make_vote(member, prop.serial, prop.round, prop.block.digest if ok else ZERO_DIGEST, phase)


class Decision(enum.Enum):
    COMMITTED = "Committed"
    PENDING = "Pending"
    FAILED = "Failed"


def tally(votes: Iterable[Vote], committee, target: Optional[bytes] = None) -> Decision:
    """Committed iff yes-votes come from more than floor(2*csize/3) distinct
    members; Failed once the no-votes make that impossible.

    ``committee`` is a CommitteeTerm or a member sequence. A vote counts as yes
    when it names ``target`` (or any block, if no target is given). Later
    votes from a member who already voted, and votes from outsiders, are
    ignored.
    """
    members = committee.members if isinstance(committee, CommitteeTerm) else tuple(committee)
    member_set = set(members)
    csize = len(members)
    seen = set()
    yes = no = 0
    for vote in votes:
        if vote.voter not in member_set or vote.voter in seen:
            continue
        seen.add(vote.voter)
        is_yes = vote.yes if target is None else vote.digest == target
        if is_yes:
            yes += 1
        else:
            no += 1
    bound = (2 * csize) // 3
    if yes > bound:
        return Decision.COMMITTED
    if csize - no <= bound:
        return Decision.FAILED
    return Decision.PENDING


def emit_fast_block(txs: Sequence[Transaction], parent: FastBlock, state: WorldState, *,
                    proposer: str = "committee", now: int = 0,
                    extra: bytes = b"") -> tuple[FastBlock, FastMessage]:
    block, _ = build_fast_block(txs, parent, state, proposer, now, extra)
    return block, FastMessage(block.digest, block.serial)


# -- committee term and the stop rule ------------------------------------

@dataclass
class CommitteeTerm:
    term_id: int
    members: tuple
    start_serial: int = 1
    leader_index: int = 0
    term_start: int = 0
    term_end: Optional[int] = None
    end_serial: Optional[int] = None
    daily_log: list = field(default_factory=list)
    signed_log_hashes: list = field(default_factory=list)
    election_block: bytes = ZERO_DIGEST

    def __post_init__(self):
        self.members = tuple(self.members)
        if len(set(self.members)) != len(self.members):
            raise ValueError("duplicate committee member")
        if not self.members:
            raise ValueError("empty committee")
        if not 0 <= self.leader_index < len(self.members):
            raise ValueError("leader_index out of range")

    @property
    def csize(self) -> int:
        return len(self.members)

    @property
    def f(self) -> int:
        return max_faulty(self.csize)

    @property
    def quorum(self) -> int:
        return commit_quorum(self.csize)

    def label(self, node: str) -> int:
        return self.members.index(node)

    def leader(self, serial: int, round: int = 0) -> str:
        """Round-robin over member labels: one step per serial and one per failed round."""
        index = (self.leader_index + serial - self.start_serial + round) % self.csize
        return self.members[index]


@dataclass(frozen=True)
class StopSignal:
    """A member's request to close ``term_id`` in favour of the committee
    elected at snail block ``election_block``."""

    term_id: int
    election_block: bytes
    signature: Signature

    SCHEMA_PAYLOAD = (("term", "u64"), ("election", "digest"))

    @staticmethod
    def payload_for(term_id: int, election_block: bytes) -> bytes:
        return b"stop" + encode_fields(StopSignal.SCHEMA_PAYLOAD, (term_id, election_block))

    @classmethod
    def create(cls, member: str, term_id: int, election_block: bytes) -> "StopSignal":
        return cls(term_id, election_block, sign(member, OUTER, cls.payload_for(term_id, election_block)))

    @property
    def member(self) -> str:
        return self.signature.signer

    def valid(self) -> bool:
        return verify_signature(self.signature, self.payload_for(self.term_id, self.election_block), OUTER)


def encode_stops(stops: Sequence[StopSignal]) -> bytes:
    """Block ``extra`` field carrying stop signals."""
    if not stops:
        return b""
    rows = [[s.term_id, s.election_block.hex(), s.signature.signer, s.signature.tag.hex()] for s in stops]
    return b"stops:" + json.dumps(rows, separators=(",", ":")).encode()


def decode_stops(extra: bytes) -> list[StopSignal]:
    if not extra.startswith(b"stops:"):
        return []
    rows = json.loads(extra[len(b"stops:"):])
    return [StopSignal(t, bytes.fromhex(e), Signature(s, OUTER, bytes.fromhex(tag))) for t, e, s, tag in rows]


def count_stops(term: CommitteeTerm, stops: Iterable[StopSignal]) -> dict:
    """Distinct valid member stops for this term, grouped by named election block."""
    members = set(term.members)
    by_block: dict = {}
    seen = set()
    for stop in stops:
        if stop.term_id != term.term_id or not stop.valid() or stop.member not in members:
            continue
        if stop.member in seen:
            continue
        seen.add(stop.member)
        by_block.setdefault(stop.election_block, set()).add(stop.member)
    return by_block


def log_hash(blocks: Sequence[FastBlock]) -> bytes:
    return digest(b"daylog" + b"".join(b.digest for b in blocks))


@dataclass(frozen=True)
class FinalDailyLog:
    term_id: int
    entries: tuple
    log_hash: bytes
    election_block: bytes
    stoppers: tuple
    signatures: tuple = ()


def daily_stop(term: CommitteeTerm, stop_signatures: Iterable[StopSignal],
               honest: Optional[Iterable[str]] = None) -> FinalDailyLog:
    """Close the term once ceil(csize/3) distinct members signed a stop.

    Stop markers never enter the log itself (they ride in block headers), so
    the final log is the term's blocks. It is signed by every member listed
    in ``honest`` (all members when omitted).
    """
    groups = count_stops(term, stop_signatures)
    need = stop_threshold(term.csize)
    winner = None
    for block_hash in sorted(groups):
        if len(groups[block_hash]) >= need:
            winner = block_hash
            break
    if winner is None:
        best = max((len(v) for v in groups.values()), default=0)
        raise InsufficientStopSignatures(f"{best} of {need} stop signatures")
    blocks = tuple(term.daily_log)
    h = log_hash(blocks)
    signers = term.members if honest is None else [m for m in term.members if m in set(honest)]
    sigs = tuple(sign(m, OUTER, h) for m in signers)
    return FinalDailyLog(term.term_id, blocks, h, winner, tuple(sorted(groups[winner])), sigs)


def export_daily_log(term_id: int, blocks: Sequence[FastBlock], fh) -> None:
    """JSON-lines of fast blocks, one per line, tagged with the term id."""
    for block in blocks:
        fh.write(json.dumps({"term": term_id, "block": to_jsonable(block)}) + "\n")


def load_daily_log(path) -> list[FastBlock]:
    with open(path) as fh:
        return [from_jsonable(FastBlock, json.loads(line)["block"]) for line in fh if line.strip()]


def export_signed_hashes(final: FinalDailyLog) -> list[dict]:
    return [{"term": final.term_id, "member": s.signer, "hash": final.log_hash.hex()}
            for s in final.signatures]
