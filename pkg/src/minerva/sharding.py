"""Sharded speculative transactions with timestamp bounds.

Each transaction keeps a [lowerBound, upperBound] window. Reads and writes
tighten it from per-sector rts/wts and from the reader/writer lists, finish
picks a commit timestamp cts inside the window, and every shard the
transaction touched is asked to precommit at that cts.

The bound rules alone do not make the outcome equivalent to running the
committed transactions one by one in cts order, so a host shard also checks
each precommit against what it already promised: a read is rejected when a
write with a timestamp between the version read and cts was committed or
promised, a write is rejected when a later read already validated or another
write holds the same timestamp. Writes are applied with the Thomas rule
(older timestamps never overwrite newer ones).

A shard is modelled as one replicated state plus a count of responsive and
faulty replicas; a request needs 2f+1 replies before T_o ticks elapse.
"""

from __future__ import annotations

import enum
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .bft import Decision, make_vote, tally
from .encoding import ZERO_DIGEST, digest

INF = math.inf
ADDRESS_SPACE = 1 << 16


class TimeoutAbort(Exception):
    pass


class BoundCrossAbort(Exception):
    pass


class AnyAbortReply(Exception):
    pass


class MissingBatch(Exception):
    pass


@dataclass(frozen=True)
class ShardingParams:
    C: int = 1
    shard_size: int = 4
    T_o: int = 5
    batch_timeout: int = 20
    address_space: int = ADDRESS_SPACE

    def __post_init__(self):
        if self.C < 1:
            raise ValueError("C must be >= 1")
        if self.shard_size < 1:
            raise ValueError("shard_size must be >= 1")
        if self.address_space < self.C:
            raise ValueError("address space smaller than shard count")

    @property
    def f(self) -> int:
        return (self.shard_size - 1) // 3

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1


def host(addr: int, C: int, address_space: int = ADDRESS_SPACE) -> int:
    """Public partition of the address range into C equal contiguous ranges."""
    if not 0 <= addr < address_space:
        raise ValueError(f"address {addr} outside [0, {address_space})")
    return addr * C // address_space


class TxState(enum.Enum):
    RUNNING = "RUNNING"
    PRECOMMIT = "PRECOMMIT"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"


@dataclass
class DataSector:
    addr: int
    value: object = 0
    rts: int = -1
    wts: int = -1
    readers: list = field(default_factory=list)
    writers: list = field(default_factory=list)
    version: int = -1      # cts of the write currently visible
    version_tx: int = 0    # id of that writer (0: initial value)
    reserved: dict = field(default_factory=dict)  # tx id -> promised write cts
    history: list = field(default_factory=list)   # cts of every committed write


@dataclass
class ShardTX:
    id: int
    home: int
    physical_timestamp: int = 0
    lowerBound: float = 0
    upperBound: float = INF
    state: TxState = TxState.RUNNING
    before: list = field(default_factory=list)
    after: list = field(default_factory=list)
    cts: Optional[int] = None
    metadata: Optional[tuple] = None
    reads: dict = field(default_factory=dict)    # addr -> (value, version, writer id)
    observed: list = field(default_factory=list)  # values returned to the program, in order
    writes: dict = field(default_factory=dict)   # addr -> buffered value
    shards: set = field(default_factory=set)
    commit_replies: dict = field(default_factory=dict)
    abort_reason: str = ""
    bound_trace: list = field(default_factory=list)

    def _track(self):
        self.bound_trace.append((self.lowerBound, self.upperBound))

    @property
    def read_from(self) -> set:
        return {writer for _, _, writer in self.reads.values() if writer}


@dataclass
class Shard:
    shard_id: int
    replicas: int
    responsive: int
    faulty: int = 0
    sectors: dict = field(default_factory=dict)
    batch_counter: int = 0
    committed_since_batch: list = field(default_factory=list)
    members: tuple = ()

    def sector(self, addr: int) -> DataSector:
        sec = self.sectors.get(addr)
        if sec is None:
            sec = self.sectors[addr] = DataSector(addr)
        return sec


@dataclass(frozen=True)
class ShardBatch:
    shard_id: int
    batchCounter: int
    txs: tuple  # committed ShardTX records, ordered


@dataclass
class Message:
    kind: str
    src: int
    dst: int
    tx: int


class ShardSystem:
    """All shards of one run plus the transaction registry used for bound lookups."""

    def __init__(self, params: ShardingParams, initial: Optional[dict] = None,
                 responsive: Optional[Sequence[int]] = None, faulty: Optional[Sequence[int]] = None,
                 seed: int = 0):
        self.params = params
        self.now = 0
        self.shards = []
        for s in range(params.C):
            resp = params.shard_size if responsive is None else responsive[s]
            bad = 0 if faulty is None else faulty[s]
            members = tuple(f"shard{s}-r{i}" for i in range(params.shard_size))
            self.shards.append(Shard(s, params.shard_size, resp, bad, members=members))
        for addr, value in (initial or {}).items():
            sec = self.shard_of(addr).sector(addr)
            sec.value = value
        self.registry: dict[int, ShardTX] = {}
        self.messages: list[Message] = []
        self.rng = random.Random(seed)
        self.sector_log: list = []  # (addr, rts, wts) after every change, for monotonicity checks

    def shard_of(self, addr: int) -> Shard:
        return self.shards[host(addr, self.params.C, self.params.address_space)]

    # -- transaction lifecycle ---------------------------------------
    def begin(self, home: int, physical_timestamp: Optional[int] = None,
              tx_id: Optional[int] = None) -> ShardTX:
        if tx_id is None:
            tx_id = self.rng.getrandbits(64) or 1
            while tx_id in self.registry:
                tx_id = self.rng.getrandbits(64) or 1
        ts = self.now if physical_timestamp is None else physical_timestamp
        tx = ShardTX(tx_id, home, ts)
        tx._track()
        self.registry[tx_id] = tx
        return tx

    def _quorum_call(self, tx: ShardTX, shard: Shard, kind: str, reply_fn):
        """Send ``kind`` to every replica of ``shard`` and wait for 2f+1 replies."""
        local = shard.shard_id == tx.home
        if not local:
            for _ in range(shard.replicas):
                self.messages.append(Message(kind, tx.home, shard.shard_id, tx.id))
        honest = shard.responsive - min(shard.faulty, shard.responsive) if not local else 1
        if not local and shard.responsive < self.params.quorum:
            self.now += self.params.T_o
            self._abort(tx, f"timeout waiting for {kind} from shard {shard.shard_id}")
            raise TimeoutAbort(tx.abort_reason)
        reply = reply_fn()
        if local:
            return reply, 1
        replies = [reply] * honest + [("forged", i) for i in range(shard.responsive - honest)]
        value, count = Counter(replies).most_common(1)[0]
        if count <= self.params.f:
            self.now += self.params.T_o
            self._abort(tx, f"no majority in replies from shard {shard.shard_id}")
            raise TimeoutAbort(tx.abort_reason)
        return value, len(replies)

    def read_remote(self, shard: Shard, addr: int, tx_id: int):
        if host(addr, self.params.C, self.params.address_space) != shard.shard_id:
            return None
        sec = shard.sector(addr)
        sec.readers.append(tx_id)
        return (sec.value, sec.wts, tuple(sec.writers), sec.version, sec.version_tx)

    def write_remote(self, shard: Shard, addr: int, tx_id: int):
        if host(addr, self.params.C, self.params.address_space) != shard.shard_id:
            return None
        sec = shard.sector(addr)
        sec.writers.append(tx_id)
        return (sec.rts, tuple(sec.readers))

    def read(self, tx: ShardTX, addr: int):
        self._require(tx, TxState.RUNNING)
        if addr in tx.writes:
            tx.observed.append(tx.writes[addr])
            return tx.writes[addr]
        shard = self.shard_of(addr)
        tx.shards.add(shard.shard_id)
        (value, wts, writers, version, writer), _ = self._quorum_call(
            tx, shard, "readRemote", lambda: self.read_remote(shard, addr, tx.id))
        tx.before.extend(w for w in writers if w != tx.id)
        tx.lowerBound = max(tx.lowerBound, wts)
        tx._track()
        if addr not in tx.reads:
            tx.reads[addr] = (value, version, writer)
        tx.observed.append(value)
        return value

    def write(self, tx: ShardTX, addr: int, value) -> bool:
        self._require(tx, TxState.RUNNING)
        shard = self.shard_of(addr)
        tx.shards.add(shard.shard_id)
        (rts, readers), _ = self._quorum_call(
            tx, shard, "writeRemote", lambda: self.write_remote(shard, addr, tx.id))
        tx.after.extend(r for r in readers if r != tx.id)
        tx.lowerBound = max(tx.lowerBound, rts)
        tx._track()
        tx.writes[addr] = value
        return True

    def finish(self, tx: ShardTX) -> int:
        """Absorb neighbour bounds and choose cts; raises BoundCrossAbort."""
        self._require(tx, TxState.RUNNING)
        for other_id in tx.before:
            other = self.registry.get(other_id)
            if other is None or other.state is TxState.ABORTED:
                continue
            tx.lowerBound = max(tx.lowerBound, other.upperBound)
        for other_id in tx.after:
            other = self.registry.get(other_id)
            if other is None or other.state is TxState.ABORTED:
                continue
            tx.upperBound = min(tx.upperBound, other.lowerBound)
        tx._track()
        if tx.lowerBound > tx.upperBound or tx.lowerBound == INF:
            self._abort(tx, "lowerBound crossed upperBound")
            raise BoundCrossAbort(tx.abort_reason)
        if tx.upperBound == INF:
            cts = int(tx.lowerBound) + 1
        else:
            cts = int((tx.lowerBound + tx.upperBound) // 2)
        return cts

    def on_precommit(self, shard: Shard, tx_id: int, cts: int):
        """Host-side check of a precommit; ("Commit", batchCounter) or ("Abort", id)."""
        tx = self.registry.get(tx_id)
        if tx is None or tx.state is TxState.ABORTED:
            return ("Abort", tx_id)
        if not (tx.lowerBound <= cts <= tx.upperBound):
            return ("Abort", tx_id)
        mine = lambda a: host(a, self.params.C, self.params.address_space) == shard.shard_id
        for addr, (_, version, _) in tx.reads.items():
            if not mine(addr):
                continue
            sec = shard.sector(addr)
            if cts <= version:
                return ("Abort", tx_id)
            promised = [w for t, w in sec.reserved.items() if t != tx_id] + sec.history
            if any(version < w <= cts for w in promised):
                return ("Abort", tx_id)
        for addr in tx.writes:
            if not mine(addr):
                continue
            sec = shard.sector(addr)
            if cts <= sec.rts or cts in sec.history:
                return ("Abort", tx_id)
            if any(w == cts for t, w in sec.reserved.items() if t != tx_id):
                return ("Abort", tx_id)
        # promise: pin bounds and raise the sector clocks
        tx.lowerBound = tx.upperBound = cts
        for addr in tx.reads:
            if mine(addr):
                sec = shard.sector(addr)
                sec.rts = max(sec.rts, cts)
                self.sector_log.append((addr, sec.rts, sec.wts))
        for addr in tx.writes:
            if mine(addr):
                sec = shard.sector(addr)
                sec.wts = max(sec.wts, cts)
                sec.reserved[tx_id] = cts
                self.sector_log.append((addr, sec.rts, sec.wts))
        return ("Commit", shard.batch_counter)

    def precommit(self, tx: ShardTX, cts: int) -> bool:
        """Broadcast Precommit(tx, cts) to every accessed shard; True if all commit."""
        self._require(tx, TxState.RUNNING)
        shards = sorted(tx.shards | {tx.home})
        tx.state = TxState.PRECOMMIT
        tx.cts = cts
        ok = True
        for s in shards:
            shard = self.shards[s]
            try:
                reply, count = self._quorum_call(tx, shard, "precommit",
                                                 lambda: self.on_precommit(shard, tx.id, cts))
            except TimeoutAbort:
                self._release(tx)
                return False
            tx.commit_replies[s] = (reply, count)
            if reply[0] != "Commit":
                ok = False
                break
        if not ok:
            self._release(tx)
            self._abort(tx, "a shard replied Abort")
            return False
        tx._track()
        return True

    def finalize_commit(self, tx: ShardTX) -> ShardTX:
        """Apply buffered writes at their host shards and mark the tx committed."""
        self._require(tx, TxState.PRECOMMIT)
        for s, (reply, count) in tx.commit_replies.items():
            if reply[0] != "Commit":
                self._release(tx)
                self._abort(tx, "abort reply")
                raise AnyAbortReply(tx.abort_reason)
            if s != tx.home and count < self.params.quorum:
                self._release(tx)
                self._abort(tx, "commit quorum not met")
                raise AnyAbortReply(tx.abort_reason)
        for addr, value in tx.writes.items():
            sec = self.shard_of(addr).sector(addr)
            sec.reserved.pop(tx.id, None)
            sec.history.append(tx.cts)
            if tx.cts > sec.version:
                sec.value = value
                sec.version = tx.cts
                sec.version_tx = tx.id
        tx.state = TxState.COMMITTED
        tx.metadata = (tx.home, tx.commit_replies[tx.home][0][1])
        self.shards[tx.home].committed_since_batch.append(tx)
        self._prune(tx)
        return tx

    def _release(self, tx: ShardTX) -> None:
        for addr in tx.writes:
            self.shard_of(addr).sector(addr).reserved.pop(tx.id, None)

    def _abort(self, tx: ShardTX, reason: str) -> None:
        self._release(tx)
        tx.state = TxState.ABORTED
        tx.abort_reason = reason
        tx.writes = {}
        self._prune(tx)

    def _prune(self, tx: ShardTX) -> None:
        for shard in self.shards:
            for sec in shard.sectors.values():
                if tx.id in sec.readers:
                    sec.readers = [r for r in sec.readers if r != tx.id]
                if tx.id in sec.writers:
                    sec.writers = [w for w in sec.writers if w != tx.id]

    def abort(self, tx: ShardTX, reason: str = "client abort") -> None:
        if tx.state in (TxState.RUNNING, TxState.PRECOMMIT):
            self._abort(tx, reason)

    @staticmethod
    def _require(tx: ShardTX, state: TxState) -> None:
        if tx.state is not state:
            raise RuntimeError(f"tx {tx.id} is {tx.state.value}, expected {state.value}")

    # -- output ---------------------------------------------------------
    def output_log(self, shard_id: int) -> Optional[ShardBatch]:
        """Agree on and emit the shard's next batch; None when the shard's
        replicas cannot reach a commit quorum on it."""
        shard = self.shards[shard_id]
        batch = shard_output_log(shard.committed_since_batch, shard_id, shard.batch_counter)
        batch_digest = digest(b"batch" + repr((shard_id, batch.batchCounter,
                                              [t.id for t in batch.txs])).encode())
        honest = max(0, shard.responsive - shard.faulty)
        votes = [make_vote(m, batch.batchCounter, 0, batch_digest, "precommit")
                 for m in shard.members[:honest]]
        votes += [make_vote(m, batch.batchCounter, 0, ZERO_DIGEST, "precommit")
                  for m in shard.members[honest:shard.replicas]]
        if tally(votes, shard.members, batch_digest) is not Decision.COMMITTED:
            return None
        shard.batch_counter += 1
        shard.committed_since_batch = []
        return batch


# -- module-level operations ----------------------------------------------

def tx_read(system: ShardSystem, tx: ShardTX, addr: int):
    return system.read(tx, addr)


def tx_write(system: ShardSystem, tx: ShardTX, addr: int, value) -> bool:
    return system.write(tx, addr, value)


def tx_finish(system: ShardSystem, tx: ShardTX) -> int:
    return system.finish(tx)


def shard_output_log(committed: Iterable[ShardTX], shard_id: int, batch_counter: int) -> ShardBatch:
    """Committed transactions sorted by cts, ties by physical timestamp."""
    txs = sorted(committed, key=lambda t: (t.cts, t.physical_timestamp, t.id))
    return ShardBatch(shard_id, batch_counter, tuple(txs))


def lis_filter(seq: Sequence, key=None) -> list[int]:
    """Indices of a longest non-decreasing subsequence.

    Among all longest ones the lexicographically smallest index tuple is
    returned: suffix lengths are computed first, then indices are taken
    greedily from the left.
    """
    vals = [key(x) if key else x for x in seq]
    n = len(vals)
    if n == 0:
        return []
    longest = [1] * n  # longest non-decreasing run starting at i
    for i in range(n - 2, -1, -1):
        for j in range(i + 1, n):
            if vals[j] >= vals[i] and longest[j] + 1 > longest[i]:
                longest[i] = longest[j] + 1
    need = max(longest)
    out = []
    prev = None
    for i in range(n):
        if longest[i] == need and (prev is None or vals[i] >= prev):
            out.append(i)
            prev = vals[i]
            need -= 1
            if need == 0:
                break
    return out


@dataclass
class DayLog:
    entries: list
    invalid_batches: list
    aborted: set
    filtered: list
    switch_committee: bool = False
    missing: list = field(default_factory=list)


def _median(values: Sequence[int]):
    s = sorted(values)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def invalid_batches(batches: Sequence[ShardBatch]) -> list[int]:
    """Shard ids whose median timestamp lies outside the [min, max] envelope of
    a strict majority of the other non-empty batches of the same round."""
    filled = [b for b in batches if b.txs]
    out = []
    for b in filled:
        others = [o for o in filled if o.shard_id != b.shard_id]
        if not others:
            continue
        med = _median([t.physical_timestamp for t in b.txs])
        outside = 0
        for o in others:
            ts = [t.physical_timestamp for t in o.txs]
            if med < min(ts) or med > max(ts):
                outside += 1
        if 2 * outside > len(others):
            out.append(b.shard_id)
    return out


def primary_collect(rounds: Sequence[dict], params: ShardingParams) -> DayLog:
    """Merge per-round batches into the day log.

    ``rounds`` holds, per batch counter, a mapping shard id -> ShardBatch (a
    shard whose batch did not arrive before batch_timeout is absent). A
    missing batch fails that round and raises the committee-switch flag.
    """
    entries = []
    invalid = []
    aborted: set = set()
    missing = []
    for number, batches in enumerate(rounds):
        absent = [s for s in range(params.C) if s not in batches]
        if absent:
            missing.extend((number, s) for s in absent)
            continue
        ordered = [batches[s] for s in range(params.C)]
        bad = set(invalid_batches(ordered))
        invalid.extend((number, s) for s in sorted(bad))
        round_txs = [t for b in ordered for t in b.txs]
        dead = {t.id for b in ordered if b.shard_id in bad for t in b.txs}
        changed = True
        while changed:  # readers of aborted writes are aborted too
            changed = False
            for t in round_txs:
                if t.id not in dead and t.read_from & dead:
                    dead.add(t.id)
                    changed = True
        aborted |= dead
        entries.extend((number, t) for t in round_txs if t.id not in dead)
    entries.sort(key=lambda e: (e[0], e[1].cts, e[1].physical_timestamp, e[1].id))
    keep = lis_filter(entries, key=lambda e: e[1].physical_timestamp)
    kept = set(keep)
    filtered = [e[1] for i, e in enumerate(entries) if i not in kept]
    return DayLog([entries[i][1] for i in keep], invalid, aborted, filtered, bool(missing), missing)


def collect_round(system: ShardSystem) -> dict:
    """One output round: every shard that can agree on a batch submits it."""
    out = {}
    for shard in system.shards:
        batch = system.output_log(shard.shard_id)
        if batch is not None:
            out[shard.shard_id] = batch
    return out


# -- randomized workloads --------------------------------------------------

@dataclass
class Program:
    home: int
    ops: list  # ("r", addr) or ("w", addr)


def random_programs(rng: random.Random, n_tx: int, addrs: Sequence[int], C: int,
                    max_ops: int = 4) -> list[Program]:
    out = []
    for _ in range(n_tx):
        ops = []
        for _ in range(rng.randint(1, max_ops)):
            ops.append((rng.choice("rw"), rng.choice(addrs)))
        out.append(Program(rng.randrange(C), ops))
    return out


def write_value(tx_id: int, step: int, observed: Sequence) -> tuple:
    """Value written by a program step: depends on everything it read so far."""
    return (tx_id, step, tuple(observed))


def run_interleaved(system: ShardSystem, programs: Sequence[Program], rng: random.Random) -> list[ShardTX]:
    """Execute programs concurrently under a random schedule.

    Each scheduling step advances one transaction by one operation, by its
    finish/precommit, or by its final commit.
    """
    txs = []
    cursor = []
    pending_cts = {}
    for i, prog in enumerate(programs):
        system.now += 1
        txs.append(system.begin(prog.home, tx_id=i + 1))
        cursor.append(0)
    live = list(range(len(programs)))
    while live:
        i = rng.choice(live)
        tx, prog = txs[i], programs[i]
        system.now += 1
        try:
            if tx.state is TxState.RUNNING and cursor[i] < len(prog.ops):
                kind, addr = prog.ops[cursor[i]]
                if kind == "r":
                    system.read(tx, addr)
                else:
                    system.write(tx, addr, write_value(tx.id, cursor[i], tx.observed))
                cursor[i] += 1
            elif tx.state is TxState.RUNNING:
                pending_cts[i] = system.finish(tx)
                system.precommit(tx, pending_cts[i])
            elif tx.state is TxState.PRECOMMIT:
                system.finalize_commit(tx)
        except (TimeoutAbort, BoundCrossAbort, AnyAbortReply):
            pass
        if tx.state in (TxState.COMMITTED, TxState.ABORTED):
            live.remove(i)
    return txs


def random_scenario(seed: int, max_tx: int = 6, max_shards: int = 3, max_sectors: int = 8,
                    silent_prob: float = 0.1):
    """Build and run one small randomized scenario; returns (system, programs, txs, initial)."""
    rng = random.Random(seed)
    C = rng.randint(1, max_shards)
    params = ShardingParams(C=C, shard_size=4, T_o=5, address_space=C * 64)
    n_sectors = rng.randint(1, max_sectors)
    addrs = sorted(rng.sample(range(params.address_space), n_sectors))
    initial = {a: ("init", a) for a in addrs}
    responsive = [params.shard_size if rng.random() >= silent_prob else rng.randint(0, 2)
                  for _ in range(C)]
    faulty = [rng.randint(0, params.f) for _ in range(C)]
    system = ShardSystem(params, initial, responsive, faulty, seed)
    programs = random_programs(rng, rng.randint(1, max_tx), addrs, C)
    txs = run_interleaved(system, programs, rng)
    return system, programs, txs, initial
