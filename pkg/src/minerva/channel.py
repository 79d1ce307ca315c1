"""Private gossip among committee members.

Member i encrypts its network address for member j iff A[i][j] = 1, so each
member ends up knowing only its in-neighbours. A has gsize ones in every row
and column, a zero diagonal, and a strongly connected digraph, so votes can
still reach everyone while a single compromised member exposes at most
gsize + 1 addresses.

Encryption is simulated: a sealed box names the recipient's public key
(the digest of its private key) and only the matching private key opens it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .encoding import digest
from .prng import HashRNG

MAX_REJECTIONS = 10_000


class InfeasibleParams(Exception):
    pass


class GenerationTimeout(Exception):
    pass


@dataclass(frozen=True)
class GossipMatrix:
    A: tuple
    gsize: int
    seed: bytes
    rejections: int = 0

    @property
    def csize(self) -> int:
        return len(self.A)

    def out_neighbors(self, i: int) -> list[int]:
        return [j for j, bit in enumerate(self.A[i]) if bit]

    def in_neighbors(self, j: int) -> list[int]:
        return [i for i in range(self.csize) if self.A[i][j]]

    def to_text(self) -> str:
        return "\n".join(" ".join(str(bit) for bit in row) for row in self.A) + "\n"


def is_strongly_connected(A: Sequence[Sequence[int]]) -> bool:
    """Every label reaches every other along directed edges i -> j where A[i][j] = 1."""
    n = len(A)
    if n == 0:
        return True

    def reach(adj) -> int:
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen)

    fwd = [[j for j in range(n) if A[i][j]] for i in range(n)]
    rev = [[i for i in range(n) if A[i][j]] for j in range(n)]
    return reach(fwd) == n and reach(rev) == n


def check_matrix(A: Sequence[Sequence[int]], gsize: int) -> list[str]:
    """Violated invariants, empty when A is a valid gossip matrix."""
    n = len(A)
    problems = []
    if any(len(row) != n for row in A):
        problems.append("not square")
        return problems
    if any(bit not in (0, 1) for row in A for bit in row):
        problems.append("entries not 0/1")
    if any(A[i][i] for i in range(n)):
        problems.append("nonzero diagonal")
    if any(sum(row) != gsize for row in A):
        problems.append("row sum differs from gsize")
    if any(sum(A[i][j] for i in range(n)) != gsize for j in range(n)):
        problems.append("column sum differs from gsize")
    if not is_strongly_connected(A):
        problems.append("not strongly connected")
    return problems


def _random_matching(A, rng: HashRNG):
    """Seeded perfect matching on the free off-diagonal cells (Kuhn's algorithm).

    The free cells form a regular bipartite graph, so a matching exists.
    """
    n = len(A)
    adj = []
    for i in range(n):
        cols = [j for j in range(n) if j != i and not A[i][j]]
        rng.shuffle(cols)
        adj.append(cols)
    match_col = [-1] * n

    def augment(i, seen):
        for j in adj[i]:
            if j not in seen:
                seen.add(j)
                if match_col[j] < 0 or augment(match_col[j], seen):
                    match_col[j] = i
                    return True
        return False

    rows = rng.permutation(n)
    for i in rows:
        if not augment(i, set()):
            return None
    perm = [0] * n
    for j, i in enumerate(match_col):
        perm[i] = j
    return tuple(perm)


def generate_matrix(seed: bytes, csize: int, gsize: int) -> GossipMatrix:
    """Sum of gsize seeded derangement permutation matrices.

    Each permutation is redrawn until it is a derangement that avoids every
    edge already placed (after 50 misses in a row a seeded matching over the
    free cells is used instead); a finished matrix that is not strongly connected is
    discarded and rebuilt. Every redraw counts toward MAX_REJECTIONS.
    """
    if not (1 <= gsize < csize):
        raise InfeasibleParams(f"need 1 <= gsize < csize, got gsize={gsize}, csize={csize}")
    rng = HashRNG(seed, b"gossip-matrix")
    rejections = 0
    while True:
        A = [[0] * csize for _ in range(csize)]
        complete = True
        for _ in range(gsize):
            stalled = 0
            while True:
                perm = rng.permutation(csize)
                if all(perm[i] != i and not A[i][perm[i]] for i in range(csize)):
                    break
                rejections += 1
                stalled += 1
                if rejections >= MAX_REJECTIONS:
                    raise GenerationTimeout(f"no matrix after {rejections} rejections")
                if stalled >= 50:
                    perm = _random_matching(A, rng)
                    break
            if perm is None:
                complete = False
                break
            for i in range(csize):
                A[i][perm[i]] = 1
        if complete and is_strongly_connected(A):
            return GossipMatrix(tuple(tuple(row) for row in A), gsize, seed, rejections)
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise GenerationTimeout(f"no matrix after {rejections} rejections")


def gsize_warning(csize: int, gsize: int) -> Optional[str]:
    """Fan-outs of at least csize/6 expose more addresses than the usual balance."""
    if 6 * gsize >= csize:
        return f"gsize={gsize} is at least csize/6 for csize={csize}"
    return None


# -- simulated encryption ----------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    private: bytes
    public: bytes

    @classmethod
    def derive(cls, owner: str, salt: bytes = b"") -> "KeyPair":
        private = digest(b"private-key" + salt + owner.encode())
        return cls(private, digest(private))


@dataclass(frozen=True)
class Sealed:
    recipient_pub: bytes
    sender: int
    plaintext: str


FAILED = None


def seal(recipient_pub: bytes, sender: int, plaintext: str) -> Sealed:
    return Sealed(recipient_pub, sender, plaintext)


def open_sealed(private: bytes, box: Sealed) -> Optional[str]:
    """Plaintext if ``private`` matches the recipient key, else None."""
    if digest(private) != box.recipient_pub:
        return FAILED
    return box.plaintext


def announce(member: int, A: GossipMatrix, public_keys: Sequence[bytes], address: str) -> list[Sealed]:
    """One sealed copy of ``address`` for each out-neighbour of ``member``."""
    return [seal(public_keys[j], member, address) for j in A.out_neighbors(member)]


@dataclass
class AddressTable:
    owner: int
    known: dict = field(default_factory=dict)


def build_table(member: int, private: bytes, own_address: str,
                announcements: Iterable[Sealed]) -> AddressTable:
    """Try every broadcast announcement; keep the ones that open."""
    table = AddressTable(member, {member: own_address})
    for box in announcements:
        plain = open_sealed(private, box)
        if plain is not None:
            table.known[box.sender] = plain
    return table


@dataclass
class CommitteeChannel:
    """Address exchange for one committee, labels in election order."""

    members: tuple
    addresses: dict
    matrix: GossipMatrix
    keys: tuple = ()
    tables: dict = field(default_factory=dict)

    @classmethod
    def setup(cls, members: Sequence[str], addresses: Mapping[str, str], seed: bytes,
              gsize: int, salt: bytes = b"") -> "CommitteeChannel":
        members = tuple(members)
        matrix = generate_matrix(seed, len(members), gsize)
        keys = tuple(KeyPair.derive(m, salt) for m in members)
        chan = cls(members, dict(addresses), matrix, keys)
        boxes = chan.all_announcements()
        for j, m in enumerate(members):
            chan.tables[m] = build_table(j, keys[j].private, addresses[m], boxes)
        return chan

    def all_announcements(self) -> list[Sealed]:
        pubs = [k.public for k in self.keys]
        out = []
        for i, m in enumerate(self.members):
            out.extend(announce(i, self.matrix, pubs, self.addresses[m]))
        return out

    def leaked_by(self, member: str) -> set:
        """Addresses a compromised ``member`` can publish."""
        table = self.tables.get(member)
        return set(table.known.values()) if table else set()
