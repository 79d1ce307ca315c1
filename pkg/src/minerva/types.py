"""Blocks, fruits, transactions, accounts and the world state."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

from .encoding import ZERO_DIGEST, check_digest, digest, encode, encode_fields, hash_name

_ADDRESS = re.compile(r"^[0-9A-Za-z_.:\-]{1,64}$")

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

INTRINSIC_GAS = 1


def is_address(value) -> bool:
    return isinstance(value, str) and bool(_ADDRESS.match(value))


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    """Binary Merkle root; an odd node at any level is paired with itself."""
    if not leaves:
        return ZERO_DIGEST
    level = [digest(LEAF_PREFIX + bytes(leaf)) for leaf in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [digest(NODE_PREFIX + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


class TxError(Exception):
    pass


class BadNonce(TxError):
    pass


class InsufficientBalance(TxError):
    pass


class UnknownSender(TxError):
    pass


@dataclass(frozen=True)
class Transaction:
    account_nonce: int
    gas_price: int
    gas_limit: int
    recipient: str
    payload: int
    code: bytes = b""
    data: bytes = b""
    physical_timestamp: int = 0
    sender: str = ""
    sequence_number: int = 0

    SCHEMA = (
        ("account_nonce", "u64"),
        ("gas_price", "u64"),
        ("gas_limit", "u64"),
        ("recipient", "str"),
        ("payload", "u64"),
        ("code", "bytes"),
        ("data", "bytes"),
        ("physical_timestamp", "u64"),
        ("sender", "str"),
        ("sequence_number", "u64"),
    )

    def __post_init__(self):
        if self.gas_limit < 0 or self.payload < 0 or self.gas_price < 0:
            raise ValueError("gas_limit, gas_price and payload must be non-negative")
        if not is_address(self.sender):
            raise ValueError(f"malformed sender {self.sender!r}")

    @cached_property
    def tx_id(self) -> bytes:
        return digest(encode(self))

    @property
    def gas_used(self) -> int:
        intrinsic = INTRINSIC_GAS + len(self.code) + len(self.data)
        return min(self.gas_limit, intrinsic)

    @property
    def fee(self) -> int:
        return self.gas_used * self.gas_price


@dataclass(frozen=True)
class AccountState:
    nonce: int = 0
    balance: int = 0
    code_hash: bytes = field(default_factory=lambda: digest(b""))
    storage_root: bytes = ZERO_DIGEST

    SCHEMA = (
        ("nonce", "u64"),
        ("balance", "u64"),
        ("code_hash", "digest"),
        ("storage_root", "digest"),
    )

    def __post_init__(self):
        if self.balance < 0:
            raise ValueError("balance must be non-negative")
        check_digest(self.code_hash, "code_hash")
        check_digest(self.storage_root, "storage_root")


_LEAF_SCHEMA = (("address", "str"), ("account", AccountState))


class WorldState:
    """Immutable address -> account mapping with a Merkle root.

    ``with_accounts`` returns a new state; the receiver is never modified, so
    any retained instance is a snapshot.
    """

    __slots__ = ("_accounts", "_root")

    def __init__(self, accounts: Optional[Mapping[str, AccountState]] = None):
        self._accounts = MappingProxyType(dict(accounts or {}))
        self._root: Optional[bytes] = None

    @property
    def accounts(self) -> Mapping[str, AccountState]:
        return self._accounts

    @property
    def root(self) -> bytes:
        if self._root is None:
            leaves = [
                encode_fields(_LEAF_SCHEMA, (addr, self._accounts[addr]))
                for addr in sorted(self._accounts)
            ]
            self._root = merkle_root(leaves)
        return self._root

    def get(self, address: str) -> Optional[AccountState]:
        return self._accounts.get(address)

    def with_accounts(self, updates: Mapping[str, AccountState]) -> "WorldState":
        merged = dict(self._accounts)
        merged.update(updates)
        return WorldState(merged)

    def total_balance(self) -> int:
        return sum(acct.balance for acct in self._accounts.values())

    def __eq__(self, other):
        return isinstance(other, WorldState) and dict(self._accounts) == dict(other._accounts)

    def __hash__(self):
        return hash(self.root)

    def __repr__(self):
        return f"WorldState({len(self._accounts)} accounts, root={self.root.hex()[:12]})"


class StateStore:
    """Retains every state it has seen, keyed by root."""

    def __init__(self):
        self._by_root: dict[bytes, WorldState] = {}

    def put(self, state: WorldState) -> bytes:
        self._by_root.setdefault(state.root, state)
        return state.root

    def materialize(self, root: bytes) -> WorldState:
        return self._by_root[root]

    def __contains__(self, root):
        return root in self._by_root

    def __len__(self):
        return len(self._by_root)


def apply_transaction(state: WorldState, tx: Transaction) -> WorldState:
    sender = state.get(tx.sender)
    if sender is None:
        raise UnknownSender(tx.sender)
    if tx.account_nonce != sender.nonce:
        raise BadNonce(f"{tx.sender}: expected nonce {sender.nonce}, got {tx.account_nonce}")
    cost = tx.payload + tx.fee
    if cost > sender.balance:
        raise InsufficientBalance(f"{tx.sender}: balance {sender.balance} < {cost}")
    updates = {tx.sender: replace(sender, nonce=sender.nonce + 1, balance=sender.balance - cost)}
    if tx.recipient == tx.sender:
        updates[tx.sender] = replace(updates[tx.sender], balance=updates[tx.sender].balance + tx.payload)
    else:
        recipient = state.get(tx.recipient) or AccountState()
        updates[tx.recipient] = replace(recipient, balance=recipient.balance + tx.payload)
    return state.with_accounts(updates)


def apply_all(state: WorldState, txs: Iterable[Transaction]) -> WorldState:
    for tx in txs:
        state = apply_transaction(state, tx)
    return state


@dataclass(frozen=True)
class FastBlock:
    parent_hash: bytes
    state_root: bytes
    transactions_root: bytes
    receipt_hash: bytes
    proposer: str
    bloom: bytes
    snail_hash: bytes
    snail_number: int
    number: int
    gas_limit: int
    gas_used: int
    time: int
    extra: bytes
    transactions: tuple = ()
    serial: int = 0

    SCHEMA = (
        ("parent_hash", "digest"),
        ("state_root", "digest"),
        ("transactions_root", "digest"),
        ("receipt_hash", "digest"),
        ("proposer", "str"),
        ("bloom", "bytes"),
        ("snail_hash", "digest"),
        ("snail_number", "u64"),
        ("number", "u64"),
        ("gas_limit", "u64"),
        ("gas_used", "u64"),
        ("time", "u64"),
        ("extra", "bytes"),
        ("transactions", ("seq", Transaction)),
        ("serial", "u64"),
    )

    @cached_property
    def digest(self) -> bytes:
        return fast_block_digest(self)


_FAST_HEADER = tuple(item for item in FastBlock.SCHEMA if item[0] != "transactions")


def transactions_root(txs: Sequence[Transaction]) -> bytes:
    return merkle_root([encode(tx) for tx in txs])


def fast_block_digest(block: FastBlock) -> bytes:
    """Digest over every header field plus a freshly computed transaction root."""
    header = encode_fields(_FAST_HEADER, [getattr(block, name) for name, _ in _FAST_HEADER])
    return digest(b"fast" + header + transactions_root(block.transactions))


def genesis_fast_block(state: WorldState) -> FastBlock:
    return FastBlock(
        parent_hash=ZERO_DIGEST,
        state_root=state.root,
        transactions_root=ZERO_DIGEST,
        receipt_hash=ZERO_DIGEST,
        proposer="genesis",
        bloom=b"",
        snail_hash=ZERO_DIGEST,
        snail_number=0,
        number=0,
        gas_limit=0,
        gas_used=0,
        time=0,
        extra=b"",
        transactions=(),
        serial=0,
    )


@dataclass(frozen=True)
class FastMessage:
    """What the committee hands to PoW nodes: a fast-block digest and its serial."""

    digest: bytes
    serial: int

    SCHEMA = (("digest", "digest"), ("serial", "u64"))


NULL_MESSAGE = FastMessage(ZERO_DIGEST, 0)

_MINING_HEADER = (
    ("parent", "digest"),
    ("body", "digest"),
    ("message_digest", "digest"),
    ("message_serial", "u64"),
    ("miner", "str"),
)


def mining_header(parent: bytes, body: bytes, message: FastMessage, miner: str) -> bytes:
    """Bytes fed to the mining hash; shared by a fruit and its sibling block."""
    return encode_fields(_MINING_HEADER, (parent, body, message.digest, message.serial, miner))


@dataclass(frozen=True)
class Fruit:
    """A fruit digests one fast-block message.

    ``parent_hash`` is the miner's tip when it was mined (it enters the
    mining hash); ``pointer_hash`` is the block the fruit hangs from, which
    decides recency. They coincide unless a pointer depth is configured.
    """

    parent_hash: bytes
    pointer_hash: bytes
    body_digest: bytes
    digest: bytes
    serial: int
    miner: str
    nonce: int
    fruit_difficulty: int
    hash: bytes

    SCHEMA = (
        ("parent_hash", "digest"),
        ("pointer_hash", "digest"),
        ("body_digest", "digest"),
        ("digest", "digest"),
        ("serial", "u64"),
        ("miner", "str"),
        ("nonce", "u64"),
        ("fruit_difficulty", "u64"),
        ("hash", "digest"),
    )

    @property
    def message(self) -> FastMessage:
        return FastMessage(self.digest, self.serial)

    def header(self) -> bytes:
        return mining_header(self.parent_hash, self.body_digest, self.message, self.miner)


@dataclass(frozen=True)
class SnailBlock:
    parent_hash: bytes
    uncle_hash: bytes
    coinbase: str
    pointer_hash: bytes
    pointer_number: int
    fruits_hash: bytes
    fast_hash: bytes
    fast_number: int
    sign_hash: bytes
    bloom: bytes
    difficulty: int
    fruit_difficulty: int
    number: int
    publickey: bytes
    to_elect: bool
    time: int
    extra: bytes
    mix_digest: bytes
    nonce: int
    fruits: tuple = ()
    hash: bytes = ZERO_DIGEST

    SCHEMA = (
        ("parent_hash", "digest"),
        ("uncle_hash", "digest"),
        ("coinbase", "str"),
        ("pointer_hash", "digest"),
        ("pointer_number", "u64"),
        ("fruits_hash", "digest"),
        ("fast_hash", "digest"),
        ("fast_number", "u64"),
        ("sign_hash", "digest"),
        ("bloom", "bytes"),
        ("difficulty", "u64"),
        ("fruit_difficulty", "u64"),
        ("number", "u64"),
        ("publickey", "bytes"),
        ("to_elect", "bool"),
        ("time", "u64"),
        ("extra", "bytes"),
        ("mix_digest", "digest"),
        ("nonce", "u64"),
        ("fruits", ("seq", Fruit)),
        ("hash", "digest"),
    )

    @property
    def message(self) -> FastMessage:
        return FastMessage(self.fast_hash, self.fast_number)

    @property
    def body_digest(self) -> bytes:
        return block_body_digest(self)

    def header(self) -> bytes:
        return mining_header(self.parent_hash, self.body_digest, self.message, self.coinbase)

    @property
    def last_serial(self) -> Optional[int]:
        return self.fruits[-1].serial if self.fruits else None


_BODY_SCHEMA = (
    ("pointer_hash", "digest"),
    ("pointer_number", "u64"),
    ("fruits_hash", "digest"),
    ("sign_hash", "digest"),
    ("uncle_hash", "digest"),
    ("bloom", "bytes"),
    ("difficulty", "u64"),
    ("fruit_difficulty", "u64"),
    ("number", "u64"),
    ("publickey", "bytes"),
    ("to_elect", "bool"),
    ("time", "u64"),
    ("extra", "bytes"),
)


def block_body_digest(block: SnailBlock) -> bytes:
    return digest(b"body" + encode_fields(_BODY_SCHEMA, [getattr(block, n) for n, _ in _BODY_SCHEMA]))


def fruits_hash(fruits: Sequence[Fruit]) -> bytes:
    return merkle_root([f.hash for f in fruits])


@lru_cache(maxsize=None)
def _genesis_for(hash_name: str) -> SnailBlock:
    block = SnailBlock(
        parent_hash=ZERO_DIGEST,
        uncle_hash=ZERO_DIGEST,
        coinbase="genesis",
        pointer_hash=ZERO_DIGEST,
        pointer_number=0,
        fruits_hash=ZERO_DIGEST,
        fast_hash=ZERO_DIGEST,
        fast_number=0,
        sign_hash=ZERO_DIGEST,
        bloom=b"",
        difficulty=0,
        fruit_difficulty=0,
        number=0,
        publickey=b"",
        to_elect=False,
        time=0,
        extra=b"",
        mix_digest=ZERO_DIGEST,
        nonce=0,
        fruits=(),
    )
    return replace(block, hash=digest(encode(block)))


def genesis_snail_block() -> SnailBlock:
    """chain[0]: all-zero fields, hashed with the active digest."""
    return _genesis_for(hash_name())

