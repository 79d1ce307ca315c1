"""Scenario configuration: one dataclass per section, validated at load time.

A scenario file is TOML with these sections (every key optional)::

    [run]        name, seed, horizon, checkpoint_every, hash
    [network]    nodes, hash_shares, d_min, d_max, opt_in, link_delays
    [snail]      block_interval, fruit_interval, attempts_per_tick, recency,
                 pointer_window, fruit_pointer_depth, tiebreak
    [truehash]   group_degree, epoch_length
    [committee]  csize, gsize, nu, window, elect_every, T_delta, fast_interval,
                 round_timeout, max_txs
    [workload]   clients, think_time, initial_balance, amount, gas_price, tau_bound
    [sharding]   enabled, C, shard_size, T_o, batch_timeout, txs, sectors
    [rewards]    alpha, beta, block_reward, base_reward, active_committees
    [adversary]  strategy, corrupt, nodes, target, term, tau, budget,
                 equivocate, ddos_duration, gamma
    [assertions] safety, liveness, election_agreement
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional


class ConfigError(ValueError):
    """Raised with every field-level problem found, one per line."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n" + "\n".join(f"  {p}" for p in self.problems))


@dataclass
class RunSection:
    name: str = "scenario"
    seed: int = 1
    horizon: int = 2000
    checkpoint_every: int = 100
    hash: str = "sha3_256"


@dataclass
class NetworkSection:
    nodes: int = 20
    hash_shares: list = field(default_factory=list)
    d_min: int = 1
    d_max: int = 3
    opt_in: list = field(default_factory=list)
    link_delays: dict = field(default_factory=dict)  # "src->dst" = ticks


@dataclass
class SnailSection:
    block_interval: int = 40
    fruit_interval: int = 1
    attempts_per_tick: int = 1
    recency: int = 17
    pointer_window: Optional[int] = None
    fruit_pointer_depth: int = 0
    tiebreak: str = "hash"


@dataclass
class TruehashSection:
    group_degree: int = 16
    epoch_length: int = 20


@dataclass
class CommitteeSection:
    csize: int = 7
    gsize: int = 1
    nu: int = 1
    window: int = 16
    elect_every: int = 10
    T_delta: int = 30
    fast_interval: int = 3
    round_timeout: int = 12
    max_txs: int = 64


@dataclass
class WorkloadSection:
    clients: int = 8
    think_time: int = 6
    initial_balance: int = 1_000_000
    amount: int = 5
    gas_price: int = 1
    tau_bound: int = 150


@dataclass
class ShardingSection:
    enabled: bool = False
    C: int = 2
    shard_size: int = 4
    T_o: int = 5
    batch_timeout: int = 20
    txs: int = 60
    sectors: int = 16


@dataclass
class RewardsSection:
    alpha: int = 4
    beta: str = "1/10"
    block_reward: int = 1000
    base_reward: int = 0
    active_committees: int = 1


@dataclass
class AdversarySection:
    strategy: str = "none"
    corrupt: int = 0
    nodes: list = field(default_factory=list)
    target: str = "committee"
    term: int = 0
    tau: int = 1
    budget: str = "1/3"
    equivocate: bool = False
    ddos_duration: int = 100
    gamma: float = 0.5


@dataclass
class AssertionsSection:
    safety: bool = True
    liveness: bool = True
    election_agreement: bool = True


SECTIONS = {
    "run": RunSection,
    "network": NetworkSection,
    "snail": SnailSection,
    "truehash": TruehashSection,
    "committee": CommitteeSection,
    "workload": WorkloadSection,
    "sharding": ShardingSection,
    "rewards": RewardsSection,
    "adversary": AdversarySection,
    "assertions": AssertionsSection,
}

STRATEGIES = ("none", "byzantine_vote", "silent", "leak_addresses", "withhold_blocks")
TARGETS = ("committee", "miners", "nodes")


@dataclass
class ScenarioConfig:
    run: RunSection = field(default_factory=RunSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    snail: SnailSection = field(default_factory=SnailSection)
    truehash: TruehashSection = field(default_factory=TruehashSection)
    committee: CommitteeSection = field(default_factory=CommitteeSection)
    workload: WorkloadSection = field(default_factory=WorkloadSection)
    sharding: ShardingSection = field(default_factory=ShardingSection)
    rewards: RewardsSection = field(default_factory=RewardsSection)
    adversary: AdversarySection = field(default_factory=AdversarySection)
    assertions: AssertionsSection = field(default_factory=AssertionsSection)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        problems = []
        sections = {}
        for name, value in data.items():
            if name not in SECTIONS:
                problems.append(f"unknown section [{name}]")
                continue
            if not isinstance(value, dict):
                problems.append(f"[{name}] must be a table")
                continue
            known = {f.name: f for f in dataclasses.fields(SECTIONS[name])}
            kwargs = {}
            for key, item in value.items():
                if key not in known:
                    problems.append(f"{name}.{key}: unknown key")
                    continue
                kwargs[key] = item
            sections[name] = SECTIONS[name](**kwargs)
        if problems:
            raise ConfigError(problems)
        cfg = cls(**sections)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {k: v for k, v in section.items() if v is not None}
        return out

    def replace(self, **overrides) -> "ScenarioConfig":
        """Copy with dotted overrides, e.g. ``replace(**{"run.seed": 3})``."""
        data = self.to_dict()
        for dotted, value in overrides.items():
            section, key = dotted.split(".", 1)
            data.setdefault(section, {})[key] = value
        return ScenarioConfig.from_dict(data)

    # -- derived values ----------------------------------------------
    @property
    def node_ids(self) -> list[str]:
        width = max(2, len(str(self.network.nodes - 1)))
        return [f"n{i:0{width}d}" for i in range(self.network.nodes)]

    @property
    def shares(self) -> list[Fraction]:
        if self.network.hash_shares:
            raw = [Fraction(str(x)) for x in self.network.hash_shares]
            total = sum(raw)
            return [x / total for x in raw]
        return [Fraction(1, self.network.nodes)] * self.network.nodes

    @property
    def budget(self) -> Fraction:
        return Fraction(str(self.adversary.budget))

    @property
    def beta(self) -> Fraction:
        return Fraction(str(self.rewards.beta))

    def validate(self) -> None:
        p = []
        r, n, s, t, c, w = self.run, self.network, self.snail, self.truehash, self.committee, self.workload
        if r.horizon < 1:
            p.append("run.horizon: must be >= 1")
        if r.checkpoint_every < 1:
            p.append("run.checkpoint_every: must be >= 1")
        if r.hash not in ("sha3_256", "blake2b"):
            p.append("run.hash: must be sha3_256 or blake2b")
        if n.nodes < 1:
            p.append("network.nodes: must be >= 1")
        if n.hash_shares and len(n.hash_shares) != n.nodes:
            p.append("network.hash_shares: need one share per node")
        if n.hash_shares and any(float(x) < 0 for x in n.hash_shares):
            p.append("network.hash_shares: shares must be non-negative")
        if n.hash_shares and sum(float(x) for x in n.hash_shares) <= 0:
            p.append("network.hash_shares: total share must be positive")
        if not 1 <= n.d_min <= n.d_max:
            p.append("network.d_min/d_max: need 1 <= d_min <= d_max")
        for link, ticks in n.link_delays.items():
            if "->" not in link or not isinstance(ticks, int) or ticks < 1:
                p.append(f"network.link_delays.{link}: expected \"src->dst\" = positive ticks")
        if s.block_interval < 1 or s.fruit_interval < 1 or s.attempts_per_tick < 1:
            p.append("snail: intervals and attempts_per_tick must be >= 1")
        if s.fruit_interval > s.block_interval:
            p.append("snail.fruit_interval: fruits must be easier than blocks")
        if s.recency < 1:
            p.append("snail.recency: must be >= 1")
        if s.pointer_window is not None and s.pointer_window < 0:
            p.append("snail.pointer_window: must be >= 0")
        if not 0 <= s.fruit_pointer_depth < s.recency:
            p.append("snail.fruit_pointer_depth: must lie in [0, recency)")
        if s.tiebreak not in ("hash", "pointer"):
            p.append("snail.tiebreak: must be hash or pointer")
        if t.group_degree < 1 or t.epoch_length < 1:
            p.append("truehash: group_degree and epoch_length must be >= 1")
        if c.csize < 4:
            p.append("committee.csize: must be >= 4")
        if c.csize > n.nodes:
            p.append("committee.csize: larger than the node count")
        if not 1 <= c.gsize < c.csize:
            p.append("committee.gsize: need 1 <= gsize < csize")
        if c.nu < 1 or c.window < 1:
            p.append("committee.nu/window: must be >= 1")
        if c.elect_every < 0:
            p.append("committee.elect_every: must be >= 0 (0 disables rotation)")
        if c.T_delta < 1 or c.fast_interval < 1 or c.round_timeout < 1:
            p.append("committee: T_delta, fast_interval and round_timeout must be >= 1")
        if c.max_txs < 0:
            p.append("committee.max_txs: must be >= 0")
        if w.clients < 0 or w.think_time < 1 or w.amount < 0 or w.tau_bound < 1:
            p.append("workload: clients >= 0, think_time >= 1, amount >= 0, tau_bound >= 1")
        sh = self.sharding
        if sh.C < 1 or sh.shard_size < 1 or sh.T_o < 1 or sh.txs < 0 or sh.sectors < 1:
            p.append("sharding: C, shard_size, T_o, sectors >= 1 and txs >= 0")
        rw = self.rewards
        if rw.alpha <= 1:
            p.append("rewards.alpha: must exceed 1")
        try:
            beta = Fraction(str(rw.beta))
            if not 0 <= beta <= 1:
                p.append("rewards.beta: must lie in [0, 1]")
        except (ValueError, ZeroDivisionError):
            p.append("rewards.beta: not a number")
        if rw.block_reward < 0 or rw.base_reward < 0 or rw.base_reward > rw.block_reward:
            p.append("rewards: need 0 <= base_reward <= block_reward")
        if rw.active_committees < 0:
            p.append("rewards.active_committees: must be >= 0")
        a = self.adversary
        if a.strategy not in STRATEGIES:
            p.append(f"adversary.strategy: one of {', '.join(STRATEGIES)}")
        if a.target not in TARGETS:
            p.append(f"adversary.target: one of {', '.join(TARGETS)}")
        if a.corrupt < 0 or a.tau < 0 or a.ddos_duration < 0 or a.term < 0:
            p.append("adversary: corrupt, tau, term and ddos_duration must be >= 0")
        if not 0 <= a.gamma <= 1:
            p.append("adversary.gamma: must lie in [0, 1]")
        try:
            budget = Fraction(str(a.budget))
            if not 0 <= budget <= 1:
                p.append("adversary.budget: must lie in [0, 1]")
        except (ValueError, ZeroDivisionError):
            p.append("adversary.budget: not a number")
        unknown = [x for x in a.nodes if x not in self.node_ids]
        if unknown:
            p.append(f"adversary.nodes: unknown ids {unknown}")
        if p:
            raise ConfigError(p)
