"""Sharded execution workload run alongside a scenario when
``[sharding] enabled = true``."""

from __future__ import annotations

import random

from ..sharding import (ShardingParams, ShardSystem, TxState, collect_round, primary_collect,
                        random_programs, run_interleaved, write_value)


def replay_matches(programs, txs, initial: dict, system: ShardSystem) -> bool:
    """Re-run the committed programs one at a time in cts order and compare
    what each one read, and the final sector values, with the concurrent run."""
    state = dict(initial)
    committed = sorted((t for t in txs if t.state is TxState.COMMITTED), key=lambda t: (t.cts, t.id))
    for tx in committed:
        prog = programs[tx.id - 1]
        local: dict = {}
        observed = []
        for step, (kind, addr) in enumerate(prog.ops):
            if kind == "r":
                observed.append(local.get(addr, state.get(addr)))
            else:
                local[addr] = write_value(tx.id, step, observed)
        if observed != tx.observed:
            return False
        state.update(local)
    for addr, value in state.items():
        if system.shard_of(addr).sector(addr).value != value:
            return False
    return True


def run_sharded(cfg) -> dict:
    sh = cfg.sharding
    rng = random.Random(f"sharding/{cfg.run.seed}")
    params = ShardingParams(C=sh.C, shard_size=sh.shard_size, T_o=sh.T_o,
                            batch_timeout=sh.batch_timeout, address_space=sh.C * 64)
    addrs = sorted(rng.sample(range(params.address_space), min(sh.sectors, params.address_space)))
    initial = {a: ("init", a) for a in addrs}
    system = ShardSystem(params, initial, seed=cfg.run.seed)
    programs = random_programs(rng, sh.txs, addrs, sh.C)
    txs = run_interleaved(system, programs, rng)
    log = primary_collect([collect_round(system)], params)
    committed = sum(1 for t in txs if t.state is TxState.COMMITTED)
    return {
        "txs": len(txs),
        "committed": committed,
        "aborted": len(txs) - committed,
        "day_log": len(log.entries),
        "filtered": len(log.filtered),
        "invalid_batches": len(log.invalid_batches),
        "messages": len(system.messages),
        "serializable": replay_matches(programs, txs, initial, system),
    }
