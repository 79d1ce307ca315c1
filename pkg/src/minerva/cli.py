"""Command line entry point.

    minerva run FILE... [--seed N] [--out DIR] [--parallel K] [--trace]
    minerva inspect CHAIN.jsonl [--scenario FILE] [--daylog FILE]
    minerva matrix CSIZE GSIZE SEED
    minerva scenarios
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError

log = logging.getLogger("minerva")


def _error_block(source, problems) -> list[str]:
    from .harness.runner import EXIT_CONFIG

    return [f"=== {source} ==="] + [f"error\t{p}" for p in problems] + [f"exit\t{EXIT_CONFIG}", "==="]


def _run_one(job: tuple) -> tuple[int, list[str]]:
    """Worker body. Each scenario runs in its own process because the active
    mining hash is module state."""
    source, seed, out, trace = job
    from .harness.runner import EXIT_CONFIG, run_scenario, summary_lines
    from .harness.scenario import load_scenario
    from .sim.adversary import BudgetExceeded

    try:
        cfg = load_scenario(source)
        if seed is not None:
            cfg = cfg.replace(**{"run.seed": seed})
        result = run_scenario(cfg, out, trace=trace)
    except ConfigError as exc:
        return EXIT_CONFIG, _error_block(source, exc.problems)
    except (BudgetExceeded, FileNotFoundError) as exc:
        return EXIT_CONFIG, _error_block(source, [str(exc)])
    return result.exit_code, summary_lines(cfg, result)


def cmd_run(args) -> int:
    jobs = []
    for source in args.scenario:
        out = None
        if args.out:
            out = Path(args.out)
            if len(args.scenario) > 1:
                out = out / Path(source).stem
        jobs.append((source, args.seed, out, args.trace))
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    for _, lines in results:
        print("\n".join(lines))
    return max(code for code, _ in results)


def cmd_inspect(args) -> int:
    from .fruitchain import InvalidChain, chain_difficulty, chain_last_serial, load_chain

    blocks = load_chain(args.chain)
    fruits = [f for b in blocks for f in b.fruits]
    print(f"blocks\t{len(blocks)}")
    print(f"height\t{blocks[-1].number if blocks else 0}")
    print(f"tip\t{blocks[-1].hash.hex() if blocks else ''}")
    print(f"fruits\t{len(fruits)}")
    print(f"last_serial\t{chain_last_serial(blocks)}")
    print(f"difficulty_sum\t{chain_difficulty(blocks)}")
    block_miners = Counter(b.coinbase for b in blocks[1:])
    fruit_miners = Counter(f.miner for f in fruits)
    for who in sorted(set(block_miners) | set(fruit_miners)):
        print(f"miner {who}\tblocks={block_miners[who]} fruits={fruit_miners[who]}")
    if not args.scenario:
        return 0
    from .bft import load_daily_log
    from .harness.scenario import load_scenario
    from .sim.network import World

    world = World(load_scenario(args.scenario))
    # fruits are only valid for fast blocks the committee certified
    daylog = Path(args.daylog) if args.daylog else Path(args.chain).with_name("daylog.jsonl")
    if daylog.exists():
        for block in load_daily_log(daylog):
            world.certified.add((block.serial, block.digest))
    else:
        print(f"warning\tno day log at {daylog}; fruit certification will fail", file=sys.stderr)
    try:
        world.rules.validate_chain(blocks)
    except InvalidChain as exc:
        print(f"valid\tFalse\t{exc}")
        return 1
    print("valid\tTrue")
    return 0


def matrix_seed(seed: int) -> bytes:
    return hashlib.sha3_256(f"matrix/{seed}".encode()).digest()


def cmd_matrix(args) -> int:
    from .channel import InfeasibleParams, check_matrix, generate_matrix, gsize_warning, is_strongly_connected

    warning = gsize_warning(args.csize, args.gsize)
    if warning:
        print(f"warning\t{warning}", file=sys.stderr)
    try:
        m = generate_matrix(matrix_seed(args.seed), args.csize, args.gsize)
    except InfeasibleParams as exc:
        print(f"error\t{exc}", file=sys.stderr)
        return 2
    print(m.to_text())
    problems = check_matrix(m.A, args.gsize)
    print(f"strongly_connected\t{is_strongly_connected(m.A)}")
    print(f"checks\t{'ok' if not problems else '; '.join(problems)}")
    return 0 if not problems else 1


def cmd_scenarios(args) -> int:
    from .harness.scenario import bundled_names

    for name in bundled_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minerva", description="Hybrid consensus simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run scenario files or bundled scenario names")
    run.add_argument("scenario", nargs="+")
    run.add_argument("--seed", type=int, help="override run.seed")
    run.add_argument("--out", help="artifact directory (one subdirectory per scenario when several)")
    run.add_argument("--parallel", type=int, default=1, metavar="K", help="run K scenarios at once")
    run.add_argument("--trace", action="store_true", help="also write trace.jsonl")
    run.set_defaults(func=cmd_run)

    ins = sub.add_parser("inspect", help="summarise a chain.jsonl dump")
    ins.add_argument("chain")
    ins.add_argument("--scenario", help="revalidate the chain under this scenario's rules")
    ins.add_argument("--daylog", help="fast blocks to certify (default: daylog.jsonl beside the chain)")
    ins.set_defaults(func=cmd_inspect)

    mat = sub.add_parser("matrix", help="print a gossip matrix")
    mat.add_argument("csize", type=int)
    mat.add_argument("gsize", type=int)
    mat.add_argument("seed", type=int)
    mat.set_defaults(func=cmd_matrix)

    sc = sub.add_parser("scenarios", help="list bundled scenarios")
    sc.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run" and args.parallel < 1:
        print("error\t--parallel must be >= 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
