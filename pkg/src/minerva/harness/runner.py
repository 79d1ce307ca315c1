"""Run one scenario end to end and write its artifacts.

Output directory layout::

    metrics.json      report, assertion verdicts and reward settlement
    timeseries.csv    one row per checkpoint
    chain.jsonl       reference node's snailchain, one block per line
    daylog.jsonl      reference node's committed fast blocks, tagged by term
    elections.jsonl   one committee election per line
    trace.jsonl       per-delivery trace (only with trace=True)
    figures/*.png
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..bft import export_daily_log
from ..fruitchain import dump_chain
from ..sim.metrics import MetricsReport, measure
from ..sim.network import Simulation
from .rewards import settle_run
from .sharded import run_sharded

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2

TIMESERIES_FIELDS = ("tick", "snail_height", "fast_height", "fruits", "term",
                     "payments_confirmed", "payments_pending", "fork_depth", "fast_divergences")


@dataclass
class RunResult:
    report: MetricsReport
    assertions: dict
    exit_code: int
    out: Optional[Path] = None
    files: list = field(default_factory=list)
    sim: object = None


def check_assertions(cfg, report: MetricsReport) -> dict:
    """Verdict per enabled assertion; True means it held."""
    a = cfg.assertions
    out = {}
    if a.safety:
        out["safety"] = report.consistency_ok
    if a.liveness:
        out["liveness"] = report.liveness_ok
    if a.election_agreement:
        out["election_agreement"] = report.election_agreement
        out["truehash_agreement"] = report.truehash_agreement
    out["conservation"] = bool(report.rewards.get("conserved", False))
    if report.sharding:
        out["sharding_serializable"] = report.sharding["serializable"]
    return out


def metrics_document(cfg, report: MetricsReport, assertions: dict) -> str:
    doc = {"config": cfg.to_dict(), "metrics": report.to_json(), "assertions": assertions,
           "passed": all(assertions.values())}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def simulate(cfg, trace: bool = False) -> tuple[Simulation, MetricsReport]:
    sim = Simulation(cfg, trace=trace).run()
    report = measure(sim)
    report.rewards = settle_run(sim, cfg)
    if cfg.sharding.enabled:
        report.sharding = run_sharded(cfg)
    return sim, report


def run_scenario(cfg, out=None, trace: bool = False, figures: bool = True) -> RunResult:
    sim, report = simulate(cfg, trace)
    assertions = check_assertions(cfg, report)
    code = EXIT_OK if all(assertions.values()) else EXIT_ASSERTION
    result = RunResult(report, assertions, code, sim=sim)
    if out is None:
        return result
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result.out = out
    files = result.files
    (out / "metrics.json").write_text(metrics_document(cfg, report, assertions))
    files.append(out / "metrics.json")
    with open(out / "timeseries.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMESERIES_FIELDS)
        writer.writeheader()
        writer.writerows(sim.timeseries)
    files.append(out / "timeseries.csv")
    ref = sim.reference()
    dump_chain(ref.view.blocks, out / "chain.jsonl")
    files.append(out / "chain.jsonl")
    with open(out / "daylog.jsonl", "w") as fh:
        for term in ref.terms:
            export_daily_log(term.term_id, term.daily_log, fh)
    files.append(out / "daylog.jsonl")
    with open(out / "elections.jsonl", "w") as fh:
        for record in ref.records:
            fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
    files.append(out / "elections.jsonl")
    if trace:
        with open(out / "trace.jsonl", "w") as fh:
            for row in sim.trace:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        files.append(out / "trace.jsonl")
    if figures:
        from .plots import render_all
        files.extend(render_all(out, sim.timeseries, report.Q_fast))
    return result


def summary_lines(cfg, result: RunResult) -> list[str]:
    """Delimited key/value block printed by the CLI."""
    r = result.report
    tau = "inf" if r.liveness_tau is None else str(r.liveness_tau)
    lines = [
        f"=== {cfg.run.name} seed={cfg.run.seed} ===",
        f"horizon\t{r.horizon}",
        f"fast_height\t{r.fast_height}",
        f"snail_height\t{r.snail_height}",
        f"terms\t{r.terms}",
        f"Q_fast_min\t{min(q['q'] for q in r.Q_fast):.4f}",
        f"Q_snail\t{r.Q_snail:.4f}",
        f"consistency_ok\t{r.consistency_ok}",
        f"fast_divergences\t{r.fast_divergences}",
        f"common_prefix_depth\t{r.common_prefix_depth}",
        f"liveness_tau\t{tau}",
        f"payments\t{r.payments_confirmed}/{r.payments_eligible}",
        f"throughput\t{r.throughput}",
        f"conserved\t{r.rewards.get('conserved')}",
    ]
    for key, value in r.sharding.items():
        lines.append(f"sharding_{key}\t{value}")
    for name, ok in result.assertions.items():
        lines.append(f"assert {name}\t{'pass' if ok else 'FAIL'}")
    lines.append(f"exit\t{result.exit_code}")
    if result.out is not None:
        lines.append(f"artifacts\t{result.out}")
    lines.append("=" * 3)
    return lines
