"""Figures for a finished run, written next to the metrics."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (6.4, 3.6),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
})


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def chain_growth(rows: list, path: Path) -> Path:
    ticks = [r["tick"] for r in rows]
    fig, ax = plt.subplots()
    ax.plot(ticks, [r["fast_height"] for r in rows], label="fast chain height")
    ax.set_xlabel("tick")
    ax.set_ylabel("fast blocks")
    ax2 = ax.twinx()
    ax2.plot(ticks, [r["snail_height"] for r in rows], color="tab:orange", label="snail chain height")
    ax2.set_ylabel("snail blocks")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="upper left")
    ax.set_title("chain growth")
    return _save(fig, path)


def payments(rows: list, path: Path) -> Path:
    ticks = [r["tick"] for r in rows]
    fig, ax = plt.subplots()
    ax.plot(ticks, [r["payments_confirmed"] for r in rows], label="confirmed")
    ax.plot(ticks, [r["payments_pending"] for r in rows], label="pending")
    ax.set_xlabel("tick")
    ax.set_ylabel("payments")
    ax.legend()
    ax.set_title("client payments")
    return _save(fig, path)


def committee_quality(q_fast: list, path: Path) -> Path:
    fig, ax = plt.subplots()
    terms = [q["term"] for q in q_fast]
    ax.bar([str(t) for t in terms], [q["q"] for q in q_fast], color="tab:green")
    ax.axhline(2 / 3, color="grey", linestyle="--", linewidth=1, label="2/3")
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("committee term")
    ax.set_ylabel("honest fraction")
    ax.legend()
    ax.set_title("committee quality")
    return _save(fig, path)


def render_all(out: Path, rows: list, q_fast: list) -> list[Path]:
    figdir = Path(out) / "figures"
    figdir.mkdir(parents=True, exist_ok=True)
    if not rows:
        return []
    return [
        chain_growth(rows, figdir / "chain_growth.png"),
        payments(rows, figdir / "payments.png"),
        committee_quality(q_fast, figdir / "committee_quality.png"),
    ]
