"""Figure rendering for report commands.

Every figure goes through Agg straight to a file, with PNG metadata
stripped so repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def save_audit_figure(reports, path) -> None:
    """Accuracy and coverage bars, one group per heuristic.

    reports: iterable of objects with .heuristic, .accuracy, .coverage.
    """
    reports = list(reports)
    names = [r.heuristic for r in reports]
    xs = range(len(reports))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.8 * len(reports)), 3.2))
    ax.bar([x - 0.2 for x in xs], [100 * r.accuracy for r in reports], 0.4,
           label="accuracy", color="#4878d0")
    ax.bar([x + 0.2 for x in xs], [100 * r.coverage for r in reports], 0.4,
           label="coverage", color="#ee854a")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylabel("percent")
    ax.set_ylim(0, 100)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_drop_figure(labels, base_drops, random_drops, path) -> None:
    """Paired drop bars per cell; random side omitted by passing None."""
    xs = range(len(labels))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 3.4))
    if random_drops is None:
        ax.bar(list(xs), base_drops, 0.5, color="#4878d0")
    else:
        ax.bar([x - 0.2 for x in xs], base_drops, 0.4,
               label="base", color="#4878d0")
        ax.bar([x + 0.2 for x in xs], random_drops, 0.4,
               label="random", color="#d65f5f")
        ax.legend(frameon=False)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("% drop")
    ax.axhline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_metrics_figure(report, path) -> None:
    """Bar summary of one metric report (percent metrics only)."""
    items = [(k, v) for k, v in report.as_dict().items() if k != "mcc"]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(items)), 3.4))
    ax.bar([k for k, _ in items], [v for _, v in items], color="#4878d0")
    ax.set_ylabel("percent")
    ax.set_ylim(0, 100)
    ax.tick_params(axis="x", rotation=30)
    for tick in ax.get_xticklabels():
        tick.set_ha("right")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_prequential_figure(results: dict, path) -> None:
    """Cumulative online codelength per encoder vs the uniform code.

    results: {name: PrequentialResult}; all must share n and schedule.
    """
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    drew_uniform = False
    for name, res in results.items():
        cum = []
        total = 0.0
        for bits in res.block_bits:
            total += bits
            cum.append(total)
        ax.plot(res.boundaries, cum, marker="o", markersize=3, label=name)
        if not drew_uniform:
            per = res.block_bits[0] / res.boundaries[0]
            ax.plot(
                res.boundaries,
                [per * b for b in res.boundaries],
                linestyle="--",
                color="gray",
                label="uniform",
            )
            drew_uniform = True
    ax.set_xlabel("examples sent")
    ax.set_ylabel("cumulative bits")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
