"""Writers for comparison reports: CSV tables and an optional quartile figure."""

from __future__ import annotations

import csv
from pathlib import Path

from .analysis import ComparisonReport


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_report_csv(path: Path | str, report: ComparisonReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_reviews", "duration_center", "duration_halfwidth", "arm", "n", "median", "q25", "q75"])
        for s in sorted(report.summaries, key=lambda s: (s.bin, s.arm)):
            w.writerow([s.bin.n_reviews, s.bin.duration_center, s.bin.duration_halfwidth, s.arm, s.n,
                        _fmt(s.median), _fmt(s.q25), _fmt(s.q75)])


def write_tests_csv(path: Path | str, report: ComparisonReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_reviews", "duration_center", "duration_halfwidth", "arm_a", "arm_b", "U", "p", "significant", "status"])
        for t in sorted(report.tests, key=lambda t: (t.bin, t.arm_a, t.arm_b)):
            w.writerow([t.bin.n_reviews, t.bin.duration_center, t.bin.duration_halfwidth, t.arm_a, t.arm_b,
                        _fmt(t.u), _fmt(t.p), int(t.significant), t.status])


def write_svg(path: Path | str, report: ComparisonReport) -> None:
    """One panel per duration window; a quartile box and median mark per arm and review count."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    windows = sorted({(s.bin.duration_center, s.bin.duration_halfwidth) for s in report.summaries})
    arms = report.arms
    fig, axes = plt.subplots(1, max(len(windows), 1), figsize=(4 * max(len(windows), 1), 3.5), squeeze=False)
    for ax, (center, half) in zip(axes[0], windows):
        rows = [s for s in report.summaries if (s.bin.duration_center, s.bin.duration_halfwidth) == (center, half)]
        counts = sorted({s.bin.n_reviews for s in rows})
        width = 0.8 / max(len(arms), 1)
        for j, arm in enumerate(arms):
            for k, count in enumerate(counts):
                s = next((r for r in rows if r.arm == arm and r.bin.n_reviews == count), None)
                if s is None or s.n == 0:
                    continue
                x = k + (j - (len(arms) - 1) / 2) * width
                ax.add_patch(plt.Rectangle((x - width / 2, s.q25), width, s.q75 - s.q25,
                                           color=f"C{j}", alpha=0.5, label=arm if k == 0 else None))
                ax.plot([x], [s.median], marker="x", color="k")
                sig = [t for t in report.tests if t.bin == s.bin and t.significant]
                if sig and j == 0:
                    ax.annotate("*", (k, s.q75), ha="center")
        ax.set_xticks(range(len(counts)), [str(c) for c in counts])
        ax.set_yscale("log")
        ax.set_xlabel("# reviews")
        ax.set_title(f"T = {center:g} +- {half:g} days")
    axes[0][0].set_ylabel("normalized empirical forgetting rate")
    axes[0][0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
