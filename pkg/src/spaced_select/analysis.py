"""Evaluation pipeline for arm comparisons.

preprocess -> per-pair empirical forgetting rates -> per-item normalisation
-> (review count, duration) bins -> pairwise Mann-Whitney U tests.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from itertools import groupby
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SpacedError
from .memory import SECONDS_PER_DAY, ReviewEvent, canonical_events

EPSILON = 0.01
EXACT_LIMIT = 20


@dataclass(frozen=True)
class ForgettingRecord:
    learner_id: str
    item_id: str
    arm: str
    n_hat: float
    n_reviews: int
    duration_days: float
    initial_rate: float
    n_hat_normalized: float | None = None


@dataclass(frozen=True, order=True)
class BinSpec:
    n_reviews: int
    duration_center: float
    duration_halfwidth: float

    def __post_init__(self):
        if not self.duration_halfwidth > 0:
            raise SpacedError("INVALID_ARGUMENT", "bin halfwidth must be > 0")

    @property
    def label(self) -> str:
        return f"reviews={self.n_reviews},T={self.duration_center:g}+-{self.duration_halfwidth:g}"

    def contains(self, record: ForgettingRecord) -> bool:
        return (
            record.n_reviews == self.n_reviews
            and abs(record.duration_days - self.duration_center) <= self.duration_halfwidth + 1e-12
        )


# duration windows of the published comparison figure, in days
FIGURE_WINDOWS = ((3.0, 0.8), (5.0, 1.2), (9.0, 2.2))


def figure_bins(review_counts: Iterable[int] = range(2, 9)) -> list[BinSpec]:
    return [BinSpec(k, c, h) for c, h in FIGURE_WINDOWS for k in review_counts]


def preprocess(events: Iterable[ReviewEvent], min_active_days: float = 2.0) -> list[ReviewEvent]:
    """Drop every event of learners active for less than ``min_active_days``."""
    events = list(events)
    span: dict[str, list[int]] = {}
    for ev in events:
        lo_hi = span.setdefault(ev.learner_id, [ev.ts, ev.ts])
        lo_hi[0] = min(lo_hi[0], ev.ts)
        lo_hi[1] = max(lo_hi[1], ev.ts)
    keep = {lid for lid, (lo, hi) in span.items() if (hi - lo) / SECONDS_PER_DAY >= min_active_days}
    return [ev for ev in events if ev.learner_id in keep]


def _clamped_rate(recall: int, interval_days: float, epsilon: float) -> float:
    m_hat = max(epsilon, min(1.0 - epsilon, recall))
    return -math.log(m_hat) / interval_days


def empirical_forgetting_rate(sequence: Sequence[tuple[int, int]], epsilon: float = EPSILON) -> float:
    """Rate implied by the outcome of the last review and the last interval.

    ``sequence`` is ``(ts_seconds, recall)`` pairs in time order.
    """
    if len(sequence) < 2:
        raise SpacedError("INSUFFICIENT_REVIEWS", "need at least two reviews")
    (t_prev, _), (t_last, r_last) = sequence[-2], sequence[-1]
    interval = (t_last - t_prev) / SECONDS_PER_DAY
    if interval <= 0:
        raise SpacedError("ZERO_INTERVAL", f"last interval {t_prev}->{t_last} is not positive")
    return _clamped_rate(r_last, interval, epsilon)


def initial_forgetting_rate(sequence: Sequence[tuple[int, int]], epsilon: float = EPSILON) -> float:
    """Same clamped estimator applied to the first interval."""
    return empirical_forgetting_rate(sequence[:2], epsilon)


def forgetting_records(
    events: Iterable[ReviewEvent], arm: str, epsilon: float = EPSILON, prefixes: bool = False
) -> list[ForgettingRecord]:
    """Empirical-rate records for every (learner, item) pair with two or more reviews.

    By default one record per pair, covering the whole sequence. With
    ``prefixes=True`` every prefix of length k >= 2 yields its own record
    (review count k, duration up to the k-th review, rate from the k-th
    interval), so long sequences also inform the short-duration bins.
    """
    out = []
    for (lid, item), group in groupby(canonical_events(events), key=lambda e: (e.learner_id, e.item_id)):
        seq = [(ev.ts, ev.recall) for ev in group]
        if len(seq) < 2:
            continue
        initial = initial_forgetting_rate(seq, epsilon)
        ends = range(2, len(seq) + 1) if prefixes else (len(seq),)
        for k in ends:
            out.append(
                ForgettingRecord(
                    learner_id=lid,
                    item_id=item,
                    arm=arm,
                    n_hat=empirical_forgetting_rate(seq[:k], epsilon),
                    n_reviews=k,
                    duration_days=(seq[k - 1][0] - seq[0][0]) / SECONDS_PER_DAY,
                    initial_rate=initial,
                )
            )
    return out


def normalize(
    records: Iterable[ForgettingRecord], min_learners_per_item: int = 5
) -> tuple[list[ForgettingRecord], list[str]]:
    """Divide each rate by its item's mean first-interval rate across all arms.

    Returns the normalised records and the sorted ids of items dropped for
    having fewer than ``min_learners_per_item`` learners.
    """
    by_item: dict[str, list[ForgettingRecord]] = defaultdict(list)
    for rec in records:
        by_item[rec.item_id].append(rec)
    kept, excluded = [], []
    for item in sorted(by_item):
        group = by_item[item]
        initial = {(r.arm, r.learner_id): r.initial_rate for r in group}
        if len(initial) < min_learners_per_item:
            excluded.append(item)
            continue
        normalizer = float(np.mean([initial[k] for k in sorted(initial)]))
        kept.extend(replace(r, n_hat_normalized=r.n_hat / normalizer) for r in group)
    return kept, excluded


def _check_bins(bins: Sequence[BinSpec]) -> list[BinSpec]:
    ordered = sorted(set(bins))
    for a, b in zip(ordered, ordered[1:]):
        if a.n_reviews != b.n_reviews:
            continue
        if (a.duration_center + a.duration_halfwidth) - (b.duration_center - b.duration_halfwidth) > 1e-9:
            raise SpacedError("INVALID_BINS", f"{a.label} overlaps {b.label}")
    return ordered


def bin_records(
    records: Iterable[ForgettingRecord], bins: Sequence[BinSpec]
) -> dict[BinSpec, dict[str, list[ForgettingRecord]]]:
    """Assign each record to the first bin (in sorted order) that contains it."""
    ordered = _check_bins(bins)
    by_count: dict[int, list[BinSpec]] = defaultdict(list)
    for b in ordered:
        by_count[b.n_reviews].append(b)
    out: dict[BinSpec, dict[str, list[ForgettingRecord]]] = {b: defaultdict(list) for b in ordered}
    for rec in records:
        for b in by_count.get(rec.n_reviews, ()):
            if b.contains(rec):
                out[b][rec.arm].append(rec)
                break
    return {b: dict(arms) for b, arms in out.items()}


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p: float
    exact: bool
    degenerate: bool = False

    def __iter__(self):
        return iter((self.u, self.p))


def midranks(values: Sequence[float]) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided(doubled_ranks: np.ndarray, n1: int, observed: int) -> float:
    """P(|S - E S| >= |s - E S|) for S the doubled rank sum of a random n1-subset.

    Dynamic programme over (subset size, sum); exact with ties because
    doubled midranks are integers.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros((n1 + 1, total + 1), dtype=object)
    counts[0, 0] = 1
    for r in doubled_ranks.astype(int):
        counts[1:, r:] = counts[1:, r:] + counts[:-1, : total + 1 - r]
    dist = counts[n1]
    sums = np.nonzero(dist)[0]
    # mean is n1 * total / N; compare on a common integer scale
    n = len(doubled_ranks)
    dev_obs = abs(observed * n - n1 * total)
    hits = sum(int(dist[s]) for s in sums if abs(int(s) * n - n1 * total) >= dev_obs)
    return min(1.0, hits / math.comb(n, n1))


def mann_whitney_u(x: Sequence[float], y: Sequence[float], exact_limit: int = EXACT_LIMIT) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test; ``u`` counts pairs with x above y (ties 1/2).

    Exact null distribution (ties included) when ``len(x) + len(y) <=
    exact_limit``; otherwise a tie-corrected normal approximation with
    continuity correction.
    """
    n1, n2 = len(x), len(y)
    if n1 < 1 or n2 < 1:
        raise SpacedError("INVALID_ARGUMENT", "both samples need at least one value")
    pooled = np.concatenate([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    ranks = midranks(pooled)
    r1 = float(ranks[:n1].sum())
    u = r1 - n1 * (n1 + 1) / 2.0
    if np.all(pooled == pooled[0]):
        return MannWhitneyResult(u, 1.0, exact=True, degenerate=True)
    n = n1 + n2
    if n <= exact_limit:
        doubled = np.rint(2 * ranks).astype(int)
        return MannWhitneyResult(u, _exact_two_sided(doubled, n1, int(round(2 * r1))), exact=True)
    _, tie_sizes = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_sizes**3 - tie_sizes)) / (n * (n - 1))
    sigma = math.sqrt(n1 * n2 / 12.0 * ((n + 1) - tie_term))
    z = max(abs(u - n1 * n2 / 2.0) - 0.5, 0.0) / sigma
    return MannWhitneyResult(u, min(1.0, math.erfc(z / math.sqrt(2.0))), exact=False)


@dataclass(frozen=True)
class ArmSummary:
    bin: BinSpec
    arm: str
    n: int
    median: float | None
    q25: float | None
    q75: float | None


@dataclass(frozen=True)
class PairTest:
    bin: BinSpec
    arm_a: str
    arm_b: str
    u: float | None
    p: float | None
    significant: bool
    status: str = "OK"


@dataclass
class ComparisonReport:
    summaries: list[ArmSummary] = field(default_factory=list)
    tests: list[PairTest] = field(default_factory=list)
    excluded_items: list[str] = field(default_factory=list)
    alpha: float = 0.05

    def summary(self, b: BinSpec, arm: str) -> ArmSummary:
        return next(s for s in self.summaries if s.bin == b and s.arm == arm)

    def test(self, b: BinSpec, arm_a: str, arm_b: str) -> PairTest:
        for t in self.tests:
            if t.bin == b and {t.arm_a, t.arm_b} == {arm_a, arm_b}:
                return t
        raise KeyError((b, arm_a, arm_b))

    def populated_bins(self, arms: Sequence[str] | None = None) -> list[BinSpec]:
        bins = sorted({s.bin for s in self.summaries})
        return [b for b in bins if all(self.summary(b, a).n > 0 for a in (arms or self.arms))]

    @property
    def arms(self) -> list[str]:
        return sorted({s.arm for s in self.summaries})


def compare_arms(
    logs: Mapping[str, Iterable[ReviewEvent]],
    bins: Sequence[BinSpec] | None = None,
    epsilon: float = EPSILON,
    min_active_days: float = 2.0,
    min_learners_per_item: int = 5,
    alpha: float = 0.05,
    prefixes: bool = True,
) -> ComparisonReport:
    if len(logs) < 2:
        raise SpacedError("INVALID_ARGUMENT", "need at least two arms to compare")
    bins = figure_bins() if bins is None else bins
    records: list[ForgettingRecord] = []
    for arm in sorted(logs):
        records.extend(forgetting_records(preprocess(logs[arm], min_active_days), arm, epsilon, prefixes))
    normed, excluded = normalize(records, min_learners_per_item)
    binned = bin_records(normed, bins)
    arms = sorted(logs)
    report = ComparisonReport(excluded_items=excluded, alpha=alpha)
    for b, per_arm in binned.items():
        values = {a: np.array([r.n_hat_normalized for r in per_arm.get(a, [])]) for a in arms}
        for a in arms:
            v = values[a]
            if v.size:
                q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
                report.summaries.append(ArmSummary(b, a, int(v.size), float(med), float(q25), float(q75)))
            else:
                report.summaries.append(ArmSummary(b, a, 0, None, None, None))
        for a, c in itertools.combinations(arms, 2):
            if values[a].size == 0 or values[c].size == 0:
                report.tests.append(PairTest(b, a, c, None, None, False, "NO_DATA"))
                continue
            res = mann_whitney_u(values[a], values[c])
            report.tests.append(PairTest(b, a, c, res.u, res.p, res.p < alpha, "DEGENERATE" if res.degenerate else "OK"))
    return report
