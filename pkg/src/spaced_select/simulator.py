"""Desk-scale re-run of the three-arm trial with simulated learners.

Each learner has a private random stream derived from ``(seed, learner
index)``, so the output does not depend on how learners are scheduled over
worker processes. The same index gets the same stream in every arm, which
gives the arms common session times (common random numbers).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import SpacedError
from .memory import SECONDS_PER_DAY, MemoryState, ModelKind, ModelParams, ReviewEvent, recall_array, recall_probability
from .policies import DifficultyCursor, PolicyKind, PolicySpec, truncate_by_priority

log = logging.getLogger(__name__)

DEFAULT_ARMS = (
    PolicySpec(PolicyKind.SELECT, 10, q=1.0),
    PolicySpec(PolicyKind.SELECT, 10, q=2.0),
    PolicySpec(PolicyKind.SELECT, 10, q=4.0),
    PolicySpec(PolicyKind.DIFFICULTY, 10),
    PolicySpec(PolicyKind.RANDOM, 10),
)


@dataclass(frozen=True)
class SimConfig:
    n_learners: int = 100
    n_items: int = 100
    horizon_days: float = 30.0
    mean_sessions_per_day: float = 1.0
    session_size: int = 10
    ground_truth: ModelParams = field(
        default_factory=lambda: ModelParams(ModelKind.EXPONENTIAL, 0.4, 0.6, {})
    )
    arms: tuple[PolicySpec, ...] = DEFAULT_ARMS
    seed: int = 0
    scheduler: ModelParams | None = None
    review_seconds: int = 10
    workers: int = 1
    rate_median: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if self.n_learners < 1 or self.n_items < 1:
            raise SpacedError("INVALID_ARGUMENT", "need at least one learner and one item")
        if not self.horizon_days > 0:
            raise SpacedError("INVALID_ARGUMENT", "horizon_days must be > 0")
        if not self.mean_sessions_per_day > 0:
            raise SpacedError("INVALID_ARGUMENT", "mean_sessions_per_day must be > 0")
        if self.session_size < 1:
            raise SpacedError("INVALID_ARGUMENT", "session_size must be >= 1")
        if not self.rate_median > 0:
            raise SpacedError("INVALID_ARGUMENT", "rate_median must be > 0")
        if not self.arms:
            raise SpacedError("INVALID_ARGUMENT", "at least one arm is required")
        labels = [a.label for a in self.arms]
        if len(set(labels)) != len(labels):
            raise SpacedError("INVALID_ARGUMENT", f"duplicate arm labels {labels}")
        if self.session_size * self.review_seconds >= self.horizon_days * SECONDS_PER_DAY:
            raise SpacedError("INVALID_ARGUMENT", "a single session does not fit in the horizon")


@dataclass
class SimResult:
    events: dict[str, list[ReviewEvent]]
    session_counts: dict[str, int]
    audit: dict
    truth: ModelParams


def item_ids(n_items: int) -> list[str]:
    width = max(3, len(str(n_items - 1)))
    return [f"q{k:0{width}d}" for k in range(n_items)]


def resolve_truth(cfg: SimConfig) -> ModelParams:
    """Ground truth with per-item initial rates filled in when absent.

    Missing rates are drawn log-normal with median ``cfg.rate_median`` and
    log-scale 0.5 from a stream reserved for this purpose.
    """
    gt = cfg.ground_truth
    if gt.initial_rates:
        if len(gt.initial_rates) < cfg.n_items:
            raise SpacedError("INVALID_ARGUMENT", "ground truth has fewer items than n_items")
        items = sorted(gt.initial_rates)[: cfg.n_items]
        rates = {i: gt.initial_rates[i] for i in items}
    else:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0xD1FF,)))
        draws = rng.lognormal(math.log(cfg.rate_median), 0.5, cfg.n_items)
        rates = dict(zip(item_ids(cfg.n_items), map(float, draws)))
    return ModelParams(gt.kind, gt.alpha, gt.beta, rates)


def learner_rng(seed: int, learner_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(learner_index,)))


def session_times(rng: np.random.Generator, rate_per_day: float, horizon_s: float) -> np.ndarray:
    """Homogeneous Poisson arrivals on ``[0, horizon_s)`` in seconds."""
    rate_s = rate_per_day / SECONDS_PER_DAY
    count = rng.poisson(rate_s * horizon_s)
    return np.sort(rng.uniform(0.0, horizon_s, count))


def ground_truth_recall(state: MemoryState, ground_truth: ModelParams, delta: float) -> float:
    from .memory import forgetting_rate

    return recall_probability(forgetting_rate(state, ground_truth), delta, ground_truth.kind)


def _simulate_learner(args) -> tuple[list[tuple], int]:
    cfg, spec, truth, sched, items, learner_index, learner_id = args
    rng = learner_rng(cfg.seed, learner_index)
    k = len(items)
    horizon_s = cfg.horizon_days * SECONDS_PER_DAY
    budget = min(cfg.session_size, k)
    starts = session_times(rng, cfg.mean_sessions_per_day, horizon_s - budget * cfg.review_seconds)

    n0_true = np.array([truth.initial_rates[i] for i in items])
    n0_sched = np.array([sched.initial_rates[i] for i in items])
    correct = np.zeros(k)
    incorrect = np.zeros(k)
    last = np.full(k, -1.0)
    cursor = DifficultyCursor.from_params(sched, items) if spec.kind is PolicyKind.DIFFICULTY else None
    position = {item: j for j, item in enumerate(items)}
    rows: list[tuple] = []
    prev_end = -1

    for start in starts:
        now = max(int(start), prev_end + 1)
        seen = last >= 0
        delta = np.where(seen, (now - last) / SECONDS_PER_DAY, 0.0)
        if spec.kind is PolicyKind.SELECT:
            n_s = n0_sched * (1.0 - sched.alpha) ** correct * (1.0 + sched.beta) ** incorrect
            m_s = np.where(seen, recall_array(n_s, delta, sched.kind), 0.0)
            p = (1.0 - m_s) / np.sqrt(spec.q)
            drawn = rng.random(k) < p
            chosen = truncate_by_priority(p, drawn, budget, rng)
        elif spec.kind is PolicyKind.DIFFICULTY:
            take = [cursor.ordering[(cursor.position + j) % k] for j in range(budget)]
            cursor = DifficultyCursor(cursor.ordering, (cursor.position + budget) % k)
            chosen = np.array([position[i] for i in take])
        else:
            chosen = rng.choice(k, size=budget, replace=False)

        n_t = n0_true[chosen] * (1.0 - truth.alpha) ** correct[chosen] * (1.0 + truth.beta) ** incorrect[chosen]
        m_t = np.where(seen[chosen], recall_array(n_t, delta[chosen], truth.kind), 0.0)
        recalled = rng.random(len(chosen)) < m_t
        for slot, (j, r) in enumerate(zip(chosen, recalled)):
            ts = now + slot * cfg.review_seconds
            rows.append((learner_id, items[j], ts, int(r)))
            last[j] = ts
        correct[chosen] += recalled
        incorrect[chosen] += ~recalled
        prev_end = now + (len(chosen) - 1) * cfg.review_seconds
    return rows, len(starts)


def run(cfg: SimConfig) -> SimResult:
    """Simulate every arm of ``cfg`` and return merged, canonically sorted logs."""
    truth = resolve_truth(cfg)
    sched = cfg.scheduler or truth
    items = sorted(truth.initial_rates)
    missing = [i for i in items if i not in sched.initial_rates]
    if missing:
        raise SpacedError("UNKNOWN_ITEM", f"scheduler lacks rates for {missing[:3]}")
    width = len(str(cfg.n_learners - 1))
    jobs = []
    for spec in cfg.arms:
        spec = PolicySpec(spec.kind, cfg.session_size, spec.q, spec.seed)
        for li in range(cfg.n_learners):
            jobs.append((cfg, spec, truth, sched, items, li, f"{spec.label}-{li:0{width}d}"))

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(_simulate_learner, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        outputs = [_simulate_learner(job) for job in jobs]

    events: dict[str, list[ReviewEvent]] = {}
    counts: dict[str, int] = {}
    per_arm = cfg.n_learners
    for a, spec in enumerate(cfg.arms):
        label = spec.label
        rows = [row for rows, _ in outputs[a * per_arm:(a + 1) * per_arm] for row in rows]
        rows.sort(key=lambda r: (r[0], r[2], r[1]))
        events[label] = [ReviewEvent(*row) for row in rows]
        counts[label] = sum(n for _, n in outputs[a * per_arm:(a + 1) * per_arm])
    audit = {
        "master_seed": cfg.seed,
        "learner_streams": "SeedSequence(seed, spawn_key=(learner_index,))",
        "truth_rates_stream": "SeedSequence(seed, spawn_key=(0xD1FF,))" if not cfg.ground_truth.initial_rates else None,
        "n_learners_per_arm": cfg.n_learners,
    }
    log.info("simulated %s", {k: len(v) for k, v in events.items()})
    return SimResult(events, counts, audit, truth)


def synthetic_review_log(
    truth: ModelParams,
    n_learners: int,
    reviews_per_item: int,
    mean_gap_days: float = 1.0,
    seed: int = 0,
) -> list[ReviewEvent]:
    """Every learner reviews every item ``reviews_per_item`` times.

    Gaps between reviews of one item are exponential with mean
    ``mean_gap_days``; outcomes follow the ground-truth model. Intended for
    parameter-recovery checks of the fitting code.
    """
    items = sorted(truth.initial_rates)
    n0 = np.array([truth.initial_rates[i] for i in items])
    out: list[ReviewEvent] = []
    width = len(str(n_learners - 1))
    for li in range(n_learners):
        rng = learner_rng(seed, li)
        gaps = rng.exponential(mean_gap_days * SECONDS_PER_DAY, (reviews_per_item, len(items)))
        gaps = np.maximum(gaps.astype(np.int64), 1)
        gaps[0] = 0
        ts = np.cumsum(gaps, axis=0)
        correct = np.zeros(len(items))
        incorrect = np.zeros(len(items))
        lid = f"learner-{li:0{width}d}"
        for step in range(reviews_per_item):
            n = n0 * (1.0 - truth.alpha) ** correct * (1.0 + truth.beta) ** incorrect
            if step == 0:
                m = np.zeros(len(items))
            else:
                m = recall_array(n, gaps[step] / SECONDS_PER_DAY, truth.kind)
            recalled = rng.random(len(items)) < m
            correct += recalled
            incorrect += ~recalled
            out.extend(ReviewEvent(lid, item, int(t), int(r)) for item, t, r in zip(items, ts[step], recalled))
    return out
