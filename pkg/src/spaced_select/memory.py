"""Forgetting-curve memory models and half-life-regression rate updates."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import DegenerateRateWarning, SpacedError

SECONDS_PER_DAY = 86400
DEFAULT_SESSION_GAP = 300


class ModelKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    POWER_LAW = "power_law"

    @classmethod
    def parse(cls, value: "ModelKind | str") -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise SpacedError("INVALID_ARGUMENT", f"unknown model kind {value!r}") from None


@dataclass(frozen=True)
class ReviewEvent:
    learner_id: str
    item_id: str
    ts: int
    recall: int

    def __post_init__(self):
        if self.ts < 0:
            raise SpacedError("INVALID_ARGUMENT", f"negative timestamp {self.ts}")
        if self.recall not in (0, 1):
            raise SpacedError("INVALID_ARGUMENT", f"recall must be 0 or 1, got {self.recall!r}")


@dataclass(frozen=True)
class StudySession:
    learner_id: str
    start_ts: int
    items: tuple[str, ...]
    recalls: tuple[int, ...]
    end_ts: int | None = None

    def __post_init__(self):
        if self.end_ts is None:
            object.__setattr__(self, "end_ts", self.start_ts)
        if self.end_ts < self.start_ts:
            raise SpacedError("INVALID_ARGUMENT", "session ends before it starts")
        if not self.items:
            raise SpacedError("INVALID_ARGUMENT", "empty session")
        if len(self.items) != len(self.recalls):
            raise SpacedError("INVALID_ARGUMENT", "items and recalls differ in length")
        if len(set(self.items)) != len(self.items):
            raise SpacedError("INVALID_ARGUMENT", "duplicate item within a session")


@dataclass(frozen=True)
class MemoryState:
    item_id: str
    n_correct: int = 0
    n_incorrect: int = 0
    last_review_ts: int | None = None

    def __post_init__(self):
        if self.n_correct < 0 or self.n_incorrect < 0:
            raise SpacedError("INVALID_ARGUMENT", "negative review count")
        seen = self.n_correct + self.n_incorrect
        if self.last_review_ts is None and seen:
            raise SpacedError("INVALID_ARGUMENT", "counts without a last review time")
        if self.last_review_ts is not None and not seen:
            raise SpacedError("INVALID_ARGUMENT", "last review time without counts")


@dataclass(frozen=True)
class ModelParams:
    kind: ModelKind
    alpha: float
    beta: float
    initial_rates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if not 0.0 <= self.alpha <= 1.0:
            raise SpacedError("INVALID_ARGUMENT", f"alpha={self.alpha} outside [0, 1]")
        if not self.beta >= 0.0:
            raise SpacedError("INVALID_ARGUMENT", f"beta={self.beta} must be >= 0")
        for item, rate in self.initial_rates.items():
            if not (rate > 0.0 and math.isfinite(rate)):
                raise SpacedError("INVALID_ARGUMENT", f"initial rate of {item!r} must be > 0")

    @property
    def items(self) -> list[str]:
        return sorted(self.initial_rates)


def forgetting_rate(state: MemoryState, params: ModelParams) -> float:
    """Current forgetting rate (1/day) of ``state.item_id``.

    Every success multiplies the item's initial rate by ``1 - alpha`` and every
    failure by ``1 + beta``.
    """
    try:
        n0 = params.initial_rates[state.item_id]
    except KeyError:
        raise SpacedError("UNKNOWN_ITEM", repr(state.item_id)) from None
    rate = n0 * (1.0 - params.alpha) ** state.n_correct * (1.0 + params.beta) ** state.n_incorrect
    if rate == 0.0:
        warnings.warn(
            f"forgetting rate of {state.item_id!r} is zero; recall pinned to 1",
            DegenerateRateWarning,
            stacklevel=2,
        )
    return rate


def recall_probability(n: float, delta: float, kind: ModelKind | str = ModelKind.EXPONENTIAL) -> float:
    """Probability of recall ``delta`` days after the last review at rate ``n``."""
    if n < 0 or delta < 0:
        raise SpacedError("INVALID_ARGUMENT", f"n={n}, delta={delta} must be nonnegative")
    if ModelKind.parse(kind) is ModelKind.EXPONENTIAL:
        return math.exp(-n * delta)
    return math.exp(-n * math.log1p(delta))


def halflife(n: float, kind: ModelKind | str = ModelKind.EXPONENTIAL) -> float:
    """Gap (days) at which recall probability drops to one half."""
    if n <= 0:
        return math.inf
    if ModelKind.parse(kind) is ModelKind.EXPONENTIAL:
        return math.log(2.0) / n
    return math.expm1(math.log(2.0) / n)


def update_on_review(state: MemoryState, recall: int, ts: int) -> MemoryState:
    if state.last_review_ts is not None and ts < state.last_review_ts:
        raise SpacedError(
            "OUT_OF_ORDER_EVENT",
            f"review at {ts} precedes last review at {state.last_review_ts}",
        )
    if recall == 1:
        return replace(state, n_correct=state.n_correct + 1, last_review_ts=ts)
    if recall == 0:
        return replace(state, n_incorrect=state.n_incorrect + 1, last_review_ts=ts)
    raise SpacedError("INVALID_ARGUMENT", f"recall must be 0 or 1, got {recall!r}")


def replay(events: Iterable[ReviewEvent], states: Mapping[str, MemoryState] | None = None) -> dict[str, MemoryState]:
    """Fold a single learner's events into per-item memory states."""
    out = dict(states or {})
    for ev in events:
        state = out.get(ev.item_id) or MemoryState(ev.item_id)
        out[ev.item_id] = update_on_review(state, ev.recall, ev.ts)
    return out


def canonical_events(events: Iterable[ReviewEvent]) -> list[ReviewEvent]:
    """Sort by (learner, item, ts) and drop repeated (learner, item, ts) keys.

    The sort is stable, so among duplicates the first one in input order wins.
    """
    ordered = sorted(events, key=lambda e: (e.learner_id, e.item_id, e.ts))
    out: list[ReviewEvent] = []
    last_key = None
    for ev in ordered:
        key = (ev.learner_id, ev.item_id, ev.ts)
        if key != last_key:
            out.append(ev)
            last_key = key
    return out


def sessionize(events: Sequence[ReviewEvent], gap_seconds: int = DEFAULT_SESSION_GAP) -> list[StudySession]:
    """Split one learner's time-ordered events into study sessions.

    A gap of ``gap_seconds`` or more between consecutive events starts a new
    session. An item repeated inside a session keeps only its first answer.
    """
    sessions: list[StudySession] = []
    if not events:
        return sessions
    learners = {ev.learner_id for ev in events}
    if len(learners) > 1:
        raise SpacedError("INVALID_ARGUMENT", "sessionize expects a single learner")

    def flush(start, items, recalls):
        sessions.append(StudySession(events[0].learner_id, start, tuple(items), tuple(recalls), prev_ts))

    prev_ts = None
    start = events[0].ts
    items: list[str] = []
    recalls: list[int] = []
    for ev in events:
        if prev_ts is not None:
            if ev.ts < prev_ts:
                raise SpacedError("UNSORTED_INPUT", f"ts {ev.ts} after {prev_ts}")
            if ev.ts - prev_ts >= gap_seconds:
                flush(start, items, recalls)
                start, items, recalls = ev.ts, [], []
        if ev.item_id not in items:
            items.append(ev.item_id)
            recalls.append(ev.recall)
        prev_ts = ev.ts
    flush(start, items, recalls)
    return sessions


def resegment(sessions: Sequence[StudySession], gap_seconds: int = DEFAULT_SESSION_GAP) -> list[StudySession]:
    """Merge consecutive sessions separated by less than ``gap_seconds``.

    A no-op on the output of :func:`sessionize` with the same gap.
    """
    out: list[StudySession] = []
    for sess in sessions:
        if out and sess.start_ts - out[-1].end_ts < gap_seconds:
            prev = out[-1]
            items, recalls = list(prev.items), list(prev.recalls)
            for item, r in zip(sess.items, sess.recalls):
                if item not in items:
                    items.append(item)
                    recalls.append(r)
            out[-1] = StudySession(prev.learner_id, prev.start_ts, tuple(items), tuple(recalls), sess.end_ts)
        else:
            out.append(sess)
    return out


def recall_array(n, delta, kind: ModelKind | str = ModelKind.EXPONENTIAL):
    """Vectorised :func:`recall_probability` for numpy inputs."""
    import numpy as np

    n = np.asarray(n, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if ModelKind.parse(kind) is ModelKind.EXPONENTIAL:
        return np.exp(-n * delta)
    return np.exp(-n * np.log1p(delta))
