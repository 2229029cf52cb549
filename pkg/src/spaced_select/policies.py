"""Session construction for the three trial arms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .control import ControlConfig, select_probabilities
from .errors import SpacedError
from .memory import MemoryState, ModelParams


class PolicyKind(str, enum.Enum):
    SELECT = "select"
    DIFFICULTY = "difficulty"
    RANDOM = "random"

    @classmethod
    def parse(cls, value: "PolicyKind | str") -> "PolicyKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise SpacedError("INVALID_ARGUMENT", f"unknown policy {value!r}") from None


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    session_size: int
    q: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind.parse(self.kind))
        if self.session_size < 1:
            raise SpacedError("INVALID_ARGUMENT", "session_size must be >= 1")
        if self.kind is PolicyKind.SELECT:
            if self.q is None:
                object.__setattr__(self, "q", 1.0)
            ControlConfig(self.q)
        elif self.q is not None:
            raise SpacedError("INVALID_ARGUMENT", f"q only applies to the select policy, not {self.kind.value}")

    @property
    def label(self) -> str:
        if self.kind is PolicyKind.SELECT and self.q != 1.0:
            return f"select_q{self.q:g}"
        return self.kind.value


@dataclass(frozen=True)
class DifficultyCursor:
    ordering: tuple[str, ...]
    position: int = 0

    def __post_init__(self):
        if not self.ordering:
            raise SpacedError("EMPTY_POOL", "difficulty ordering is empty")
        if len(set(self.ordering)) != len(self.ordering):
            raise SpacedError("INVALID_ARGUMENT", "difficulty ordering repeats an item")
        if not 0 <= self.position < len(self.ordering):
            raise SpacedError("INVALID_ARGUMENT", f"cursor position {self.position} out of range")

    @classmethod
    def from_params(cls, params: ModelParams, items: Sequence[str] | None = None) -> "DifficultyCursor":
        """Easiest (lowest initial forgetting rate) first; ties by item id."""
        pool = params.initial_rates if items is None else {i: params.initial_rates[i] for i in items}
        return cls(tuple(sorted(pool, key=lambda i: (pool[i], i))))


def truncate_by_priority(p: np.ndarray, drawn: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of a SELECT session given per-item probabilities and Bernoulli draws.

    Keeps at most ``size`` drawn items with the highest probability; when
    nothing was drawn, falls back to the single most probable item. Ties are
    broken by ``rng``. Result is ordered by decreasing probability.
    """
    tiebreak = rng.random(len(p))
    candidates = np.flatnonzero(drawn)
    if candidates.size == 0:
        candidates = np.arange(len(p))
        size = 1
    order = np.lexsort((tiebreak[candidates], -p[candidates]))
    return candidates[order[:size]]


def build_session_select(
    states: Sequence[MemoryState],
    params: ModelParams,
    spec: PolicySpec,
    now_ts: int,
    rng: np.random.Generator,
) -> list[str]:
    if spec.kind is not PolicyKind.SELECT:
        raise SpacedError("INVALID_ARGUMENT", "spec is not a select policy")
    if not states:
        raise SpacedError("EMPTY_POOL", "no items to choose from")
    p = select_probabilities(states, params, ControlConfig(spec.q), now_ts)
    drawn = rng.random(len(p)) < p
    idx = truncate_by_priority(p, drawn, spec.session_size, rng)
    return [states[k].item_id for k in idx]


def build_session_difficulty(cursor: DifficultyCursor, session_size: int) -> tuple[list[str], DifficultyCursor]:
    if session_size < 1:
        raise SpacedError("INVALID_ARGUMENT", "session_size must be >= 1")
    total = len(cursor.ordering)
    take = min(session_size, total)
    items = [cursor.ordering[(cursor.position + k) % total] for k in range(take)]
    return items, replace(cursor, position=(cursor.position + take) % total)


def build_session_random(pool: Sequence[str], session_size: int, rng: np.random.Generator) -> list[str]:
    if not pool:
        raise SpacedError("EMPTY_POOL", "no items to choose from")
    if session_size > len(pool) or session_size < 1:
        raise SpacedError("INVALID_ARGUMENT", f"cannot draw {session_size} of {len(pool)} items")
    idx = rng.choice(len(pool), size=session_size, replace=False)
    return [pool[k] for k in idx]
