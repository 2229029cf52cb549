"""Closed-form optimal selection probability and a numerical check of its derivation.

The optimal probability of putting an item in the next study session under the
quadratic loss is ``(1 - m) / sqrt(q)``. The rest of this module evaluates the
family of losses ``l_d`` whose cost-to-go ``J_d`` is known in closed form, so
that the HJB equation can be checked pointwise and the ``d -> 1`` limit can be
compared against the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SpacedError
from .memory import SECONDS_PER_DAY, MemoryState, ModelParams, forgetting_rate, recall_probability

SINGULAR_BAND = 1e-3
_COMPLEX_STEP = 1e-30


@dataclass(frozen=True)
class ControlConfig:
    q: float = 1.0

    def __post_init__(self):
        if not self.q >= 1.0:
            raise SpacedError("INVALID_ARGUMENT", f"q={self.q} must be >= 1")


@dataclass(frozen=True)
class HjbPoint:
    m: float
    n: float
    delta: float
    u: float
    d: float
    c1: float
    c2: float

    def __post_init__(self):
        if not 0.0 < self.m < 1.0:
            raise SpacedError("INVALID_ARGUMENT", f"m={self.m} must lie in (0, 1)")
        if not (self.n > 0 and self.u > 0 and self.delta >= 0):
            raise SpacedError("INVALID_ARGUMENT", "need n > 0, u > 0, delta >= 0")
        if not self.d > 0 or self.d == 1.0:
            raise SpacedError("INVALID_ARGUMENT", f"d={self.d} must be positive and != 1")

    @property
    def denominator(self) -> float:
        return -self.m * self.m + 2.0 * self.m - self.d


def optimal_selection_probability(m: float, cfg: ControlConfig = ControlConfig()) -> float:
    if not 0.0 <= m <= 1.0:
        raise SpacedError("INVALID_ARGUMENT", f"recall probability {m} outside [0, 1]")
    return (1.0 - m) / math.sqrt(cfg.q)


def recall_estimates(states: Sequence[MemoryState], params: ModelParams, now_ts: int) -> np.ndarray:
    """Model recall probability of every item at ``now_ts``; unseen items get 0."""
    out = np.zeros(len(states))
    for k, state in enumerate(states):
        if state.item_id not in params.initial_rates:
            raise SpacedError("UNKNOWN_ITEM", repr(state.item_id))
        if state.last_review_ts is None:
            continue
        if now_ts < state.last_review_ts:
            raise SpacedError(
                "OUT_OF_ORDER_EVENT",
                f"now={now_ts} precedes last review of {state.item_id!r} at {state.last_review_ts}",
            )
        delta = (now_ts - state.last_review_ts) / SECONDS_PER_DAY
        out[k] = recall_probability(forgetting_rate(state, params), delta, params.kind)
    return out


def select_probabilities(
    states: Sequence[MemoryState],
    params: ModelParams,
    cfg: ControlConfig,
    now_ts: int,
) -> np.ndarray:
    """Selection probability of each item, in input order."""
    m = recall_estimates(states, params, now_ts)
    return np.array([optimal_selection_probability(float(mi), cfg) for mi in m])


def _check_pole(point: HjbPoint) -> None:
    if abs(point.denominator) < np.finfo(float).eps:
        raise SpacedError("SINGULAR_POINT", f"-m^2 + 2m - d vanishes at m={point.m}, d={point.d}")


def _cost_to_go(m, n, q, d, c1, c2):
    # m may be complex for the complex-step derivative.
    return math.sqrt(q) * (c1 * np.log(n) + c2 * math.log(d) / (-m * m + 2.0 * m - d))


def cost_to_go(point: HjbPoint, cfg: ControlConfig = ControlConfig()) -> float:
    _check_pole(point)
    return float(_cost_to_go(point.m, point.n, cfg.q, point.d, point.c1, point.c2))


def _gain_bracket(m, alpha, beta, d, c1, c2):
    log_d = math.log(d)
    return (
        c2 * log_d / (-m * m + 2.0 * m - d)
        - c2 * log_d / (1.0 - d)
        + c1 * m * math.log((1.0 + beta) / (1.0 - alpha))
        - c1 * math.log1p(beta)
    )


def relaxed_selection_probability(m: float, alpha: float, beta: float, d: float, c1: float, c2: float,
                                cfg: ControlConfig = ControlConfig()) -> float:
    """Optimal selection probability for the loss ``l_d`` (positive part only)."""
    return max(_gain_bracket(m, alpha, beta, d, c1, c2), 0.0) / math.sqrt(cfg.q)


def hjb_residual(point: HjbPoint, alpha: float, beta: float, cfg: ControlConfig = ControlConfig()) -> float:
    """Left-hand side of the HJB equation for ``J_d`` under the loss ``l_d``.

    ``dJ/dm`` is taken by complex-step differentiation of ``J_d`` itself, and
    the optimal probability comes from minimising the quadratic in ``p``
    built from ``J_d`` evaluated at the post-review states. Neither route
    reuses the hand-derived ``h_d``/``g_d`` algebra, so a zero here checks it.
    """
    if not (0.0 <= alpha < 1.0 and beta >= 0.0):
        raise SpacedError("INVALID_ARGUMENT", f"alpha={alpha}, beta={beta}")
    _check_pole(point)
    m, n, delta, u, d, c1, c2 = point.m, point.n, point.delta, point.u, point.d, point.c1, point.c2
    q = cfg.q
    J = lambda mm, nn: _cost_to_go(mm, nn, q, d, c1, c2)  # noqa: E731

    j_here = float(J(m, n))
    j_m = float(np.imag(J(complex(m, _COMPLEX_STEP), n)) / _COMPLEX_STEP)
    j_t = 0.0
    j_delta = 0.0
    # jump term: review resets m to 1 and scales n by (1 - alpha) or (1 + beta)
    j_after = m * float(J(1.0, (1.0 - alpha) * n)) + (1.0 - m) * float(J(1.0, (1.0 + beta) * n))
    gain = j_here - j_after
    p_star = max(gain, 0.0) / q

    log_d = math.log(d)
    denom = point.denominator
    h_d = -math.sqrt(q) * m * n / (1.0 + delta) * c2 * (2.0 - 2.0 * m) * log_d / denom**2
    g_d = math.sqrt(u / 2.0) * max(_gain_bracket(m, alpha, beta, d, c1, c2), 0.0)
    loss = h_d + g_d**2 + 0.5 * q * p_star**2 * u

    return j_t - m * n / (1.0 + delta) * j_m + j_delta + loss - gain * p_star * u


def limit_constants(alpha: float, beta: float) -> tuple[float, float]:
    """Constants ``(c1, c2)`` that make the ``d -> 1`` limit equal ``(1 - m)/sqrt(q)``."""
    log_ratio = math.log((1.0 - alpha) / (1.0 + beta))
    if log_ratio == 0.0:
        raise SpacedError("UNDEFINED_CONSTANTS", "alpha = beta = 0 makes log((1-a)/(1+b)) zero")
    return 1.0 / log_ratio, math.log(1.0 - alpha) / log_ratio


def limit_check(m: float, alpha: float, beta: float, cfg: ControlConfig, d_near_one: float) -> float:
    """Gap between the ``l_d`` optimum near ``d = 1`` and the closed form."""
    if not 0.0 < m < 1.0:
        raise SpacedError("INVALID_ARGUMENT", f"m={m} must lie in (0, 1)")
    if d_near_one == 1.0 or d_near_one <= 0:
        raise SpacedError("INVALID_ARGUMENT", "d must be positive and != 1")
    if not 0.0 <= alpha < 1.0:
        raise SpacedError("INVALID_ARGUMENT", f"alpha={alpha}")
    c1, c2 = limit_constants(alpha, beta)
    p_d = relaxed_selection_probability(m, alpha, beta, d_near_one, c1, c2, cfg)
    return abs(p_d - optimal_selection_probability(m, cfg))


def recall_drift(m: float, n: float, delta: float) -> float:
    """Deterministic drift of the power-law recall probability between reviews."""
    return -n * m / (1.0 + delta)


def residual_grid(
    d: float,
    alpha: float,
    beta: float,
    cfg: ControlConfig = ControlConfig(),
    c1: float | None = None,
    c2: float | None = None,
    u: float = 1.0,
    size: int = 10,
    band: float = SINGULAR_BAND,
) -> np.ndarray:
    """HJB residuals over a ``size**3`` grid of (m, n, delta).

    Returns rows ``(m, n, delta, residual)``; points within ``band`` of the
    pole of ``J_d`` are skipped. When ``c1``/``c2`` are omitted the limit
    constants for ``(alpha, beta)`` are used.
    """
    if c1 is None or c2 is None:
        lc1, lc2 = limit_constants(alpha, beta)
        c1 = lc1 if c1 is None else c1
        c2 = lc2 if c2 is None else c2
    rows = []
    for m in np.linspace(0.05, 0.95, size):
        if abs(-m * m + 2 * m - d) < band:
            continue
        for n in np.linspace(0.1, 10.0, size):
            for delta in np.linspace(0.0, 30.0, size):
                pt = HjbPoint(float(m), float(n), float(delta), u, d, c1, c2)
                rows.append((pt.m, pt.n, pt.delta, hjb_residual(pt, alpha, beta, cfg)))
    return np.array(rows, dtype=float).reshape(-1, 4)
