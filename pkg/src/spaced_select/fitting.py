"""Maximum-likelihood half-life regression.

Fits a global ``alpha``/``beta`` and one initial forgetting rate per item by
full-batch gradient descent on the Bernoulli log-likelihood of observed
recalls. Parameters are optimised in an unconstrained space:

    n_i(0)   = exp(theta_i)
    1 - alpha = sigmoid(theta_a)
    1 + beta  = 1 + exp(theta_b)
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from itertools import groupby
from typing import Iterable

import numpy as np
from scipy.special import expit, log_expit

from .errors import SpacedError
from .memory import SECONDS_PER_DAY, ModelKind, ModelParams, ReviewEvent, canonical_events

log = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 15


@dataclass(frozen=True)
class FitConfig:
    kind: ModelKind = ModelKind.EXPONENTIAL
    learning_rate: float = 10.0
    epochs: int = 2000
    l2_item: float = 0.0
    recall_clamp: float = 0.01
    seed: int = 0
    tol: float = 1e-12
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if not self.learning_rate > 0:
            raise SpacedError("INVALID_ARGUMENT", "learning_rate must be > 0")
        if self.epochs < 1:
            raise SpacedError("INVALID_ARGUMENT", "epochs must be >= 1")
        if self.l2_item < 0:
            raise SpacedError("INVALID_ARGUMENT", "l2_item must be >= 0")
        if not 0.0 < self.recall_clamp < 0.5:
            raise SpacedError("INVALID_ARGUMENT", "recall_clamp must lie in (0, 0.5)")
        if self.workers < 1:
            raise SpacedError("INVALID_ARGUMENT", "workers must be >= 1")


@dataclass
class FitReport:
    final_nll: float
    epochs_run: int
    loss_trace: list[float] = field(default_factory=list)
    converged: bool = False


@dataclass(frozen=True)
class Exposures:
    """Labelled reviews that follow an earlier review of the same item.

    ``item`` indexes into ``items``; ``correct``/``incorrect`` count the
    learner's earlier outcomes on that item; ``delta`` is in days.
    """

    items: tuple[str, ...]
    item: np.ndarray
    delta: np.ndarray
    correct: np.ndarray
    incorrect: np.ndarray
    recall: np.ndarray

    def __len__(self) -> int:
        return len(self.recall)

    def chunks(self, size: int) -> list["Exposures"]:
        return [
            Exposures(self.items, self.item[k:k + size], self.delta[k:k + size], self.correct[k:k + size],
                      self.incorrect[k:k + size], self.recall[k:k + size])
            for k in range(0, len(self), size)
        ]

    @classmethod
    def from_arrays(cls, items, item, delta, correct, incorrect, recall) -> "Exposures":
        delta = np.asarray(delta, dtype=float)
        if np.any(delta < 0):
            raise SpacedError("INVALID_ARGUMENT", "negative review gap")
        return cls(
            tuple(items),
            np.asarray(item, dtype=np.int64),
            delta,
            np.asarray(correct, dtype=float),
            np.asarray(incorrect, dtype=float),
            np.asarray(recall, dtype=float),
        )


def extract_exposures(events: Iterable[ReviewEvent], items: Iterable[str] | None = None) -> Exposures:
    """Turn a review log into exposures; first contact with an item is skipped."""
    events = canonical_events(events)
    if items is None:
        items = sorted({ev.item_id for ev in events})
    items = tuple(items)
    index = {item: k for k, item in enumerate(items)}
    cols: tuple[list, ...] = ([], [], [], [], [])
    for (_, item_id), group in groupby(events, key=lambda e: (e.learner_id, e.item_id)):
        if item_id not in index:
            raise SpacedError("UNKNOWN_ITEM", repr(item_id))
        k = index[item_id]
        correct = incorrect = 0
        prev = None
        for ev in group:
            if prev is not None:
                cols[0].append(k)
                cols[1].append((ev.ts - prev) / SECONDS_PER_DAY)
                cols[2].append(correct)
                cols[3].append(incorrect)
                cols[4].append(ev.recall)
            if ev.recall:
                correct += 1
            else:
                incorrect += 1
            prev = ev.ts
    return Exposures.from_arrays(items, *cols)


def _elapsed(delta: np.ndarray, kind: ModelKind) -> np.ndarray:
    # both curves are exp(-n * elapsed): elapsed = delta or log(1 + delta)
    return delta if kind is ModelKind.EXPONENTIAL else np.log1p(delta)


def loss_and_gradient(
    theta: np.ndarray,
    batch: Exposures,
    kind: ModelKind | str = ModelKind.EXPONENTIAL,
    l2_item: float = 0.0,
    recall_clamp: float = 0.01,
) -> tuple[float, np.ndarray]:
    """Penalised negative log-likelihood and its gradient.

    ``theta`` holds one log initial rate per item followed by ``theta_a`` and
    ``theta_b``. Predictions are clamped to ``[clamp, 1 - clamp]``; clamped
    exposures contribute no gradient.
    """
    kind = ModelKind.parse(kind)
    n_items = len(batch.items)
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros(n_items + 2)
    theta_i = theta[:n_items]
    reg = l2_item * math.fsum(theta_i * theta_i)
    grad[:n_items] = 2.0 * l2_item * theta_i
    if len(batch) == 0:
        return reg, grad
    theta_a, theta_b = theta[n_items], theta[n_items + 1]

    log_keep = log_expit(theta_a)  # log(1 - alpha)
    log_grow = np.logaddexp(0.0, theta_b)  # log(1 + beta)
    log_n = theta_i[batch.item] + batch.correct * log_keep + batch.incorrect * log_grow
    n = np.exp(log_n)
    tau = _elapsed(batch.delta, kind)
    exponent = n * tau
    m = np.exp(-exponent)
    lo, hi = recall_clamp, 1.0 - recall_clamp
    m_c = np.clip(m, lo, hi)
    r = batch.recall
    nll = -(r * np.log(m_c) + (1.0 - r) * np.log1p(-m_c))
    loss = float(np.sum(nll)) + reg

    free = (m > lo) & (m < hi)
    # d nll / d log n = tau * n * (r - (1 - r) * m / (1 - m))
    with np.errstate(divide="ignore", invalid="ignore"):
        d_log_n = np.where(free, exponent * (r - (1.0 - r) * m / (1.0 - m)), 0.0)
    grad[:n_items] += np.bincount(batch.item, weights=d_log_n, minlength=n_items)
    grad[n_items] = np.dot(d_log_n, batch.correct) * (1.0 - expit(theta_a))
    grad[n_items + 1] = np.dot(d_log_n, batch.incorrect) * expit(theta_b)
    return loss, grad


def _chunk_terms(theta, part, kind, clamp):
    return loss_and_gradient(theta, part, kind, 0.0, clamp)


def pack(params: ModelParams, items: Iterable[str]) -> np.ndarray:
    items = list(items)
    theta = np.empty(len(items) + 2)
    theta[: len(items)] = [math.log(params.initial_rates[i]) for i in items]
    keep = min(max(1.0 - params.alpha, 1e-300), 1.0 - 1e-16)
    theta[-2] = math.log(keep) - math.log1p(-keep)
    theta[-1] = math.log(params.beta) if params.beta > 0 else -745.0
    return theta


def unpack(theta: np.ndarray, items: Iterable[str], kind: ModelKind | str) -> ModelParams:
    items = list(items)
    alpha = float(1.0 - expit(theta[-2]))
    beta = float(np.exp(theta[-1]))
    rates = {item: float(np.exp(theta[k])) for k, item in enumerate(items)}
    return ModelParams(ModelKind.parse(kind), min(max(alpha, 0.0), 1.0), beta, rates)


def _initial_theta(batch: Exposures, cfg: FitConfig) -> np.ndarray:
    n_items = len(batch.items)
    theta = np.zeros(n_items + 2)
    tau = _elapsed(batch.delta, cfg.kind)
    first = (batch.correct + batch.incorrect) == 1
    for k in range(n_items):
        sel = first & (batch.item == k)
        if sel.any():
            p = min(max(batch.recall[sel].mean(), 0.05), 0.95)
            theta[k] = math.log(-math.log(p) / max(tau[sel].mean(), 1e-6))
    rng = np.random.default_rng(cfg.seed)
    theta[:n_items] += rng.normal(0.0, 1e-3, n_items)
    theta[-2] = math.log(0.8 / 0.2)  # alpha = 0.2
    theta[-1] = math.log(0.5)  # beta = 0.5
    return theta


def fit(events: Iterable[ReviewEvent], cfg: FitConfig = FitConfig()) -> tuple[ModelParams, FitReport]:
    """Fit model parameters to a review log.

    Gradient descent on the per-exposure mean objective with a fixed step
    that is halved whenever a step would increase the loss.
    """
    events = list(events)
    if not events:
        raise SpacedError("EMPTY_DATASET", "no events to fit")
    items = sorted({ev.item_id for ev in events})
    batch = extract_exposures(events, items)
    if len(batch) == 0:
        raise SpacedError("EMPTY_DATASET", "no item was reviewed twice by the same learner")
    scale = 1.0 / len(batch)
    # fixed chunking keeps the reduction order, and so the result, independent of workers
    parts = batch.chunks(CHUNK_SIZE)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def objective(th):
        fn = partial(_chunk_terms, th, kind=cfg.kind, clamp=cfg.recall_clamp)
        terms = list(pool.map(fn, parts)) if pool else [fn(p) for p in parts]
        n_items = len(items)
        loss = cfg.l2_item * math.fsum(th[:n_items] ** 2) + math.fsum(t[0] for t in terms)
        grad = np.zeros_like(th)
        grad[:n_items] = 2.0 * cfg.l2_item * th[:n_items]
        for _, g in terms:
            grad += g
        if not math.isfinite(loss):
            raise SpacedError("DIVERGED", "non-finite loss; try a smaller learning_rate")
        return loss, grad

    theta = _initial_theta(batch, cfg)
    loss, grad = objective(theta)
    trace = [loss]
    step = cfg.learning_rate
    converged = False
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        while True:
            candidate = theta - step * scale * grad
            new_loss, new_grad = objective(candidate)
            if new_loss <= loss:
                break
            step *= 0.5
            if step < 1e-12:
                converged = True
                break
        if converged:
            break
        improvement = loss - new_loss
        theta, loss, grad = candidate, new_loss, new_grad
        trace.append(loss)
        if improvement <= cfg.tol * max(abs(loss), 1.0):
            converged = True
            break
    if pool:
        pool.shutdown()
    log.info("fit finished after %d epochs, loss %.6f", epoch, loss)
    params = unpack(theta, items, cfg.kind)
    reg = cfg.l2_item * math.fsum(theta[: len(items)] ** 2)
    return params, FitReport(loss - reg, epoch, trace, converged)
