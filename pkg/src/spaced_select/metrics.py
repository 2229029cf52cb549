"""Predictive quality of a fitted memory model: MAE, AUC and half-life correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import groupby
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .analysis import EPSILON, midranks
from .errors import SpacedError
from .memory import SECONDS_PER_DAY, ModelKind, ModelParams, ReviewEvent, canonical_events, halflife, recall_array

# published values for the two models; only comparable on the original trial data
PUBLISHED_METRICS = {
    ModelKind.EXPONENTIAL.value: {"MAE": 0.139, "AUC": 0.887, "COR_h": 0.611},
    ModelKind.POWER_LAW.value: {"MAE": 0.282, "AUC": 0.901, "COR_h": 0.571},
}


@dataclass(frozen=True)
class PredictionRecord:
    predicted_m: float
    observed_recall: int
    predicted_halflife: float
    empirical_halflife: float | None = None


def mae(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise SpacedError("EMPTY_DATASET", "no predictions")
    m = np.array([r.predicted_m for r in records])
    y = np.array([r.observed_recall for r in records], dtype=float)
    return float(np.mean(np.abs(m - y)))


def auc(records: Sequence[PredictionRecord]) -> float:
    """Rank-sum AUC; tied scores count one half."""
    y = np.array([r.observed_recall for r in records])
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SpacedError("UNDEFINED_AUC", "AUC needs both recalled and forgotten examples")
    ranks = midranks([r.predicted_m for r in records])
    u_pos = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u_pos / (n_pos * n_neg)


def halflife_correlation(records: Sequence[PredictionRecord], method: str = "spearman") -> float:
    pairs = [(r.predicted_halflife, r.empirical_halflife) for r in records if r.empirical_halflife is not None]
    if len(pairs) < 2:
        raise SpacedError("UNDEFINED_CORRELATION", "need two records with an empirical half-life")
    pred, emp = map(np.asarray, zip(*pairs))
    if np.all(pred == pred[0]) or np.all(emp == emp[0]):
        raise SpacedError("UNDEFINED_CORRELATION", "a half-life column has zero variance")
    if method == "spearman":
        return float(stats.spearmanr(pred, emp).statistic)
    if method == "pearson":
        return float(stats.pearsonr(pred, emp).statistic)
    raise SpacedError("INVALID_ARGUMENT", f"unknown correlation method {method!r}")


def empirical_halflife(recall: int, delta_days: float, epsilon: float = EPSILON) -> float:
    m_hat = max(epsilon, min(1.0 - epsilon, recall))
    return delta_days * math.log(2.0) / -math.log(m_hat)


def predictions(
    events: Iterable[ReviewEvent],
    params: ModelParams,
    holdout_fraction: float = 0.2,
    seed: int = 0,
    epsilon: float = EPSILON,
) -> list[PredictionRecord]:
    """Score the last ``holdout_fraction`` of each learner's exposures.

    Exposures are reviews that follow an earlier review of the same item.
    The memory state behind each prediction uses the learner's full history,
    including the training part. Each (learner, item) pair's last held-out
    exposure also carries an empirical half-life.
    """
    if not 0.0 <= holdout_fraction <= 1.0:
        raise SpacedError("INVALID_ARGUMENT", "holdout_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    rows = []  # (learner, ts, item, delta_days, correct, incorrect, recall)
    for (lid, item), group in groupby(canonical_events(events), key=lambda e: (e.learner_id, e.item_id)):
        if item not in params.initial_rates:
            raise SpacedError("UNKNOWN_ITEM", repr(item))
        correct = incorrect = 0
        prev = None
        for ev in group:
            if prev is not None:
                rows.append((lid, ev.ts, item, (ev.ts - prev) / SECONDS_PER_DAY, correct, incorrect, ev.recall))
            correct += ev.recall
            incorrect += 1 - ev.recall
            prev = ev.ts
    tiebreak = rng.random(len(rows))
    order = sorted(range(len(rows)), key=lambda k: (rows[k][0], rows[k][1], tiebreak[k]))
    held = []
    for _, idx in groupby(order, key=lambda k: rows[k][0]):
        idx = list(idx)
        count = math.ceil(holdout_fraction * len(idx)) if holdout_fraction > 0 else 0
        held.extend(idx[len(idx) - count:] if count else [])
    if not held:
        raise SpacedError("EMPTY_HOLDOUT", "holdout is empty")

    sel = [rows[k] for k in held]
    n0 = np.array([params.initial_rates[r[2]] for r in sel])
    correct = np.array([r[4] for r in sel], dtype=float)
    incorrect = np.array([r[5] for r in sel], dtype=float)
    delta = np.array([r[3] for r in sel])
    n = n0 * (1.0 - params.alpha) ** correct * (1.0 + params.beta) ** incorrect
    m = recall_array(n, delta, params.kind)

    last_of_pair = {}
    for j, r in enumerate(sel):
        key = (r[0], r[2])
        if key not in last_of_pair or r[1] > sel[last_of_pair[key]][1]:
            last_of_pair[key] = j
    last_idx = set(last_of_pair.values())
    out = []
    for j, r in enumerate(sel):
        emp = empirical_halflife(r[6], r[3], epsilon) if j in last_idx else None
        out.append(PredictionRecord(float(m[j]), int(r[6]), halflife(float(n[j]), params.kind), emp))
    return out


def evaluate_model(
    events: Iterable[ReviewEvent],
    params: ModelParams,
    holdout_fraction: float = 0.2,
    seed: int = 0,
    correlation: str = "spearman",
) -> dict:
    """MAE / AUC / COR_h of ``params`` on a chronological per-learner holdout."""
    recs = predictions(events, params, holdout_fraction, seed)
    row = {"MAE": mae(recs)}
    try:
        row["AUC"] = auc(recs)
    except SpacedError:
        row["AUC"] = None
    try:
        row["COR_h"] = halflife_correlation(recs, correlation)
    except SpacedError:
        row["COR_h"] = None
    return {
        "model": params.kind.value,
        "metrics": row,
        "n_predictions": len(recs),
        "holdout_fraction": holdout_fraction,
        "split": "chronological per learner",
        "correlation": correlation,
        "seed": seed,
    }


def compare_to_reference(result: dict, tolerance: float = 0.05) -> dict:
    """Flag each metric as within ``tolerance`` of the published value or not."""
    ref = PUBLISHED_METRICS[result["model"]]
    out = {}
    for name, expected in ref.items():
        got = result["metrics"].get(name)
        out[name] = {
            "value": got,
            "reference": expected,
            "agrees": got is not None and abs(got - expected) <= tolerance,
        }
    return out


def format_table(results: Sequence[dict]) -> str:
    """Metric rows by model columns, one line per metric."""
    names = [r.get("label", r["model"]) for r in results]
    lines = [f"{'':15}" + "".join(f"{n:>14}" for n in names)]
    arrows = {"MAE": "MAE (lower)", "AUC": "AUC (higher)", "COR_h": "COR_h (higher)"}
    for metric in ("MAE", "AUC", "COR_h"):
        cells = []
        for r in results:
            v = r["metrics"].get(metric)
            cells.append(f"{'n/a' if v is None else f'{v:.3f}':>14}")
        lines.append(f"{arrows[metric]:<15}"[:15] + "".join(cells))
    return "\n".join(lines)
