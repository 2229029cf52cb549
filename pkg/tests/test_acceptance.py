"""Acceptance criteria, each at its stated tolerance and time budget.

Every test appends a ``PASS``/``FAIL``/``SKIP`` line that is printed in the
terminal summary. Criterion 7 needs the released trial log; point
``SPACED_TRIAL_DATA`` at a JSONL or CSV file to run it.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import enumerated_mann_whitney
from test_fitting import max_relative_gradient_error

from spaced_select.analysis import compare_arms, empirical_forgetting_rate, figure_bins, mann_whitney_u
from spaced_select.cli import main
from spaced_select.control import ControlConfig, limit_check, optimal_selection_probability, residual_grid
from spaced_select.fitting import FitConfig, fit
from spaced_select.io import ingest
from spaced_select.memory import ModelParams
from spaced_select.metrics import PredictionRecord, auc, compare_to_reference, evaluate_model, format_table
from spaced_select.policies import PolicySpec
from spaced_select.simulator import SimConfig, run, synthetic_review_log

DAY = 86400


def record(number, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def test_1_closed_form_policy():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    m = rng.random(10_000)
    q = 1.0 + rng.exponential(5.0, 10_000)
    m[:3], q[:3] = [0.0, 1.0, 0.5], [1.0, 1.0, 1.0]
    exact = in_range = True
    for mi, qi in zip(m, q):
        p = optimal_selection_probability(float(mi), ControlConfig(float(qi)))
        exact &= p == (1.0 - mi) / math.sqrt(qi)
        in_range &= 0.0 <= p <= 1.0
    elapsed = time.perf_counter() - t0
    record(1, exact and in_range and elapsed < 1.0,
           f"10^4 points exact={exact} in [0,1]={in_range} in {elapsed:.2f}s (< 1s)")


def test_2_hjb_verification():
    t0 = time.perf_counter()
    worst = 0.0
    points = 0
    for d in (0.5, 2.0):
        for alpha, beta in ((0.3, 0.5), (0.1, 0.2)):
            for q in (1.0, 4.0):
                grid = residual_grid(d, alpha, beta, ControlConfig(q), size=10)
                points += len(grid)
                worst = max(worst, float(np.max(np.abs(grid[:, 3]))))
    # the limit is pointwise in m (see test_limit_is_not_uniform_near_full_recall); checked at m = 0.5
    gaps_ok = monotone = True
    for alpha, beta in ((0.3, 0.5), (0.1, 0.2)):
        for q in (1.0, 4.0):
            cfg = ControlConfig(q)
            near = [limit_check(0.5, alpha, beta, cfg, d) for d in (1 - 1e-4, 1 + 1e-4)]
            seq = [limit_check(0.5, alpha, beta, cfg, d) for d in (1.1, 1.01, 1.001)]
            gaps_ok &= max(near) < 1e-3
            monotone &= seq[0] > seq[1] > seq[2]
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and gaps_ok and monotone and elapsed < 5.0
    record(2, ok, f"max |residual| {worst:.2e} over {points} points (< 1e-6); limit gap at m=0.5 < 1e-3 at 1+-1e-4: {gaps_ok}; "
                  f"monotone over 1.1/1.01/1.001: {monotone}; {elapsed:.2f}s (< 5s)")


def test_3_fitting():
    t0 = time.perf_counter()
    grad_err = max_relative_gradient_error(count=100, seed=42)
    rng = np.random.default_rng(42)
    rates = {f"i{k:02d}": float(r) for k, r in enumerate(rng.lognormal(0.0, 0.5, 50))}
    truth = ModelParams("exponential", 0.4, 0.6, rates)
    events = synthetic_review_log(truth, n_learners=200, reviews_per_item=20, seed=42)
    params, _ = fit(events, FitConfig(seed=42))
    elapsed = time.perf_counter() - t0
    ok = grad_err < 1e-5 and abs(params.alpha - 0.4) <= 0.05 and abs(params.beta - 0.6) <= 0.05 and elapsed < 120
    record(3, ok, f"gradient rel err {grad_err:.1e} (< 1e-5); alpha {params.alpha:.4f} vs 0.4, "
                  f"beta {params.beta:.4f} vs 0.6 (+-0.05); {elapsed:.1f}s (< 120s)")


def trial_config(seed=42):
    return SimConfig(
        n_learners=500, n_items=100, horizon_days=30.0, mean_sessions_per_day=1.0, session_size=10,
        ground_truth=ModelParams("exponential", 0.4, 0.6, {}),
        arms=(PolicySpec("select", 10), PolicySpec("difficulty", 10), PolicySpec("random", 10)),
        seed=seed, rate_median=0.03,
    )


def trial_outcome(seed=42):
    result = run(trial_config(seed))
    report = compare_arms(result.events, figure_bins())
    bins = report.populated_bins()
    lower = significant = 0
    for b in bins:
        sel = report.summary(b, "select").median
        for other in ("random", "difficulty"):
            lower += sel < report.summary(b, other).median
            significant += report.test(b, "select", other).significant
    return bins, lower, significant


def test_4_trial_direction():
    t0 = time.perf_counter()
    bins, lower, significant = trial_outcome(42)
    elapsed = time.perf_counter() - t0
    pairs = 2 * len(bins)
    ok = bool(bins) and lower == pairs and significant >= 0.75 * pairs and elapsed < 120
    record(4, ok, f"{len(bins)} populated bins; SELECT median lower in {lower}/{pairs} comparisons; "
                  f"p < 0.05 in {significant}/{pairs} (>= 75%); {elapsed:.1f}s (< 120s)")


def test_5_statistics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    cases = agree = sums = 0
    for n1 in range(1, 8):
        for n2 in range(1, 9 - n1):
            for trial in range(12):
                # integer draws from a small range give plenty of ties; the last trial has none
                x = rng.integers(0, 4, n1) if trial < 11 else rng.permutation(n1 + n2)[:n1]
                y = rng.integers(0, 4, n2) if trial < 11 else np.setdiff1d(np.arange(n1 + n2), x)
                res = mann_whitney_u(x, y)
                u_ref, p_ref = enumerated_mann_whitney(list(x), list(y))
                cases += 1
                agree += res.u == u_ref and (res.degenerate or abs(res.p - p_ref) < 1e-12)
                sums += res.u + mann_whitney_u(y, x).u == n1 * n2
    for _ in range(200):
        x, y = rng.normal(size=rng.integers(1, 50)), rng.normal(size=rng.integers(1, 50))
        sums += mann_whitney_u(x, y).u + mann_whitney_u(y, x).u == len(x) * len(y)
    auc_ok = 0
    for _ in range(100):
        size = int(rng.integers(4, 80))
        labels = rng.integers(0, 2, size)
        labels[:2] = [0, 1]
        scores = np.round(rng.random(size), 2)
        u = mann_whitney_u(scores[labels == 1], scores[labels == 0]).u
        n_pos = int(labels.sum())
        got = auc([PredictionRecord(float(s), int(y), 1.0) for s, y in zip(scores, labels)])
        auc_ok += abs(got - u / (n_pos * (size - n_pos))) < 1e-12
    elapsed = time.perf_counter() - t0
    ok = agree == cases and sums == cases + 200 and auc_ok == 100 and elapsed < 30
    record(5, ok, f"enumeration agrees {agree}/{cases} (all size pairs with |x|+|y| <= 8); "
                  f"U_x+U_y=|x||y| {sums}/{cases + 200}; AUC=U/(n+n-) {auc_ok}/100; {elapsed:.1f}s (< 30s)")


def test_6_empirical_forgetting_rate():
    success = empirical_forgetting_rate([(0, 0), (DAY, 1)])
    failure = empirical_forgetting_rate([(0, 1), (2 * DAY, 0)])
    ok = abs(success - -math.log(0.99)) < 1e-9 and abs(failure - -math.log(0.01) / 2) < 1e-9
    record(6, ok, f"1-day success {success:.12f} (0.01005...), 2-day failure {failure:.12f} (2.3026...) to 1e-9")


def chronological_train(events, fraction):
    by_learner = {}
    for ev in events:
        by_learner.setdefault(ev.learner_id, []).append(ev)
    train = []
    for evs in by_learner.values():
        evs.sort(key=lambda e: (e.ts, e.item_id))
        train.extend(evs[: len(evs) - math.ceil(fraction * len(evs))])
    return train


def test_7_published_table():
    path = os.environ.get("SPACED_TRIAL_DATA")
    if not path:
        ACCEPTANCE_LINES.append("SKIP criterion 7: set SPACED_TRIAL_DATA to the released trial log to run it")
        pytest.skip("released trial dataset not supplied")
    events = ingest(Path(path)).events
    train = chronological_train(events, 0.2)
    rows, verdicts = [], []
    for kind in ("exponential", "power_law"):
        params, _ = fit(train, FitConfig(kind=kind))
        res = evaluate_model(events, params, holdout_fraction=0.2)
        res["reference"] = compare_to_reference(res, 0.05)
        rows.append(res)
        verdicts += [f"{kind} {k} {'agrees' if v['agrees'] else 'disagrees'}" for k, v in res["reference"].items()]
    print(format_table(rows))
    ok = all("disagrees" not in v for v in verdicts)
    record(7, ok, "; ".join(verdicts) + " (best effort: the original split protocol is unknown)")


def test_8_determinism(tmp_path):
    t0 = time.perf_counter()
    sim = ["--learners", "30", "--items", "40", "--horizon", "10", "--rate-median", "0.05", "--seed", "8"]
    checks = {}

    def same(name, paths_a, paths_b):
        checks[name] = all(Path(a).read_bytes() == Path(b).read_bytes() for a, b in zip(paths_a, paths_b))

    a, b = tmp_path / "sim_a", tmp_path / "sim_b"
    assert main(["simulate", "--out", str(a), "--workers", "1", *sim]) == 0
    assert main(["simulate", "--out", str(b), "--workers", "2", *sim]) == 0
    files = sorted(p.name for p in a.glob("*.json*") if p.name != "manifest.json")
    same("simulate", [a / f for f in files], [b / f for f in files])

    log = str(a / "events_random.jsonl")
    for w, out in ((1, "fit_a"), (3, "fit_b")):
        assert main(["fit", "--input", log, "--out", str(tmp_path / out), "--epochs", "200",
                     "--seed", "8", "--workers", str(w)]) == 0
    same("fit", [tmp_path / "fit_a" / "params.json"], [tmp_path / "fit_b" / "params.json"])

    for out in ("ev_a", "ev_b"):
        assert main(["evaluate", "--input", log, "--params", str(a / "truth.json"), "--seed", "8",
                     "--out", str(tmp_path / out)]) == 0
    same("evaluate", [tmp_path / "ev_a" / "metrics.json"], [tmp_path / "ev_b" / "metrics.json"])

    for out in ("an_a", "an_b"):
        assert main(["analyze", str(a / "events_select.jsonl"), log, "--out", str(tmp_path / out)]) == 0
    same("analyze", [tmp_path / "an_a" / n for n in ("report.csv", "tests.csv")],
         [tmp_path / "an_b" / n for n in ("report.csv", "tests.csv")])

    outputs = []
    for state in ("st_a.json", "st_b.json"):
        import contextlib
        import io as stdio

        buf = stdio.StringIO()
        with contextlib.redirect_stdout(buf):
            assert main(["session", "--state", str(tmp_path / state), "--params", str(a / "truth.json"),
                         "--events", log, "--learner", "random-00", "--now", str(20 * DAY), "--seed", "8"]) == 0
        outputs.append(buf.getvalue())
    checks["session"] = outputs[0] == outputs[1] and json.loads(outputs[0])
    same("session state", [tmp_path / "st_a.json"], [tmp_path / "st_b.json"])

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 60
    record(8, ok, ", ".join(f"{k}={'identical' if v else 'DIFFERS'}" for k, v in checks.items())
           + f"; {elapsed:.1f}s (< 60s)")
