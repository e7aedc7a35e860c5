"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run `pytest -s tests/test_acceptance.py` to see the per-criterion lines as
they complete. Criterion 7's magnitude-band sub-check is expected to fail;
the printed detail carries the measured values (the estimator's propensity
noise floor at the desk-scale horizon sits above the band; see the test).
"""

import math
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from regretaudit.aggregate import DriftAssumption, audit_aggregated
from regretaudit.audit import audit, error_margin, minimize_over_cost, regret_curve
from regretaudit.core import (
    AuditConfig,
    CostRange,
    PriceDistribution,
    PriceGrid,
    Transcript,
    TranscriptRecord,
)
from regretaudit.market import (
    UniformDuopoly,
    best_pure_equilibrium,
    expected_payoff_matrix,
    manipulation_valuation_table,
    uniform_demand,
)
from regretaudit.oracles import (
    GroundTruth,
    best_in_hindsight_regret,
    brute_force_estimator_expectation,
    indistinguishable_ground_truths,
    materialize_truth,
    reduction_estimate,
    sample_transcript,
    true_calibrated_regret,
    true_pessimistic_regret,
)
from regretaudit.sellers import (
    ManipulatorSchedule,
    ManipulatorStrategy,
    MWUStrategy,
    QLearnerStrategy,
    reward_bounds,
    simulate,
)

from conftest import random_instance, transcript_from

F = Fraction


def report_line(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    tail = f"  [{detail}]" if detail else ""
    print(f"\nACCEPTANCE {number:02d} {name}: {status}{tail}")


# ---------------------------------------------------------------------------
# 1. Payoff-table fidelity
# ---------------------------------------------------------------------------


def test_criterion_01_payoff_table_fidelity():
    t0 = time.time()
    expected = {
        (0, 0): ((F(123, 200), F(0)), (F(77, 200), F(0))),
        (0, 1): ((F(17, 20), F(1, 2)), (F(3, 10), F(-1))),
        (0, 2): ((F(523, 600), F(1, 3)), (F(77, 200), F(-1))),
        (1, 0): ((F(77, 100), F(0)), (F(123, 200), F(0))),
        (1, 1): ((F(123, 100), F(0)), (F(77, 100), F(0))),
        (1, 2): ((F(17, 10), F(1)), (F(9, 20), F(-3, 2))),
        (2, 0): ((F(123, 200), F(0)), (F(159, 200), F(0))),
        (2, 1): ((F(231, 200), F(0)), (F(123, 100), F(0))),
        (2, 2): ((F(369, 200), F(0)), (F(231, 200), F(0))),
    }
    probe = F(1, 128)
    m0 = expected_payoff_matrix(manipulation_valuation_table(0), [1, 2, 3], (0, 0))
    m1 = expected_payoff_matrix(manipulation_valuation_table(probe), [1, 2, 3], (0, 0))
    worst = F(0)
    for i in range(3):
        for j in range(3):
            for side, (intercept, slope) in enumerate(expected[(i, j)]):
                b = (m0.seller1, m0.seller2)[side][i][j]
                v = (m1.seller1, m1.seller2)[side][i][j]
                s = (v - b) / probe
                worst = max(worst, abs(b - intercept), abs(s - slope))
    ok = worst <= F(1, 10**12)
    report_line(1, "payoff-table fidelity", ok, f"max coeff error {worst}, {time.time() - t0:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. Benchmark payoffs and equilibrium of the duopoly
# ---------------------------------------------------------------------------


def test_criterion_02_duopoly_benchmarks():
    t0 = time.time()
    env = UniformDuopoly(0.1, 0.2)
    x1, x2 = uniform_demand(env, 0.5, 0.55)
    p_a = ((0.5 - 0.1) * x1, (0.55 - 0.2) * x2)
    x1, x2 = uniform_demand(env, 0.6, 0.65)
    p_b = ((0.6 - 0.1) * x1, (0.65 - 0.2) * x2)
    tol = 5e-4 + 1e-12  # 0.1595 sits exactly 5e-4 from the rounded 0.159
    checks = [
        abs(p_a[0] - 0.1595) < 1e-12,
        abs(p_a[1] - 0.1142) < 5e-5,
        abs(p_a[0] - 0.159) <= tol,
        abs(p_a[1] - 0.114) <= tol,
        abs(p_b[0] - 0.169) <= tol,
        abs(p_b[1] - 0.122) <= tol,
    ]
    grid = [round(0.05 * i, 2) for i in range(1, 20)]
    eq = best_pure_equilibrium(expected_payoff_matrix(env, grid, (0.1, 0.2)))
    checks.append(eq[0] == (0.5, 0.55))
    ok = all(checks)
    report_line(
        2,
        "duopoly benchmark payoffs",
        ok,
        f"(0.5,0.55)->({p_a[0]:.4f},{p_a[1]:.4f}), equilibrium {eq[0]}, {time.time() - t0:.2f}s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 3. Estimator exactness on enumerable instances
# ---------------------------------------------------------------------------


def test_criterion_03_estimator_exactness():
    t0 = time.time()
    rng = np.random.default_rng(33)
    exact = 0
    total = 0
    for _ in range(50):
        k = int(rng.integers(2, 4))
        rounds = int(rng.integers(1, 5))
        _, dists, truth = random_instance(rng, k=k, rounds=rounds)
        for _ in range(5):
            c = F(int(rng.integers(0, 120)), 100)
            total += 1
            exact += brute_force_estimator_expectation(dists, truth, c) == (
                true_pessimistic_regret(truth, dists, c)
            )
    ok = exact == total
    report_line(3, "estimator exactness", ok, f"{exact}/{total} exact, {time.time() - t0:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. Concentration of the estimator around its target
# ---------------------------------------------------------------------------


def concentration_environment():
    k, rounds = 5, 5000
    levels = (0.1, 0.3, 0.5, 0.7, 0.9)
    grid = PriceGrid(levels)
    env_rng = np.random.default_rng(777)
    dists = []
    for t in range(rounds):
        if env_rng.random() < 0.3:
            size = int(env_rng.integers(2, k + 1))
            support = sorted(env_rng.choice(k, size=size, replace=False).tolist())
        else:
            support = list(range(k))
        raw = env_rng.dirichlet(np.ones(len(support)))
        probs = 0.26 / len(support) + 0.74 * raw  # support minimum >= 0.052
        dists.append(PriceDistribution(support, (probs / probs.sum()).tolist()))
    lv = np.asarray(levels)
    t_idx = np.arange(rounds)[:, None]
    values = np.clip(0.95 - 0.9 * lv[None, :] + 0.05 * np.sin(t_idx / 50.0 + lv[None, :]), 0, 1)
    truth = GroundTruth(levels, values)
    return grid, dists, truth


def test_criterion_04_concentration():
    t0 = time.time()
    grid, dists, truth = concentration_environment()
    rounds, k = truth.as_array().shape
    c = 0.2
    target = float(true_pessimistic_regret(truth, dists, c))
    dense = np.stack([d.dense(k) for d in dists])
    cums = np.cumsum(dense, axis=1)
    last_support = np.array([d.support[-1] for d in dists])
    values = truth.as_array()
    delta = None
    exceed = 0
    n_transcripts = 500
    for seed in range(n_transcripts):
        u = np.random.default_rng((9000, seed)).random(rounds)
        posted = np.minimum((cums <= u[:, None]).sum(axis=1), last_support)
        records = [
            TranscriptRecord(t + 1, int(posted[t]), float(values[t, posted[t]]), dists[t])
            for t in range(rounds)
        ]
        transcript = Transcript(grid, records)
        if delta is None:
            delta = error_margin(transcript, alpha=0.05)
        estimate = regret_curve(transcript).value(c)
        exceed += abs(estimate - target) > delta
    rate = exceed / n_transcripts
    ok = rate <= 0.05
    report_line(
        4,
        "estimator concentration",
        ok,
        f"exceed rate {rate:.3f} (margin {delta:.3f}, target {target:.4f}), {time.time() - t0:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 5. Cost minimization against a dense scan
# ---------------------------------------------------------------------------


def test_criterion_05_cost_minimization():
    t0 = time.time()
    rng = np.random.default_rng(55)
    lo, hi = 0.0, 2.0
    points = 100_000
    step = (hi - lo) / points
    ok_all = True
    worst_value_gap = 0.0
    for _ in range(100):
        k, rounds = 6, 50
        grid = PriceGrid(np.sort(rng.uniform(0.1, 2.5, size=k)).tolist())
        from conftest import dyadic_distribution, sample_posted

        dists = [dyadic_distribution(rng, k) for _ in range(rounds)]
        posted = sample_posted(rng, dists)
        allocs = rng.random(rounds)
        tr = transcript_from(grid, dists, posted, allocs)
        curve = regret_curve(tr)
        c_star, v_star = minimize_over_cost(curve, CostRange(lo, hi))
        cs = np.linspace(lo, hi, points + 1)
        vals = curve.values(cs)
        idx = int(vals.argmin())
        # The exact minimum can only undercut the scan, by at most the active
        # slope across half a step; the argument must land within one step.
        slope_allowance = float(np.abs(curve.slopes).sum()) * step
        ok_all &= v_star <= vals[idx] + 1e-9
        ok_all &= vals[idx] - v_star <= slope_allowance + 1e-9
        ok_all &= abs(c_star - cs[idx]) <= step + 1e-12
        worst_value_gap = max(worst_value_gap, float(vals[idx] - v_star))
    report_line(
        5,
        "cost minimization vs dense scan",
        bool(ok_all),
        f"worst scan undercut {worst_value_gap:.2e}, {time.time() - t0:.0f}s",
    )
    assert ok_all


# ---------------------------------------------------------------------------
# 6. Manipulation of a mean-based learner
# ---------------------------------------------------------------------------

MANIP_PHASE1 = 10_000
MANIP_EPSILON = 0.005
MANIP_ETA = 2.0


@pytest.fixture(scope="module")
def manipulation_run():
    table = manipulation_valuation_table(MANIP_EPSILON)
    grid = PriceGrid([0.0, 1.0, 2.0, 3.0])
    schedule = ManipulatorSchedule.standard(MANIP_PHASE1)
    learner = MWUStrategy.fresh(4, MANIP_ETA, *reward_bounds(table, grid, (0.0, 0.0)))
    result = simulate(
        grid,
        (ManipulatorStrategy(schedule, grid), learner),
        table,
        (0.0, 0.0),
        schedule.total_rounds,
        "expected",
        seed=0,
    )
    return grid, table, schedule, result


def test_criterion_06_manipulation(manipulation_run):
    t0 = time.time()
    grid, table, schedule, result = manipulation_run
    total = schedule.total_rounds
    phase1 = schedule.phase1_rounds
    lv = np.asarray(grid.levels)

    posted = [np.array([r.posted_index for r in tr.records]) for tr in result.transcripts]
    window_start = phase1 + math.ceil(3 * MANIP_EPSILON * phase1)
    freq_top = float((posted[1][window_start - 1 :] == 3).mean())

    benchmark = (2.583 * phase1, 1.617 * phase1)  # 2.1T times the (1.23, 0.77) equilibrium
    totals = (float(result.payoffs[0].sum()), float(result.payoffs[1].sum()))

    bih = []
    truths = []
    for i in range(2):
        truth = materialize_truth(table, grid.levels, posted[1 - i], i)
        truths.append(truth.as_array())
        util = lv[None, :] * truths[i]
        bih.append(best_in_hindsight_regret(util, result.payoffs[i]))

    dists1 = np.zeros((total, 4))
    dists1[np.arange(total), posted[0]] = 1.0
    calibrated1 = true_calibrated_regret(
        dists1, GroundTruth(tuple(float(v) for v in grid.levels), truths[0]), 0.0
    )

    parts = {
        "freq": freq_top >= 0.95,
        "payoffs": totals[0] > benchmark[0] and totals[1] > benchmark[1],
        "bih": max(bih) <= 0.02,
        "calibrated": calibrated1 >= 0.05,
    }
    ok = all(parts.values())
    report_line(
        6,
        "mean-based manipulation",
        ok,
        f"freq3={freq_top:.4f}, payoffs=({totals[0] / phase1:.4f},{totals[1] / phase1:.4f})T "
        f"vs (2.583,1.617)T, bih=({bih[0]:.4f},{bih[1]:.4f}), cal1={calibrated1:.4f}, "
        f"{time.time() - t0:.0f}s",
    )
    assert ok, parts


# ---------------------------------------------------------------------------
# 7. Desk-scale reproduction of the Q-learning experiment
# ---------------------------------------------------------------------------

DESK_ROUNDS = 200_000
DESK_SEEDS = 20


@pytest.fixture(scope="module")
def duopoly_runs():
    grid = PriceGrid([round(0.05 * i, 2) for i in range(1, 20)])
    env = UniformDuopoly(0.1, 0.2)
    summaries = []
    for seed in range(DESK_SEEDS):
        s1 = QLearnerStrategy.standard(grid, 0.1)
        s2 = QLearnerStrategy.standard(grid, 0.2)
        result = simulate(grid, (s1, s2), env, (0.1, 0.2), DESK_ROUNDS, "expected", seed=seed)
        last1 = [r.posted_index for r in result.transcripts[0].records[-10:]]
        last2 = [r.posted_index for r in result.transcripts[1].records[-10:]]
        modal = Counter(zip(last1, last2)).most_common(1)[0][0]
        curve = regret_curve(result.transcripts[0])
        _, plausible = minimize_over_cost(curve, CostRange(0.1, 0.9))
        summaries.append(
            {
                "modal": (grid.levels[modal[0]], grid.levels[modal[1]]),
                "plausible": plausible,
                "at_true_cost": curve.value(0.1),
            }
        )
    return summaries


def test_criterion_07_desk_scale_reproduction(duopoly_runs):
    modal_hits = sum(s["modal"] == (0.6, 0.65) for s in duopoly_runs)
    order_hits = sum(s["plausible"] < s["at_true_cost"] for s in duopoly_runs)
    med_plausible = float(np.median([s["plausible"] for s in duopoly_runs]))
    med_true_cost = float(np.median([s["at_true_cost"] for s in duopoly_runs]))
    in_band = 1e-3 <= med_plausible <= 1e-2 and 1e-3 <= med_true_cost <= 1e-2

    parts = {
        "modal": modal_hits >= 10,
        "ordering": order_hits >= 18,
        "band": in_band,
    }
    ok = all(parts.values())
    report_line(
        7,
        "desk-scale reproduction",
        ok,
        f"modal {modal_hits}/20, ordering {order_hits}/20, "
        f"median plausible {med_plausible:.4f} and at-true-cost {med_true_cost:.4f} "
        f"vs band [1e-3, 1e-2]",
    )
    # The magnitude band cannot be met at this horizon: even a zero-regret
    # best responder's estimated plausible regret is about 1.5e-2 here, since
    # the propensity weights reach k/explore_eps = 1900 and the per-price
    # maxima rectify that noise. The paper-scale horizon (1e6 rounds) brings
    # the true-regret magnitudes into the band but the desk-scale estimates
    # stay a factor ~5 above it. Recorded in the decisions ledger; the first
    # two pattern checks are the reproduction's substance and must hold.
    assert ok, parts


# ---------------------------------------------------------------------------
# 8. Aggregated audit against the exact-distribution audit
# ---------------------------------------------------------------------------


def test_criterion_08_aggregated_audit():
    t0 = time.time()
    eta, rounds = 1e-3, 20_000
    table = manipulation_valuation_table(0.005)
    grid = PriceGrid([0.0, 1.0, 2.0, 3.0])
    bounds = reward_bounds(table, grid, (0.0, 0.0))
    learners = (MWUStrategy.fresh(4, eta, *bounds), MWUStrategy.fresh(4, eta, *bounds))
    result = simulate(grid, learners, table, (0.0, 0.0), rounds, "expected", seed=11)

    # Per-step sup-norm drift of both learners' distributions stays under eta.
    drift_ok = True
    for tr in result.transcripts:
        prev = tr.records[0].distribution.dense(4)
        for rec in tr.records[1:]:
            cur = rec.distribution.dense(4)
            if np.abs(cur - prev).max() > eta + 1e-12:
                drift_ok = False
                break
            prev = cur

    transcript = result.transcripts[0]
    config = AuditConfig(CostRange(0.0, 1.0), threshold_r=6e-3, confidence_alpha=0.05)
    exact_report = audit(transcript, config)

    gamma = math.log(1.0 / eta) / math.log(rounds)  # drift rate: T ** -gamma = eta
    drift = DriftAssumption.rate(gamma, support_floor=0.3)
    posted = [r.posted_index for r in transcript.records]
    allocs = [r.allocation for r in transcript.records]
    agg_report = audit_aggregated(posted, allocs, grid, drift, config)

    same_verdict = agg_report.verdict == exact_report.verdict
    gap = abs(agg_report.estimated_regret - exact_report.estimated_regret)
    within = gap <= agg_report.error_margin
    ok = drift_ok and same_verdict and within
    report_line(
        8,
        "aggregated audit",
        ok,
        f"drift<=eta {drift_ok}, verdicts {exact_report.verdict}/{agg_report.verdict}, "
        f"|dR|={gap:.4f} vs margin {agg_report.error_margin:.3f}, {time.time() - t0:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 9. Reduction from threshold audits to a regret estimate
# ---------------------------------------------------------------------------


def test_criterion_09_reduction():
    t0 = time.time()
    epsilon, p_bar, failure_rate = 0.05, 3.0, 1e-3
    truth = 0.155
    trials = 10_000
    rng = np.random.default_rng(99)
    hits = 0
    for _ in range(trials):
        def auditor(r):
            answer = "S" if truth <= r else "G"
            if rng.random() < failure_rate:
                answer = "G" if answer == "S" else "S"
            return answer

        estimate = reduction_estimate(auditor, epsilon, p_bar, rng)
        hits += abs(estimate - truth) <= epsilon
    rate = hits / trials
    floor = 1 - p_bar * failure_rate / epsilon - 0.01
    ok = rate >= floor
    report_line(
        9, "reduction to threshold audits", ok, f"accuracy {rate:.4f} >= {floor:.4f}, {time.time() - t0:.0f}s"
    )
    assert ok


# ---------------------------------------------------------------------------
# 10. Indistinguishable ground truths
# ---------------------------------------------------------------------------


def test_criterion_10_indistinguishable_pair():
    t0 = time.time()
    rounds = 50
    dists, low, high = indistinguishable_ground_truths(levels=(1, 2, 3), a=1, rounds=rounds)
    grid = PriceGrid([1.0, 2.0, 3.0])

    identical = all(
        sample_transcript(grid, dists, low, seed) == sample_transcript(grid, dists, high, seed)
        for seed in range(20)
    )
    gap = true_calibrated_regret(dists, high, 0) - true_calibrated_regret(dists, low, 0)
    predicted = F(1) * (F(3) - F(2))
    pessimistic = true_pessimistic_regret(low, dists, 0)

    tracked = 0
    seeds = 200
    delta = None
    for seed in range(seeds):
        transcript = sample_transcript(grid, dists, low, seed)
        if delta is None:
            delta = error_margin(transcript, alpha=0.05)
        estimate = regret_curve(transcript).value(0.0)
        tracked += abs(estimate - float(pessimistic)) <= delta
    frac = tracked / seeds
    parts = {
        "identical": identical,
        "gap": gap == predicted,
        "tracking": frac >= 0.95,
    }
    ok = all(parts.values())
    report_line(
        10,
        "indistinguishable ground truths",
        ok,
        f"identical {identical}, gap {gap} == {predicted}, tracked {frac:.2f} within "
        f"{delta:.2f}, {time.time() - t0:.0f}s",
    )
    assert ok, parts
