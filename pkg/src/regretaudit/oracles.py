"""Ground-truth quantities the auditor never sees.

These back the simulator and the test suites: exact calibrated regret, the
regret-maximizing completion of partially observed demand, best-in-hindsight
regret, the reduction from threshold audits to a regret estimator, and
brute-force expectations of the audit estimator on instances small enough to
enumerate every realization path.

Exact paths run on fractions.Fraction; floats are converted exactly (every
float is a dyadic rational), so equality assertions are meaningful.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence, Union

import numpy as np

from .core import PriceDistribution, PriceGrid, Transcript, TranscriptRecord

Numeric = Union[int, float, Fraction]


@dataclass(frozen=True)
class GroundTruth:
    """Full allocation vectors per round: values[t][p] over the price grid."""

    levels: tuple[Numeric, ...]
    values: object  # (T, k) ndarray for float work, nested sequences for exact work

    def row(self, t: int) -> Sequence[Numeric]:
        return self.values[t]

    @property
    def rounds(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class SwapMap:
    """A total remapping of grid indices: sigma[p] is the replacement for p."""

    sigma: tuple[int, ...]

    def __post_init__(self):
        k = len(self.sigma)
        if any(not (0 <= q < k) for q in self.sigma):
            raise ValueError("swap map must be total on the grid")

    def __call__(self, p: int) -> int:
        return self.sigma[p]


def materialize_truth(oracle, levels: Sequence[Numeric], opponent_indices: Sequence[int], seller: int) -> GroundTruth:
    """Build per-round allocation vectors from a demand oracle and the
    opponent's realized price trace (as grid indices)."""
    k = len(levels)
    table = []
    for i in range(k):
        row = []
        for j in range(k):
            x1, x2 = oracle.demand(levels[i], levels[j]) if seller == 0 else oracle.demand(levels[j], levels[i])
            row.append(x1 if seller == 0 else x2)
        table.append(row)
    exact = any(isinstance(v, Fraction) for row in table for v in row)
    if exact:
        values = tuple(tuple(table[p][j] for p in range(k)) for j in opponent_indices)
        return GroundTruth(tuple(levels), values)
    arr = np.asarray(table, dtype=float)  # arr[own, opp]
    return GroundTruth(tuple(levels), arr[:, np.asarray(opponent_indices, dtype=int)].T.copy())


# ---------------------------------------------------------------------------
# Dense views and exactness dispatch
# ---------------------------------------------------------------------------


def _dense_dists(distributions, k: int) -> np.ndarray:
    if isinstance(distributions, np.ndarray):
        return distributions
    out = np.zeros((len(distributions), k))
    for t, dist in enumerate(distributions):
        out[t, list(dist.support)] = dist.probs
    return out


def _sparse_dists(distributions, k: int) -> list[list[tuple[int, Fraction]]]:
    out = []
    for dist in distributions:
        if isinstance(dist, PriceDistribution):
            out.append([(i, Fraction(p)) for i, p in zip(dist.support, dist.probs)])
        else:
            out.append([(i, Fraction(p)) for i, p in enumerate(dist) if p > 0])
    return out


def _wants_exact(truth: GroundTruth, cost: Numeric) -> bool:
    if isinstance(cost, Fraction):
        return True
    values = truth.values
    return not (isinstance(values, np.ndarray) and values.dtype != object)


# ---------------------------------------------------------------------------
# Calibrated regret
# ---------------------------------------------------------------------------


def calibrated_regret_of_swap(distributions, truth: GroundTruth, cost: Numeric, swap: SwapMap) -> Numeric:
    """Average benefit of rerouting every posted price p to swap(p)."""
    k = len(truth.levels)
    sparse = _sparse_dists(distributions, k)
    c = Fraction(cost)
    levels = [Fraction(v) for v in truth.levels]
    total = Fraction(0)
    for t, row in enumerate(sparse):
        x = truth.row(t)
        for p, prob in row:
            q = swap(p)
            total += prob * ((levels[q] - c) * Fraction(x[q]) - (levels[p] - c) * Fraction(x[p]))
    return total / len(sparse)


def _exact_pairwise_utility(distributions, truth: GroundTruth, cost: Fraction):
    """u[p][q] = sum_t pi_t(p) (level_q - c) x_t(q), exact."""
    k = len(truth.levels)
    levels = [Fraction(v) for v in truth.levels]
    sparse = _sparse_dists(distributions, k)
    u = [[Fraction(0)] * k for _ in range(k)]
    for t, row in enumerate(sparse):
        x = [Fraction(v) for v in truth.row(t)]
        for p, prob in row:
            for q in range(k):
                u[p][q] += prob * (levels[q] - cost) * x[q]
    return u, len(sparse)


def true_calibrated_regret(distributions, truth: GroundTruth, cost: Numeric) -> Numeric:
    """Maximum average gain over all swap maps, via per-price decomposition.

    Decomposing (best replacement separately for each posted price) equals
    maximizing over all k^k swap maps because the objective is additive over
    the posted price.
    """
    if _wants_exact(truth, cost):
        cost = Fraction(cost)
        u, T = _exact_pairwise_utility(distributions, truth, cost)
        k = len(truth.levels)
        return sum(max(u[p][q] - u[p][p] for q in range(k)) for p in range(k)) / T
    values = truth.as_array()
    T, k = values.shape
    probs = _dense_dists(distributions, k)
    levels = np.asarray(truth.levels, dtype=float)
    m = probs.T @ values  # m[p, q] = sum_t pi_t(p) x_t(q)
    # gains[p, q] = sum_t pi_t(p) [(l_q - c) x_t(q) - (l_p - c) x_t(p)]
    gains = (levels[None, :] - cost) * m - ((levels - cost) * np.diag(m))[:, None]
    return float(gains.max(axis=1).sum() / T)


def pessimistic_allocation(truth: GroundTruth, distributions) -> GroundTruth:
    """The regret-maximizing completion of the ground truth off the supports.

    Supported prices keep their true allocation; an unsupported price copies
    the nearest supported lower price, or 1 when every supported price lies
    above it.
    """
    k = len(truth.levels)
    sparse = _sparse_dists(distributions, k)
    exact = not (isinstance(truth.values, np.ndarray) and truth.values.dtype != object)
    rows = []
    for t, row in enumerate(sparse):
        supported = {i for i, _ in row}
        x = truth.row(t)
        out = []
        carry = 1 if exact else 1.0
        for p in range(k):
            if p in supported:
                carry = x[p]
            out.append(carry)
        rows.append(tuple(out))
    if exact:
        return GroundTruth(truth.levels, tuple(rows))
    return GroundTruth(truth.levels, np.asarray(rows, dtype=float))


def true_pessimistic_regret(truth: GroundTruth, distributions, cost: Numeric) -> Numeric:
    """Calibrated regret of the pessimistic completion: the supremum over all
    ground truths indistinguishable from the observed data."""
    return true_calibrated_regret(distributions, pessimistic_allocation(truth, distributions), cost)


def best_in_hindsight_regret(counterfactual_utilities, realized_utilities) -> float:
    """Per-round gap to the best single fixed price in hindsight.

    counterfactual_utilities[t][p] is the utility price p would have earned in
    round t; realized_utilities[t] is what the seller actually earned.
    """
    u = np.asarray(counterfactual_utilities, dtype=float)
    realized = np.asarray(realized_utilities, dtype=float)
    T = u.shape[0]
    return float((u.sum(axis=0).max() - realized.sum()) / T)


# ---------------------------------------------------------------------------
# Reduction: threshold audits -> regret estimate
# ---------------------------------------------------------------------------


def reduction_estimate(
    auditor: Callable[[float], str],
    epsilon: float,
    p_bar: float,
    rng: np.random.Generator | None = None,
) -> float:
    """Estimate the regret of a fixed transcript from a black-box threshold auditor.

    Runs p_bar/epsilon audits at thresholds epsilon, 2*epsilon, ..., p_bar.
    An S answer at threshold r confines the regret to [0, r], a G answer to
    [r + epsilon, p_bar]. If the intersection of all returned intervals has
    length at most epsilon its midpoint is returned; otherwise (including a
    contradictory, empty intersection) a uniform random guess in [0, p_bar].
    """
    if rng is None:
        rng = np.random.default_rng()
    n_audits = int(round(p_bar / epsilon))
    lo, hi = 0.0, p_bar
    for i in range(1, n_audits + 1):
        r = i * epsilon
        answer = auditor(r)
        if answer == "S":
            hi = min(hi, r)
        elif answer == "G":
            lo = max(lo, r + epsilon)
        else:
            raise ValueError(f"auditor must answer 'S' or 'G', got {answer!r}")
    if lo <= hi and hi - lo <= epsilon:
        return (lo + hi) / 2.0
    return float(rng.uniform(0.0, p_bar))


# ---------------------------------------------------------------------------
# Brute-force expectations over all realization paths
# ---------------------------------------------------------------------------

_MAX_PATHS = 100_000


def _estimator_fill(xhat_supported: dict[int, Fraction], supported: set[int], k: int) -> list[Fraction]:
    """The audit estimator's per-round table for one realization, exact."""
    out = []
    carry = Fraction(1)
    for p in range(k):
        if p in supported:
            carry = xhat_supported.get(p, Fraction(0))
        out.append(carry)
    return out


def _enumerate_paths(distributions, truth: GroundTruth):
    """Yield (path probability, per-round exact estimator tables)."""
    k = len(truth.levels)
    sparse = _sparse_dists(distributions, k)
    total_paths = 1
    for row in sparse:
        total_paths *= len(row)
        if total_paths > _MAX_PATHS:
            raise ValueError("instance too large to enumerate realization paths")
    per_round_choices = []
    for t, row in enumerate(sparse):
        supported = {i for i, _ in row}
        x = [Fraction(v) for v in truth.row(t)]
        choices = []
        for posted, prob in row:
            table = _estimator_fill({posted: x[posted] / prob}, supported, k)
            choices.append((prob, table))
        per_round_choices.append(choices)
    for combo in itertools.product(*per_round_choices):
        path_prob = Fraction(1)
        for prob, _ in combo:
            path_prob *= prob
        yield path_prob, [table for _, table in combo]


def _pairwise_terms(distributions, tables, levels, cost: Fraction):
    """Substitution-benefit matrix of the estimator for one realization path."""
    k = len(levels)
    sparse = _sparse_dists(distributions, k)
    T = len(sparse)
    r = [[Fraction(0)] * k for _ in range(k)]
    for t, row in enumerate(sparse):
        xhat = tables[t]
        for p, prob in row:
            for q in range(k):
                r[p][q] += prob * ((levels[q] - cost) * xhat[q] - (levels[p] - cost) * xhat[p])
    return [[v / T for v in row] for row in r]


def brute_force_estimator_expectation(distributions, truth: GroundTruth, cost: Numeric) -> Fraction:
    """Exact expectation of the audit estimator over every realization path.

    The expectation is taken where the estimator is linear in the data: on
    the per-pair substitution benefits. The convex assembly (sum over p of
    the best substitution) is then applied to the expected terms, which is
    the quantity the concentration analysis centers the estimator on. See
    brute_force_realized_average for the path average of the assembled value.
    """
    k = len(truth.levels)
    levels = [Fraction(v) for v in truth.levels]
    cost = Fraction(cost)
    expected = [[Fraction(0)] * k for _ in range(k)]
    for path_prob, tables in _enumerate_paths(distributions, truth):
        r = _pairwise_terms(distributions, tables, levels, cost)
        for p in range(k):
            for q in range(k):
                expected[p][q] += path_prob * r[p][q]
    return sum(max(expected[p][q] for q in range(k)) for p in range(k))


def brute_force_realized_average(distributions, truth: GroundTruth, cost: Numeric) -> Fraction:
    """Probability-weighted average of the fully assembled estimate per path.

    Averaging after the max is at least brute_force_estimator_expectation
    (convexity of the max), strictly so on generic instances.
    """
    k = len(truth.levels)
    levels = [Fraction(v) for v in truth.levels]
    cost = Fraction(cost)
    total = Fraction(0)
    for path_prob, tables in _enumerate_paths(distributions, truth):
        r = _pairwise_terms(distributions, tables, levels, cost)
        total += path_prob * sum(max(r[p][q] for q in range(k)) for p in range(k))
    return total


# ---------------------------------------------------------------------------
# Indistinguishable ground truths and transcript sampling
# ---------------------------------------------------------------------------


def indistinguishable_ground_truths(
    levels: Sequence[Numeric] = (1, 2, 3),
    a: Numeric = 1,
    rounds: int = 8,
    mode: str = "uniform",
) -> tuple[list[PriceDistribution], GroundTruth, GroundTruth]:
    """Two ground truths that no transcript can tell apart.

    Every round's distribution avoids the top price. Both truths allocate
    `a` at every lower price; they disagree only at the top price (0 versus
    a), which is never posted, so sampled transcripts coincide while the
    calibrated regrets differ by a * (top level - second level).

    mode "uniform" spreads each round's distribution over all lower prices;
    mode "point" posts the second-highest price deterministically.
    """
    k = len(levels)
    if k < 2:
        raise ValueError("need at least two price levels")
    if mode == "uniform":
        dist = PriceDistribution(range(k - 1), [1.0 / (k - 1)] * (k - 1))
    elif mode == "point":
        dist = PriceDistribution.point_mass(k - 2)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    distributions = [dist] * rounds
    a = Fraction(a)
    low = tuple(tuple([a] * (k - 1) + [Fraction(0)]) for _ in range(rounds))
    high = tuple(tuple([a] * (k - 1) + [a]) for _ in range(rounds))
    lv = tuple(Fraction(v) for v in levels)
    return distributions, GroundTruth(lv, low), GroundTruth(lv, high)


def sample_transcript(
    grid: PriceGrid,
    distributions: Sequence[PriceDistribution],
    truth: GroundTruth,
    seed: int,
) -> Transcript:
    """Draw posted prices from the given schedule and read allocations off the
    ground truth; the audit-side view of a fixed environment."""
    rng = np.random.default_rng(seed)
    records = []
    for t, dist in enumerate(distributions):
        u = rng.random()
        acc = 0.0
        posted = dist.support[-1]
        for i, p in zip(dist.support, dist.probs):
            acc += p
            if u < acc:
                posted = i
                break
        records.append(TranscriptRecord(t + 1, posted, float(truth.row(t)[posted]), dist))
    return Transcript(grid, records)
