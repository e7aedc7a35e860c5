"""Pricing strategies and the two-seller market simulator.

Strategies: stateless Q-learning with an epsilon-greedy policy, a
multiplicative-weights learner (full feedback, the canonical mean-based
no-regret algorithm), fixed prices, and the two-phase manipulator schedule.
Each round the simulator records, per seller, the posted price, the observed
allocation, and the price distribution it was drawn from, which is exactly
what the audit consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import PriceDistribution, PriceGrid, Transcript, TranscriptRecord

# Weights this far below the leader are dropped from the emitted support;
# core rejects probabilities under 1e-15, so the support must stay explicit.
_MWU_SUPPORT_PRUNE = 1e-12


# ---------------------------------------------------------------------------
# Q-learning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QLearnerState:
    """Stateless Q-learning: one continuation-payoff estimate per grid price."""

    q_values: np.ndarray
    learning_rate: float
    discount: float
    explore_eps: float
    rng_stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "q_values", np.asarray(self.q_values, dtype=float))
        if not (0 < self.learning_rate <= 1):
            raise ValueError("learning_rate must be in (0, 1]")
        if not (0 <= self.discount < 1):
            raise ValueError("discount must be in [0, 1)")
        if not (0 <= self.explore_eps <= 1):
            raise ValueError("explore_eps must be in [0, 1]")


def optimistic_q_init(grid: PriceGrid, cost: float, discount: float) -> np.ndarray:
    """Initialize every entry at the highest attainable continuation payoff."""
    top = (grid.max_level - cost) / (1.0 - discount)
    return np.full(len(grid), top)


@lru_cache(maxsize=None)
def greedy_distribution(k: int, explore_eps: float, argmax_index: int) -> PriceDistribution:
    """Epsilon-greedy distribution: explore uniformly with probability eps."""
    if explore_eps == 0.0:
        return PriceDistribution.point_mass(argmax_index)
    base = explore_eps / k
    probs = [base] * k
    probs[argmax_index] += 1.0 - explore_eps
    return PriceDistribution(range(k), probs)


def q_step(
    state: QLearnerState, observed_utility: float, posted: int
) -> tuple[QLearnerState, PriceDistribution]:
    """One bandit update: only the posted price's entry moves, bootstrapping
    from the prior-step table, and the next epsilon-greedy distribution is
    drawn from the updated table (lowest index wins argmax ties)."""
    q = state.q_values.copy()
    target = observed_utility + state.discount * float(q.max())
    q[posted] = (1.0 - state.learning_rate) * q[posted] + state.learning_rate * target
    new_state = replace(state, q_values=q)
    return new_state, greedy_distribution(len(q), state.explore_eps, int(q.argmax()))


# ---------------------------------------------------------------------------
# Multiplicative weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MWULearnerState:
    """Cumulative reward per price; weights are (1 + step_size) ** cumulative."""

    cumulative_rewards: np.ndarray
    step_size: float

    def __post_init__(self):
        object.__setattr__(
            self, "cumulative_rewards", np.asarray(self.cumulative_rewards, dtype=float)
        )
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


def mwu_distribution(state: MWULearnerState) -> PriceDistribution:
    sigma = state.cumulative_rewards
    w = np.exp((sigma - sigma.max()) * math.log1p(state.step_size))
    probs = w / w.sum()
    return PriceDistribution.from_dense(probs, keep_above=_MWU_SUPPORT_PRUNE)


def mwu_step(
    state: MWULearnerState, full_feedback_rewards: Sequence[float]
) -> tuple[MWULearnerState, PriceDistribution]:
    """Add one reward per price (each in [0, 1]) and reweight."""
    r = np.asarray(full_feedback_rewards, dtype=float)
    if r.min() < -1e-12 or r.max() > 1.0 + 1e-12:
        raise ValueError("rewards must lie in [0, 1] after normalization")
    new_state = replace(state, cumulative_rewards=state.cumulative_rewards + r)
    return new_state, mwu_distribution(new_state)


def mean_based_gamma(step_size: float, horizon: int) -> float:
    """Smallest gamma for which this step size keeps the learner gamma-mean-based.

    A price trailing the cumulative-reward leader by more than gamma * horizon
    has weight ratio at most (1 + step_size) ** -(gamma * horizon); the
    returned gamma is where that ratio equals gamma.
    """
    log1p = math.log1p(step_size)

    def f(g: float) -> float:
        return g * horizon * log1p + math.log(g)

    lo, hi = 1e-12, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return hi


def is_mean_based_violation(
    state: MWULearnerState, posted: int, gamma: float, horizon: int
) -> bool:
    """True when the posted price trails the cumulative-reward leader by more
    than gamma * horizon yet was posted with probability above gamma."""
    sigma = state.cumulative_rewards
    if float(sigma.max() - sigma[posted]) <= gamma * horizon:
        return False
    prob = mwu_distribution(state).prob_of(posted)
    return prob > gamma


# ---------------------------------------------------------------------------
# Manipulator schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManipulatorSchedule:
    """Post one price for a burn-in block, then switch and hold."""

    phase1_rounds: int
    phase1_price: float
    phase2_rounds: int
    phase2_price: float

    def __post_init__(self):
        if self.phase1_rounds <= 0 or self.phase2_rounds <= 0:
            raise ValueError("phase lengths must be positive")

    @property
    def total_rounds(self) -> int:
        return self.phase1_rounds + self.phase2_rounds

    @staticmethod
    def standard(phase1_rounds: int, phase1_price: float = 1.0, phase2_price: float = 3.0) -> "ManipulatorSchedule":
        return ManipulatorSchedule(
            phase1_rounds, phase1_price, math.ceil(1.1 * phase1_rounds), phase2_price
        )


def manipulator_next(schedule: ManipulatorSchedule, round_no: int) -> float:
    """Price level for the given 1-based round."""
    if not (1 <= round_no <= schedule.total_rounds):
        raise ValueError(f"round {round_no} outside horizon 1..{schedule.total_rounds}")
    return schedule.phase1_price if round_no <= schedule.phase1_rounds else schedule.phase2_price


# ---------------------------------------------------------------------------
# Strategy wrappers driven by the simulator
# ---------------------------------------------------------------------------


class QLearnerStrategy:
    """Bandit feedback: consumes only the posted price's utility."""

    def __init__(self, state: QLearnerState):
        self.state = state
        self._dist = greedy_distribution(
            len(state.q_values), state.explore_eps, int(state.q_values.argmax())
        )
        self._cdf_cache: dict[int, np.ndarray] = {}

    @staticmethod
    def standard(
        grid: PriceGrid,
        cost: float,
        learning_rate: float = 0.05,
        discount: float = 0.99,
        explore_eps: float = 0.01,
        init: np.ndarray | None = None,
    ) -> "QLearnerStrategy":
        q0 = optimistic_q_init(grid, cost, discount) if init is None else np.asarray(init, float)
        return QLearnerStrategy(QLearnerState(q0, learning_rate, discount, explore_eps))

    def distribution(self) -> PriceDistribution:
        return self._dist

    def dense_cdf(self, k: int) -> np.ndarray:
        # Epsilon-greedy distributions are interned per argmax, so identity
        # is a stable cache key.
        cached = self._cdf_cache.get(id(self._dist))
        if cached is None:
            cached = np.cumsum(self._dist.dense(k))
            self._cdf_cache[id(self._dist)] = cached
        return cached

    def observe(self, posted: int, utility: float, utility_vector) -> None:
        self.state, self._dist = q_step(self.state, utility, posted)


class MWUStrategy:
    """Full feedback: consumes the whole utility vector, normalized to [0, 1]."""

    def __init__(self, state: MWULearnerState, reward_lo: float, reward_hi: float):
        if reward_hi <= reward_lo:
            raise ValueError("reward bounds must satisfy lo < hi")
        self.state = state
        self.reward_lo = reward_lo
        self.reward_hi = reward_hi
        self._dist = mwu_distribution(state)
        self._cdf: np.ndarray | None = None

    @staticmethod
    def fresh(k: int, step_size: float, reward_lo: float, reward_hi: float) -> "MWUStrategy":
        return MWUStrategy(MWULearnerState(np.zeros(k), step_size), reward_lo, reward_hi)

    def distribution(self) -> PriceDistribution:
        return self._dist

    def dense_cdf(self, k: int) -> np.ndarray:
        if self._cdf is None:
            self._cdf = np.cumsum(self._dist.dense(k))
        return self._cdf

    def observe(self, posted: int, utility: float, utility_vector) -> None:
        rewards = (np.asarray(utility_vector, float) - self.reward_lo) / (
            self.reward_hi - self.reward_lo
        )
        self.state, self._dist = mwu_step(self.state, rewards)
        self._cdf = None


class FixedPriceStrategy:
    def __init__(self, index: int):
        self.index = index
        self._dist = PriceDistribution.point_mass(index)
        self._cdf: np.ndarray | None = None

    def distribution(self) -> PriceDistribution:
        return self._dist

    def dense_cdf(self, k: int) -> np.ndarray:
        if self._cdf is None:
            self._cdf = np.cumsum(self._dist.dense(k))
        return self._cdf

    def observe(self, posted: int, utility: float, utility_vector) -> None:
        pass


class ManipulatorStrategy:
    """Plays the schedule's price for the current round, deterministically."""

    def __init__(self, schedule: ManipulatorSchedule, grid: PriceGrid):
        self.schedule = schedule
        self._round = 1
        self._indices = {
            level: grid.levels.index(float(level))
            for level in (schedule.phase1_price, schedule.phase2_price)
        }
        self._dists = {
            level: PriceDistribution.point_mass(idx) for level, idx in self._indices.items()
        }
        self._cdfs = {
            level: np.cumsum(d.dense(len(grid))) for level, d in self._dists.items()
        }

    def _level(self) -> float:
        return manipulator_next(self.schedule, self._round)

    def distribution(self) -> PriceDistribution:
        return self._dists[self._level()]

    def dense_cdf(self, k: int) -> np.ndarray:
        return self._cdfs[self._level()]

    def observe(self, posted: int, utility: float, utility_vector) -> None:
        self._round += 1


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationResult:
    transcripts: tuple[Transcript, Transcript]
    payoffs: tuple[np.ndarray, np.ndarray]


def _stream(seed: int, tag: int) -> np.random.Generator:
    # Counter-based generator keyed by (seed, role); round t reads the t-th
    # entry of the pre-generated array, so draws depend only on
    # (seed, round, role), never on evaluation order.
    return np.random.Generator(np.random.Philox(key=[int(seed) % 2**64, tag]))


def payoff_tables(oracle, grid: PriceGrid, costs: Sequence[float]):
    """Per-seller allocation and utility tables indexed [own price, opponent price]."""
    k = len(grid)
    lv = grid.levels
    a1 = np.empty((k, k))
    a2 = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            x1, x2 = oracle.demand(lv[i], lv[j])
            a1[i, j] = float(x1)
            a2[j, i] = float(x2)
    u1 = (np.asarray(lv) - costs[0])[:, None] * a1
    u2 = (np.asarray(lv) - costs[1])[:, None] * a2
    return a1, a2, u1, u2


def reward_bounds(
    oracle, grid: PriceGrid, costs: Sequence[float], feedback_mode: str = "expected"
) -> tuple[float, float]:
    """Affine normalization range for learners needing rewards in [0, 1].

    Expected feedback spans the payoff matrix: [min(0, lowest payoff),
    highest payoff]. Realized feedback pays (price - cost) * {0, 1}, so the
    range must cover the raw margins instead.
    """
    if feedback_mode == "realized":
        margins = [lv - c for lv in grid.levels for c in costs]
        return min(0.0, min(margins)), max(margins)
    _, _, u1, u2 = payoff_tables(oracle, grid, costs)
    lo = min(0.0, float(u1.min()), float(u2.min()))
    hi = max(float(u1.max()), float(u2.max()))
    return lo, hi


def simulate(
    grid: PriceGrid,
    strategies,
    oracle,
    costs: Sequence[float],
    rounds: int,
    feedback_mode: str = "expected",
    seed: int = 0,
) -> SimulationResult:
    """Run two strategies against each other for `rounds` rounds.

    feedback_mode "expected" gives each seller the expected payoff
    (price - cost) * x of every price; "realized" draws the buyer's actual
    decision and gives indicator allocations. Deterministic given the seed.
    """
    if feedback_mode not in ("expected", "realized"):
        raise ValueError("feedback_mode must be 'expected' or 'realized'")
    k = len(grid)
    lv = np.asarray(grid.levels)
    a1, a2, u1, u2 = payoff_tables(oracle, grid, costs)
    alloc_tables = (a1, a2)
    util_tables = (u1, u2)
    action_u = (_stream(seed, 0).random(rounds), _stream(seed, 1).random(rounds))
    realized = feedback_mode == "realized"
    if realized:
        buyer_u = _stream(seed, 2).random((rounds, 3))
        diff_cells = None
        if hasattr(oracle, "diff_distribution"):
            items = sorted(oracle.diff_distribution().items())
            diffs = np.array([float(d) for d, _ in items])
            cum = np.cumsum([float(p) for _, p in items])
            diff_cells = (diffs, cum)

    posteds = ([], [])
    allocs = ([], [])
    dists = ([], [])
    payoffs = (np.empty(rounds), np.empty(rounds))

    for t in range(rounds):
        actions = []
        for i, strat in enumerate(strategies):
            cdf = strat.dense_cdf(k)
            a = int(np.searchsorted(cdf, action_u[i][t], side="right"))
            actions.append(min(a, k - 1))
        if realized:
            vecs = _realized_vectors(
                oracle, lv, actions, buyer_u[t], diff_cells
            )
            util_vecs = [(lv - costs[i]) * vecs[i] for i in range(2)]
        else:
            vecs = [alloc_tables[i][:, actions[1 - i]] for i in range(2)]
            util_vecs = [util_tables[i][:, actions[1 - i]] for i in range(2)]
        for i, strat in enumerate(strategies):
            a = actions[i]
            alloc = float(vecs[i][a])
            util = float(util_vecs[i][a])
            posteds[i].append(a)
            allocs[i].append(alloc)
            dists[i].append(strat.distribution())
            payoffs[i][t] = util
            strat.observe(a, util, util_vecs[i])

    transcripts = tuple(
        Transcript(
            grid,
            [
                TranscriptRecord(t + 1, posteds[i][t], allocs[i][t], dists[i][t])
                for t in range(rounds)
            ],
        )
        for i in range(2)
    )
    return SimulationResult(transcripts, payoffs)


def _realized_vectors(oracle, lv: np.ndarray, actions, draws, diff_cells):
    """Indicator allocation vectors over each seller's own grid for one round."""
    if diff_cells is not None:
        diffs, cum = diff_cells
        cell = int(np.searchsorted(cum, draws[0], side="right"))
        d = diffs[min(cell, len(diffs) - 1)]
        coin = draws[2] < 0.5
        # Buyer takes good 1 when v1 - v2 beats the price gap, coin on ties.
        gaps1 = lv - lv[actions[1]]
        gaps2 = lv[actions[0]] - lv
        vec1 = np.where(d > gaps1, 1.0, np.where(d == gaps1, 1.0 if coin else 0.0, 0.0))
        vec2 = np.where(d < gaps2, 1.0, np.where(d == gaps2, 0.0 if coin else 1.0, 0.0))
        return vec1, vec2
    v1, v2 = draws[0], draws[1]
    m2 = v2 - lv[actions[1]]
    m1 = v1 - lv[actions[0]]
    own1 = v1 - lv
    own2 = v2 - lv
    vec1 = ((own1 >= 0) & (own1 >= m2)).astype(float)
    vec2 = ((own2 >= 0) & (own2 > m1)).astype(float)
    return vec1, vec2


# ---------------------------------------------------------------------------
# Strategy configuration (JSON wire format)
# ---------------------------------------------------------------------------


def strategy_from_config(
    config: dict,
    grid: PriceGrid,
    oracle,
    costs: Sequence[float],
    seller_index: int,
    rounds: int,
    feedback_mode: str = "expected",
):
    """Build a strategy from {"kind": "q"|"mwu"|"fixed"|"manipulator", ...}."""
    kind = config.get("kind")
    cost = costs[seller_index]
    if kind == "q":
        init = config.get("init")
        return QLearnerStrategy.standard(
            grid,
            cost,
            learning_rate=config.get("learning_rate", 0.05),
            discount=config.get("discount", 0.99),
            explore_eps=config.get("explore_eps", 0.01),
            init=None if init is None else np.full(len(grid), float(init)),
        )
    if kind == "mwu":
        lo, hi = reward_bounds(oracle, grid, costs, feedback_mode)
        return MWUStrategy.fresh(len(grid), config["step_size"], lo, hi)
    if kind == "fixed":
        if "index" in config:
            return FixedPriceStrategy(int(config["index"]))
        return FixedPriceStrategy(grid.levels.index(float(config["price"])))
    if kind == "manipulator":
        phase1 = int(config.get("phase1_rounds", math.ceil(rounds / 2.1)))
        schedule = ManipulatorSchedule(
            phase1_rounds=phase1,
            phase1_price=float(config.get("phase1_price", 1.0)),
            phase2_rounds=int(config.get("phase2_rounds", math.ceil(1.1 * phase1))),
            phase2_price=float(config.get("phase2_price", 3.0)),
        )
        return ManipulatorStrategy(schedule, grid)
    raise ValueError(f"unknown strategy kind {kind!r}")
