"""Ground-truth demand oracles and exact expected-payoff computation.

Two environments are provided: a discrete two-good market driven by a joint
valuation table (exact rational arithmetic), and a duopoly with valuations
i.i.d. uniform on [0,1]^2 (closed-form piecewise-polynomial demand). Demand
oracles are for the simulator and for oracle tests only; the audit never
sees them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Sequence, Union

Numeric = Union[int, float, Fraction]


def _as_fraction(x) -> Fraction:
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x)


@dataclass(frozen=True)
class DiscreteValuationTable:
    """Joint distribution of buyer valuations (v1, v2) over discrete levels.

    Probability entries may depend affinely on the free parameter `epsilon`;
    the table stores the entries already evaluated at that epsilon, exactly.
    """

    v1_levels: tuple[Fraction, ...]
    v2_levels: tuple[Fraction, ...]
    joint_probs: tuple[tuple[Fraction, ...], ...]
    epsilon: Fraction

    def __post_init__(self):
        rows = len(self.v1_levels)
        if len(self.joint_probs) != rows or any(
            len(r) != len(self.v2_levels) for r in self.joint_probs
        ):
            raise ValueError("joint_probs shape does not match valuation levels")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if any(p < 0 for row in self.joint_probs for p in row):
            raise ValueError("negative probability entry at this epsilon")
        total = sum(p for row in self.joint_probs for p in row)
        if total != 1:
            raise ValueError(f"probabilities sum to {total}, expected exactly 1")

    @property
    def price_levels(self) -> tuple[Fraction, ...]:
        """Admissible prices: the (shared) valuation levels."""
        return self.v1_levels

    def diff_distribution(self) -> dict[Fraction, Fraction]:
        """Distribution of v1 - v2."""
        out: dict[Fraction, Fraction] = {}
        for i, v1 in enumerate(self.v1_levels):
            for j, v2 in enumerate(self.v2_levels):
                p = self.joint_probs[i][j]
                if p:
                    out[v1 - v2] = out.get(v1 - v2, Fraction(0)) + p
        return out

    def demand(self, p1: Numeric, p2: Numeric) -> tuple[Fraction, Fraction]:
        return discrete_demand(self, p1, p2)

    @staticmethod
    def from_json(source: Union[str, IO[str], dict]) -> "DiscreteValuationTable":
        """Load from {"v1_levels": [...], "v2_levels": [...], "probs": [[...]], "epsilon": e}.

        Numeric entries may be JSON numbers or exact "a/b" fraction strings.
        """
        if isinstance(source, dict):
            obj = source
        elif hasattr(source, "read"):
            obj = json.load(source)
        else:
            with open(source, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        return DiscreteValuationTable(
            v1_levels=tuple(_as_fraction(v) for v in obj["v1_levels"]),
            v2_levels=tuple(_as_fraction(v) for v in obj["v2_levels"]),
            joint_probs=tuple(tuple(_as_fraction(p) for p in row) for row in obj["probs"]),
            epsilon=_as_fraction(obj.get("epsilon", 0)),
        )


def manipulation_valuation_table(epsilon: Numeric = 0) -> DiscreteValuationTable:
    """The stationary two-good market used by the manipulation demo.

    Valuations live on {0,1,2,3}^2; either good is always worth 3, so the
    buyer never abstains. The epsilon parameter tilts mass between the
    (v1, 3) rows; it must stay at most 1/40 for all entries to be
    non-negative.
    """
    e = _as_fraction(epsilon)
    z = Fraction(0)
    probs = (
        (z, z, z, Fraction(67, 600) + e / 3),
        (z, z, z, Fraction(1, 30) - 4 * e / 3),
        (z, z, z, Fraction(1, 100) + e),
        (Fraction(1, 40), Fraction(9, 25), z, Fraction(23, 50)),
    )
    levels = tuple(Fraction(v) for v in range(4))
    return DiscreteValuationTable(levels, levels, probs, e)


def discrete_demand(
    table: DiscreteValuationTable, p1: Numeric, p2: Numeric
) -> tuple[Fraction, Fraction]:
    """Exact demand split for one round of the discrete market.

    The buyer takes good 1 when v1 - v2 exceeds p1 - p2, good 2 when it falls
    short, and flips a fair coin on ties, so
    x1 = Pr[v1 - v2 > p1 - p2] + (1/2) Pr[v1 - v2 = p1 - p2] and x2 = 1 - x1.
    """
    p1 = _as_fraction(p1)
    p2 = _as_fraction(p2)
    admissible = set(table.price_levels)
    if p1 not in admissible or p2 not in admissible:
        raise ValueError(f"prices must lie on the construction grid {sorted(admissible)}")
    gap = p1 - p2
    x1 = Fraction(0)
    for d, prob in table.diff_distribution().items():
        if d > gap:
            x1 += prob
        elif d == gap:
            x1 += prob / 2
    return x1, 1 - x1


@dataclass(frozen=True)
class UniformDuopoly:
    """Two sellers with unit costs, buyer valuations i.i.d. uniform on [0,1]^2."""

    cost1: float
    cost2: float

    def __post_init__(self):
        for c in (self.cost1, self.cost2):
            if not (0 <= c < 1):
                raise ValueError("costs must lie in [0, 1)")

    def demand(self, p1: float, p2: float) -> tuple[float, float]:
        return uniform_demand(self, p1, p2)


def _clamped_linear_integral(lo: float, hi: float, shift: float) -> float:
    """Integral of clamp(v + shift, 0, 1) dv over [lo, hi] (hi >= lo)."""
    if hi <= lo:
        return 0.0
    # Knots where the integrand switches between 0, linear, and 1.
    a = min(max(-shift, lo), hi)  # below a: integrand 0
    b = min(max(1.0 - shift, lo), hi)  # above b: integrand 1
    linear = (b * b - a * a) / 2.0 + shift * (b - a)
    return linear + (hi - b)


def uniform_demand(env: UniformDuopoly, p1: float, p2: float) -> tuple[float, float]:
    """Closed-form demand: the buyer picks the good maximizing v_i - p_i when
    that maximum is non-negative, otherwise abstains.

    x1(p1, p2) integrates Pr[v2 <= v1 - p1 + p2] over v1 in [p1, 1], i.e.
    the chance good 1 is affordable and weakly preferred (ties have measure
    zero); symmetrically for x2.
    """
    if not (0 <= p1 <= 1 and 0 <= p2 <= 1):
        raise ValueError("prices must lie in [0, 1]")
    x1 = _clamped_linear_integral(p1, 1.0, p2 - p1)
    x2 = _clamped_linear_integral(p2, 1.0, p1 - p2)
    return x1, x2


@dataclass(frozen=True)
class PayoffMatrix:
    """Expected per-round payoffs for each price pair on a finite grid."""

    levels: tuple[Numeric, ...]
    seller1: tuple[tuple[Numeric, ...], ...]
    seller2: tuple[tuple[Numeric, ...], ...]

    def pair(self, i: int, j: int) -> tuple[Numeric, Numeric]:
        return self.seller1[i][j], self.seller2[i][j]

    @property
    def max_payoff(self) -> Numeric:
        return max(
            max(max(row) for row in self.seller1),
            max(max(row) for row in self.seller2),
        )


def expected_payoff_matrix(oracle, levels: Sequence[Numeric], costs: Sequence[Numeric]) -> PayoffMatrix:
    """payoff_i(p1, p2) = (p_i - c_i) * x_i(p1, p2); exact where the oracle is exact."""
    c1, c2 = costs
    m1, m2 = [], []
    for p1 in levels:
        row1, row2 = [], []
        for p2 in levels:
            x1, x2 = oracle.demand(p1, p2)
            row1.append((p1 - c1) * x1)
            row2.append((p2 - c2) * x2)
        m1.append(tuple(row1))
        m2.append(tuple(row2))
    return PayoffMatrix(tuple(levels), tuple(m1), tuple(m2))


def best_pure_equilibrium(matrix: PayoffMatrix):
    """Highest-total-payoff pure Nash equilibrium of the stage game, or None.

    A cell is an equilibrium when neither seller gains from a unilateral
    deviation. Ties on total payoff break toward the lexicographically
    smallest index pair.
    """
    k = len(matrix.levels)
    best = None
    for i in range(k):
        for j in range(k):
            u1, u2 = matrix.seller1[i][j], matrix.seller2[i][j]
            if any(matrix.seller1[i2][j] > u1 for i2 in range(k)):
                continue
            if any(matrix.seller2[i][j2] > u2 for j2 in range(k)):
                continue
            total = u1 + u2
            if best is None or total > best[0]:
                best = (total, (i, j), (u1, u2))
    if best is None:
        return None
    _, pair, payoffs = best
    return (matrix.levels[pair[0]], matrix.levels[pair[1]]), payoffs, pair
