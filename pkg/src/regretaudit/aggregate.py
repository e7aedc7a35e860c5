"""Auditing without recorded price distributions.

When a seller's algorithm drifts slowly (per-step sup-norm drift at most
epsilon, or at most T ** -gamma), the empirical distribution of posted
prices over a window centered at each round approximates the true price
distribution. The audit then runs unchanged on the estimated distributions,
with a modified error margin that also pays for the estimation error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Sequence, Union

import numpy as np

from .audit import (
    AuditReport,
    _curve_from_dense,
    _densify,
    _report_from_curve,
    discretization_loss,
)
from .core import (
    AuditConfig,
    PriceDistribution,
    PriceGrid,
    Transcript,
    TranscriptParseError,
    TranscriptRecord,
)
from .core import _parse_header  # reduced files share the full format's header


@dataclass(frozen=True)
class DriftAssumption:
    """How fast the seller's distributions may move, plus the claimed support floor.

    mode "explicit": per-step sup-norm drift at most `epsilon`.
    mode "rate": drift at most T ** -gamma for the audited horizon T.
    support_floor is the claimed minimum probability on true supports.
    """

    mode: str
    epsilon: float | None = None
    gamma: float | None = None
    support_floor: float = 1.0

    def __post_init__(self):
        if self.mode == "explicit":
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("explicit mode needs epsilon > 0")
        elif self.mode == "rate":
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("rate mode needs gamma > 0")
        else:
            raise ValueError("mode must be 'explicit' or 'rate'")
        if not (0 < self.support_floor <= 1):
            raise ValueError("support_floor must be in (0, 1]")

    @staticmethod
    def explicit(epsilon: float, support_floor: float) -> "DriftAssumption":
        return DriftAssumption("explicit", epsilon=epsilon, support_floor=support_floor)

    @staticmethod
    def rate(gamma: float, support_floor: float) -> "DriftAssumption":
        return DriftAssumption("rate", gamma=gamma, support_floor=support_floor)

    def step_drift(self, rounds: int) -> float:
        return self.epsilon if self.mode == "explicit" else float(rounds) ** -self.gamma


@dataclass(frozen=True)
class DistributionEstimate:
    """Windowed empirical distributions with the guaranteed sup-norm error."""

    freqs: np.ndarray  # (T, k)
    error_bound: float  # rho: holds for every round with probability 1 - delta
    window: int


@dataclass(frozen=True)
class InsufficientData:
    """Aggregated auditing cannot proceed: estimation error reaches the
    claimed support floor, so estimated and true supports need not match."""

    rho_prime: float
    support_floor: float

    @property
    def message(self) -> str:
        return (
            "insufficient data for aggregated audit: distribution error bound "
            f"{self.rho_prime:.6g} is not below the support floor {self.support_floor:.6g}"
        )


def estimate_distributions(
    prices: Sequence[int], grid: PriceGrid, drift: DriftAssumption, delta: float
) -> DistributionEstimate:
    """Length-L windowed empirical distributions around every round.

    The window length balances sampling noise against drift accumulated over
    the window; boundary windows shift inward instead of shrinking so every
    estimate averages exactly L rounds.
    """
    if not (0 < delta < 1):
        raise ValueError("delta must be in (0, 1)")
    posted = np.asarray(prices, dtype=np.int64)
    T = len(posted)
    k = len(grid)
    if T < 1:
        raise ValueError("empty price sequence")
    eps = drift.step_drift(T)
    log_term = math.log(2.0 * T * k / delta)
    t_opt = (eps * log_term / 2.0) ** (1.0 / 3.0)
    window = math.ceil(log_term / (2.0 * t_opt * t_opt))
    if window > T:
        raise ValueError(
            f"drift too large: window {window} exceeds the {T} available rounds"
        )
    rho = (4.0 * eps * log_term) ** (1.0 / 3.0)
    onehot = np.zeros((T + 1, k))
    onehot[np.arange(1, T + 1), posted] = 1.0
    prefix = np.cumsum(onehot, axis=0)
    starts = np.clip(np.arange(T) - (window - 1) // 2, 0, T - window)
    freqs = (prefix[starts + window] - prefix[starts]) / window
    return DistributionEstimate(freqs, rho, window)


def aggregated_error_margin(
    rounds: int, k: int, p_bar: float, rho_prime: float, support_floor: float, delta: float
) -> float:
    """Verdict margin for audits on estimated distributions: an estimation
    term scaling with rho_prime plus the usual concentration term at the
    claimed floor."""
    estimation = k * (p_bar * rho_prime / support_floor) * (
        1.0 / (support_floor - rho_prime) + 1.0
    )
    concentration = math.sqrt(
        math.log(8.0 * k * k / delta)
        * 2.0
        * (1.0 / support_floor + 1.0) ** 2
        * p_bar
        * p_bar
        / rounds
    )
    return estimation + concentration


def _rho_prime(drift: DriftAssumption, rounds: int, k: int, delta: float) -> float:
    if drift.mode == "rate":
        return (rounds ** -drift.gamma * math.log(8.0 * rounds * k**3 / delta)) ** (1.0 / 3.0)
    return (4.0 * drift.epsilon * math.log(2.0 * rounds * k / delta)) ** (1.0 / 3.0)


def audit_aggregated(
    prices: Sequence[int],
    allocations: Sequence[float],
    grid: PriceGrid,
    drift: DriftAssumption,
    config: AuditConfig,
) -> AuditReport | InsufficientData:
    """Run the audit pipeline on windowed empirical distributions.

    A price enters a round's estimated support when its windowed frequency
    reaches rho_prime (frequencies below the estimation error are
    indistinguishable from zero); the posted price always stays in. Returns
    InsufficientData instead of a verdict when rho_prime reaches the claimed
    support floor.
    """
    posted = list(int(p) for p in prices)
    T = len(posted)
    if T < 1:
        raise ValueError("empty transcript")
    if len(allocations) != T:
        raise ValueError("prices and allocations must have equal length")
    k = len(grid)
    delta = config.confidence_alpha
    rho_prime = _rho_prime(drift, T, k, delta)
    if rho_prime >= drift.support_floor:
        return InsufficientData(rho_prime, drift.support_floor)
    est = estimate_distributions(posted, grid, drift, delta)
    records = []
    for t in range(T):
        freqs = est.freqs[t]
        keep = freqs >= rho_prime
        keep[posted[t]] = True
        support = np.flatnonzero(keep)
        probs = freqs[support]
        probs = probs / probs.sum()
        records.append(
            TranscriptRecord(
                t + 1,
                posted[t],
                float(allocations[t]),
                PriceDistribution(support.tolist(), probs.tolist()),
            )
        )
    transcript = Transcript(grid, records)
    dense = _densify(transcript)
    curve = _curve_from_dense(dense)
    delta_margin = aggregated_error_margin(
        T, k, grid.max_level, rho_prime, drift.support_floor, delta
    )
    gap = discretization_loss(grid) if config.endogenous else 0.0
    return _report_from_curve(curve, config, delta_margin, T, gap, "aggregated")


def drift_horizon_floor(gamma: float, k: int, delta: float) -> float:
    """Numerical solution of the horizon below which the drift-rate argument
    cannot even separate estimation error from the logarithmic slack: the
    supremum of t with t ** (gamma / 2) <= log(8 t k^3 / delta)."""

    def g(t: float) -> float:
        return t ** (gamma / 2.0) - math.log(8.0 * t * k**3 / delta)

    hi = 2.0
    while g(hi) <= 0:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    lo = hi / 2.0
    if g(lo) > 0 and lo <= 2.0:
        return 0.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return hi


def minimum_rounds_for_aggregated_audit(
    gamma: float,
    support_floor: float,
    k: int,
    p_bar: float,
    r: float,
    delta: float,
) -> float:
    """Horizon sufficient for the aggregated audit's two-sided guarantee.

    Deliberately conservative; intended as a diagnostic, not a gate.
    """
    t0 = drift_horizon_floor(gamma, k, delta)
    term2 = (4.0 * (8.0 * p_bar * k + r * support_floor) ** 3 / (r**3 * support_floor**6)) ** (
        2.0 / gamma
    )
    term3 = (
        (16.0 * k * k / (r * r))
        * math.log(8.0 * k * k / delta)
        * (1.0 / support_floor + 1.0) ** 2
        * p_bar
        * p_bar
    )
    term4 = (4.0 / support_floor**3) ** (2.0 / gamma)
    return max(t0, term2, term3, term4) + 1.0


def read_price_series(source: Union[str, IO[str]]):
    """Read a reduced transcript (records may lack support/probs fields).

    Returns (grid, posted indices, allocations). Full transcript files are
    accepted; their distribution fields are ignored.
    """
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_price_series(fh)
    lines = [ln for ln in (raw.rstrip("\n") for raw in source) if ln.strip()]
    if not lines:
        raise TranscriptParseError(1, "missing header line")
    grid = _parse_header(lines[0], 1)
    posted: list[int] = []
    allocations: list[float] = []
    for i, ln in enumerate(lines[1:]):
        line_no = i + 2
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as e:
            raise TranscriptParseError(line_no, f"bad JSON: {e.msg}") from e
        if not isinstance(obj, dict) or "posted" not in obj or "alloc" not in obj:
            raise TranscriptParseError(line_no, 'record needs "posted" and "alloc"')
        if obj.get("t") != i + 1:
            raise TranscriptParseError(line_no, f"expected round {i + 1}, rounds must be contiguous")
        posted.append(int(obj["posted"]))
        allocations.append(float(obj["alloc"]))
    return grid, posted, allocations
