"""The auditing pipeline.

Counterfactual allocations are estimated by propensity weighting at the
posted price, with a pessimistic fill at prices outside the round's support:
copy the estimate of the nearest supported lower price, or 1 when none
exists. The benefit of substituting price p with q is then affine in the
unknown cost c, so the estimated regret (sum over p of the best substitution
for p) is a convex piecewise-linear function of c. Minimizing it over the
plausible cost range, adding a concentration margin, and comparing against
twice the threshold gives the verdict.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import AuditConfig, CostRange, PriceGrid, Transcript


@dataclass(frozen=True)
class _Dense:
    """Array view of a transcript used by the numeric pipeline."""

    levels: np.ndarray  # (k,)
    probs: np.ndarray  # (T, k) dense distributions, 0 off support
    support: np.ndarray  # (T, k) bool
    posted: np.ndarray  # (T,) grid indices
    alloc: np.ndarray  # (T,)


def _densify(transcript: Transcript) -> _Dense:
    k = len(transcript.grid)
    T = len(transcript)
    probs = np.zeros((T, k))
    support = np.zeros((T, k), dtype=bool)
    posted = np.empty(T, dtype=np.int64)
    alloc = np.empty(T)
    for t, rec in enumerate(transcript.records):
        idx = list(rec.distribution.support)
        probs[t, idx] = rec.distribution.probs
        support[t, idx] = True
        posted[t] = rec.posted_index
        alloc[t] = rec.allocation
    return _Dense(np.asarray(transcript.grid.levels, dtype=float), probs, support, posted, alloc)


@dataclass(frozen=True)
class AllocationEstimate:
    """Per-round, per-price allocation estimates x-hat (may exceed 1)."""

    values: np.ndarray  # (T, k)

    def at(self, t: int, p: int) -> float:
        return float(self.values[t - 1, p])


def _estimate_allocations_dense(d: _Dense) -> np.ndarray:
    T, k = d.probs.shape
    rows = np.arange(T)
    scatter = np.zeros((T, k))
    scatter[rows, d.posted] = d.alloc / d.probs[rows, d.posted]
    # Supported prices keep their propensity value (the posted one) or 0;
    # unsupported prices inherit the nearest supported lower price, else 1.
    out = np.empty((T, k))
    carry = np.ones(T)
    for j in range(k):
        carry = np.where(d.support[:, j], scatter[:, j], carry)
        out[:, j] = carry
    return out


def estimate_allocations(transcript: Transcript) -> AllocationEstimate:
    """Propensity-score allocation table with the pessimistic off-support fill."""
    if len(transcript) < 1:
        raise ValueError("empty transcript")
    return AllocationEstimate(_estimate_allocations_dense(_densify(transcript)))


@dataclass(frozen=True)
class AffineInCost:
    """A regret term as an explicit function of cost: slope * c + intercept."""

    slope: float
    intercept: float

    def __call__(self, c: float) -> float:
        return self.slope * c + self.intercept


def _pairwise_matrices(d: _Dense, xhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slope and intercept arrays of the substitution benefits, shape (k, k)."""
    T = d.probs.shape[0]
    m = d.probs.T @ xhat  # m[p, q] = sum_t pi_t(p) xhat_t(q)
    own = np.diag(m)
    slopes = (own[:, None] - m) / T
    intercepts = (d.levels[None, :] * m - (d.levels * own)[:, None]) / T
    return slopes, intercepts


def pairwise_regret(
    estimate: AllocationEstimate, transcript: Transcript, p: int, q: int
) -> AffineInCost:
    """Average benefit of substituting price p with q, affine in cost."""
    d = _densify(transcript)
    T = d.probs.shape[0]
    w = d.probs[:, p]
    slope = float(np.dot(w, estimate.values[:, p] - estimate.values[:, q]) / T)
    intercept = float(
        np.dot(w, d.levels[q] * estimate.values[:, q] - d.levels[p] * estimate.values[:, p]) / T
    )
    return AffineInCost(slope, intercept)


def _upper_envelope(slopes: np.ndarray, intercepts: np.ndarray) -> list[tuple[int, float]]:
    """Upper envelope of the lines q -> slopes[q] * c + intercepts[q] over all c.

    Returns [(q, c_from), ...] in increasing c order; the first entry starts
    at -inf. Among coincident lines the lowest q wins.
    """
    k = len(slopes)
    # One candidate per distinct slope: the max intercept, lowest q on ties.
    by_slope: dict[float, tuple[float, int]] = {}
    for q in range(k):
        s, b = float(slopes[q]), float(intercepts[q])
        cur = by_slope.get(s)
        if cur is None or b > cur[0] or (b == cur[0] and q < cur[1]):
            by_slope[s] = (b, q)
    lines = sorted((s, b, q) for s, (b, q) in by_slope.items())
    hull: list[tuple[float, float, int, float]] = []  # (slope, intercept, q, c_from)
    for s, b, q in lines:
        while hull:
            s0, b0, q0, c0 = hull[-1]
            x = (b0 - b) / (s - s0)  # new line overtakes hull top from x on
            if x <= c0:
                hull.pop()
                continue
            hull.append((s, b, q, x))
            break
        else:
            hull.append((s, b, q, -math.inf))
    return [(q, c_from) for _, _, q, c_from in hull]


@dataclass(frozen=True)
class PWLInCost:
    """The estimated regret as a convex piecewise-linear function of cost."""

    levels: tuple[float, ...]
    slopes: np.ndarray  # (k, k) substitution-benefit slopes
    intercepts: np.ndarray  # (k, k)
    breakpoints: tuple[float, ...]  # sorted costs where some per-p envelope changes leader

    def pieces(self, p: int) -> list[AffineInCost]:
        """The substitution-benefit lines for price p, indexed by q."""
        return [AffineInCost(float(s), float(b)) for s, b in zip(self.slopes[p], self.intercepts[p])]

    def value(self, c: float) -> float:
        return float(np.sum(np.max(self.slopes * c + self.intercepts, axis=1)))

    def values(self, cs: np.ndarray) -> np.ndarray:
        cs = np.asarray(cs, dtype=float)
        lines = self.slopes[None, :, :] * cs[:, None, None] + self.intercepts[None, :, :]
        return lines.max(axis=2).sum(axis=1)

    def argmax_swap(self, c: float) -> tuple[int, ...]:
        """Best substitution target per price at cost c, lowest q on ties."""
        vals = self.slopes * c + self.intercepts
        best = vals.max(axis=1, keepdims=True)
        return tuple(int(np.argmax(row >= b)) for row, b in zip(vals, best))


def _curve_from_dense(d: _Dense) -> PWLInCost:
    xhat = _estimate_allocations_dense(d)
    slopes, intercepts = _pairwise_matrices(d, xhat)
    bps: set[float] = set()
    for p in range(len(d.levels)):
        env = _upper_envelope(slopes[p], intercepts[p])
        bps.update(c for _, c in env[1:])
    return PWLInCost(tuple(d.levels), slopes, intercepts, tuple(sorted(bps)))


def regret_curve(transcript: Transcript) -> PWLInCost:
    """Estimated regret of the transcript as an explicit function of cost."""
    if len(transcript) < 1:
        raise ValueError("empty transcript")
    return _curve_from_dense(_densify(transcript))


def minimize_over_cost(curve: PWLInCost, cost_range: CostRange) -> tuple[float, float]:
    """Exact minimizer of the convex curve over [lo, hi].

    The minimum of a convex piecewise-linear function over a closed interval
    is attained at an endpoint or at a breakpoint, so candidate enumeration
    is exact. Ties break toward the smallest cost.
    """
    lo, hi = float(cost_range.lo), float(cost_range.hi)
    candidates = sorted({lo, hi} | {b for b in curve.breakpoints if lo < b < hi})
    best_c, best_v = lo, math.inf
    for c in candidates:
        v = curve.value(c)
        if v < best_v:
            best_c, best_v = c, v
    return best_c, best_v


def _error_margin_dense(d: _Dense, alpha: float) -> float:
    T, k = d.probs.shape
    support_min = np.where(d.support, d.probs, np.inf).min(axis=1)
    per_round = (1.0 / support_min + 1.0) ** 2
    p_bar = float(d.levels[-1])
    return (k * p_bar / T) * math.sqrt(2.0 * math.log(2.0 * k * k / alpha) * float(per_round.sum()))


def error_margin(transcript: Transcript, alpha: float) -> float:
    """Concentration allowance added to the estimated regret before the verdict.

    Uses each round's minimum probability over the support only; empty
    supports are a validation error upstream.
    """
    if not (0 < alpha < 1):
        raise ValueError("alpha must be in (0, 1)")
    if len(transcript) < 1:
        raise ValueError("empty transcript")
    return _error_margin_dense(_densify(transcript), alpha)


def discretization_loss(grid: PriceGrid) -> float:
    """Largest gap of the grid inside [0, h], counting both boundary gaps."""
    if grid.continuum_upper is None:
        raise ValueError("endogenous audit requires the grid's continuum upper bound")
    points = [0.0, *grid.levels, grid.continuum_upper]
    return max(b - a for a, b in zip(points, points[1:]))


@dataclass(frozen=True)
class AuditReport:
    """Outcome of one audit with all intermediate quantities."""

    estimated_plausible_cost: float
    estimated_regret: float
    error_margin: float
    discretization_loss: float
    verdict: str  # "PASS" | "FAIL"
    curve_samples: tuple[tuple[float, float], ...]
    threshold_r: float
    confidence_alpha: float
    rounds: int
    swap_at_optimum: tuple[int, ...] = ()
    provenance: str = "exact"

    def to_dict(self) -> dict:
        return {
            "c_tilde": self.estimated_plausible_cost,
            "regret": self.estimated_regret,
            "delta": self.error_margin,
            "d": self.discretization_loss,
            "verdict": self.verdict,
            "curve": [[c, v] for c, v in self.curve_samples],
            "threshold_r": self.threshold_r,
            "alpha": self.confidence_alpha,
            "rounds": self.rounds,
            "swap_at_optimum": list(self.swap_at_optimum),
            "provenance": self.provenance,
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _verdict(regret: float, delta: float, d: float, r: float) -> str:
    # Exact comparison on the computed values: r is the policy knob, not a
    # tolerance band.
    return "PASS" if regret + delta + d <= 2.0 * r else "FAIL"


def _report_from_curve(
    curve: PWLInCost,
    config: AuditConfig,
    delta: float,
    rounds: int,
    d: float,
    provenance: str,
) -> AuditReport:
    c_tilde, regret = minimize_over_cost(curve, config.cost_range)
    lo, hi = config.cost_range.lo, config.cost_range.hi
    sample_cs = sorted({lo, hi, c_tilde} | {b for b in curve.breakpoints if lo < b < hi})
    samples = tuple((c, curve.value(c)) for c in sample_cs)
    return AuditReport(
        estimated_plausible_cost=c_tilde,
        estimated_regret=regret,
        error_margin=delta,
        discretization_loss=d,
        verdict=_verdict(regret, delta, d, config.threshold_r),
        curve_samples=samples,
        threshold_r=config.threshold_r,
        confidence_alpha=config.confidence_alpha,
        rounds=rounds,
        swap_at_optimum=curve.argmax_swap(c_tilde),
        provenance=provenance,
    )


def audit(transcript: Transcript, config: AuditConfig) -> AuditReport:
    """Run the full pipeline and return the verdict with diagnostics.

    PASS means estimated plausible regret + error margin (+ discretization
    loss when the grid is endogenous) is at most twice the threshold.
    """
    if len(transcript) < 1:
        raise ValueError("empty transcript")
    d = _densify(transcript)
    curve = _curve_from_dense(d)
    delta = _error_margin_dense(d, config.confidence_alpha)
    gap = discretization_loss(transcript.grid) if config.endogenous else 0.0
    return _report_from_curve(curve, config, delta, len(transcript), gap, "exact")
