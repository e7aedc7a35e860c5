"""Audit seller pricing transcripts for algorithmic non-collusion.

The audit estimates the pessimistic calibrated regret of a transcript,
minimizes it over a range of plausible costs, and compares the result plus a
concentration margin against a regret threshold. A two-seller market
simulator generates auditable transcripts from Q-learning,
multiplicative-weights, fixed-price, and manipulator strategies.
"""

from .aggregate import (
    DistributionEstimate,
    DriftAssumption,
    InsufficientData,
    audit_aggregated,
    estimate_distributions,
    read_price_series,
)
from .audit import (
    AffineInCost,
    AllocationEstimate,
    AuditReport,
    PWLInCost,
    audit,
    discretization_loss,
    error_margin,
    estimate_allocations,
    minimize_over_cost,
    pairwise_regret,
    regret_curve,
)
from .core import (
    AuditConfig,
    CostRange,
    PriceDistribution,
    PriceGrid,
    Transcript,
    TranscriptParseError,
    TranscriptRecord,
    TranscriptValidationError,
    Violation,
    read_transcript,
    validate,
    write_transcript,
)
from .market import (
    DiscreteValuationTable,
    PayoffMatrix,
    UniformDuopoly,
    best_pure_equilibrium,
    discrete_demand,
    expected_payoff_matrix,
    manipulation_valuation_table,
    uniform_demand,
)
from .oracles import (
    GroundTruth,
    SwapMap,
    best_in_hindsight_regret,
    brute_force_estimator_expectation,
    brute_force_realized_average,
    calibrated_regret_of_swap,
    indistinguishable_ground_truths,
    materialize_truth,
    pessimistic_allocation,
    reduction_estimate,
    sample_transcript,
    true_calibrated_regret,
    true_pessimistic_regret,
)
from .sellers import (
    ManipulatorSchedule,
    MWULearnerState,
    QLearnerState,
    SimulationResult,
    is_mean_based_violation,
    manipulator_next,
    mean_based_gamma,
    mwu_step,
    q_step,
    simulate,
)

__version__ = "0.1.0"
