"""Online learning for strategic interactions with hidden-type confounding.

The package simulates an episodic principal-agent environment in which hidden
agent types bias both rewards and dynamics, estimates candidate models from
aggregated data via minimax instrumented losses, plans optimistically over the
surviving candidates, and ships ground-truth diagnostics plus an experiment
command line.
"""

from .diagnostics import (
    DiagnosticWitness,
    NaiveBaselineReport,
    OccupancyTable,
    RatioResult,
    RegretCurve,
    deterministic_policy_tables,
    ill_posedness,
    naive_baseline,
    occupancy,
    occupancy_mse,
    regret_curve,
    transfer_term,
)
from .driver import (
    EpisodeRecord,
    RunCaps,
    RunConfig,
    RunResult,
    mixture_value,
    run_learner,
)
from .errors import (
    CapacityError,
    ConfigError,
    InvalidIndexError,
    ParseError,
    RealizabilityError,
    StrategicMDPError,
    ValidationError,
)
from .estimation import (
    BetaLevels,
    ConfidenceSets,
    LossEvaluator,
    StepData,
    StepDataset,
    build_confidence_sets,
    confidence_levels,
    mean_map_losses,
    reward_losses,
    transition_losses_general,
)
from .hypotheses import (
    ClassCaps,
    ClassSizes,
    HypothesisClasses,
    RealizabilityReport,
    check_realizability,
    close_classes,
    close_discriminators,
    close_value_targets,
    iter_residuals,
    source_feedback_mix,
    source_projection,
)
from .model import (
    Grid,
    LearnerKnowledge,
    MixturePolicy,
    Policy,
    StrategicModel,
    Trajectory,
    TrajectoryStep,
    TransitionMode,
    best_response,
    env_step,
    feedback_by_type,
    make_rng,
    rollout,
    sample_step_batch,
)
from .planning import (
    AggregatedMDP,
    CandidateAggregates,
    PlanResult,
    SelectionMode,
    SelectionResult,
    aggregate,
    aggregate_mean_map,
    discretize_gaussian,
    evaluate_policy,
    optimistic_select,
    policy_value,
    true_aggregated_model,
    value_iteration,
)
from .scenarios import GENERATORS, Scenario, build_scenario

__version__ = "0.1.0"
