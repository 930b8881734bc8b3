"""Gravity-well community analysis with LLM-scored confirmation bias.

Turns raw comment dumps into per-user confirmation-bias masses (five-level
stance scores folded pairwise through a sign-preserving spread product),
combines them with community mass and ideological distance into an
inverse-square pull force, and validates the simulated exit orders against
observed ones with rank statistics.
"""

from .bias import (
    BiasScore,
    bias_unweighted,
    compute_user_bias,
    normalize_bias,
    otimes,
    pair_contribution,
)
from .gravity import (
    PullForce,
    SubgroupModel,
    ideological_distance,
    pull_force,
    simulate_exit_order,
    subgroup_centroid,
    subgroup_mass,
    user_embedding,
)
from .ingest import (
    Comment,
    CommentContext,
    ExitRecord,
    UserHistory,
    build_threads,
    compute_actual_exit_order,
    extract_parent_contexts,
    parse_comments,
)
from .metrics import (
    CalibrationSample,
    RankSeries,
    evaluate_subreddit,
    normalized_mae,
    quadratic_weighted_kappa,
    spearman_p_value,
    spearman_rho,
)
from .scoring import (
    MockScorer,
    RemoteScorer,
    ScoreCache,
    ScoreKind,
    ScoreLevel,
    ScoreRequest,
    build_alignment_prompt,
    build_support_prompt,
    mock_score,
    parse_model_output,
    score,
)

__version__ = "0.1.0"

__all__ = [
    "BiasScore",
    "CalibrationSample",
    "Comment",
    "CommentContext",
    "ExitRecord",
    "MockScorer",
    "PullForce",
    "RankSeries",
    "RemoteScorer",
    "ScoreCache",
    "ScoreKind",
    "ScoreLevel",
    "ScoreRequest",
    "SubgroupModel",
    "UserHistory",
    "bias_unweighted",
    "build_alignment_prompt",
    "build_support_prompt",
    "build_threads",
    "compute_actual_exit_order",
    "compute_user_bias",
    "evaluate_subreddit",
    "extract_parent_contexts",
    "ideological_distance",
    "mock_score",
    "normalize_bias",
    "normalized_mae",
    "otimes",
    "pair_contribution",
    "parse_comments",
    "parse_model_output",
    "pull_force",
    "quadratic_weighted_kappa",
    "score",
    "simulate_exit_order",
    "spearman_p_value",
    "spearman_rho",
    "subgroup_centroid",
    "subgroup_mass",
    "user_embedding",
]
