"""Coverage-controlled uncertainty sets over token-level explanations.

Calibrate a selection threshold on held-out scored questions so that the
expected fraction of missed ground-truth tokens stays below a user-chosen
level, with an optional robust mode certifying the guarantee under bounded
synonym substitutions.
"""

from .calibrate import (
    CalibrationResult,
    RiskCurve,
    adjusted_bound,
    calibrate_exact,
    calibrate_grid,
    critical_thresholds,
    empirical_risk,
    loss,
    risk_curve,
    uniform_grid,
)
from .core import (
    CalibrationExample,
    Dataset,
    DatasetError,
    GroundTruthExplanation,
    ImportanceScores,
    TokenizedQuestion,
    load_dataset,
    split_dataset,
    validate_example,
    write_dataset,
)
from .robust import (
    BallBudgetError,
    BallSpec,
    RobustUncertaintySet,
    SynonymLexicon,
    ball_size,
    build_robust_set,
    enumerate_ball,
    evaluate_robust,
    inject_noise,
    load_lexicon,
    robust_score,
    synonym_set,
)
from .scorer import (
    ScoreCache,
    ScorerError,
    ScorerSpec,
    cache_key,
    make_scorer,
    oracle_noise_score,
    score,
    truth_map,
)
from .sets import (
    EvaluationReport,
    UncertaintySet,
    build_set,
    evaluate,
    predict,
    predict_batch,
)
from .sim import (
    CoverageReport,
    SyntheticConfig,
    TrialResult,
    generate_synthetic_dataset,
    run_coverage_experiment,
    run_trial,
    summarize,
    synthetic_lexicon,
)

__version__ = "0.1.0"

__all__ = [
    "BallBudgetError",
    "BallSpec",
    "CalibrationExample",
    "CalibrationResult",
    "CoverageReport",
    "Dataset",
    "DatasetError",
    "EvaluationReport",
    "GroundTruthExplanation",
    "ImportanceScores",
    "RiskCurve",
    "RobustUncertaintySet",
    "ScoreCache",
    "ScorerError",
    "ScorerSpec",
    "SynonymLexicon",
    "SyntheticConfig",
    "TokenizedQuestion",
    "TrialResult",
    "UncertaintySet",
    "adjusted_bound",
    "ball_size",
    "build_robust_set",
    "build_set",
    "cache_key",
    "calibrate_exact",
    "calibrate_grid",
    "critical_thresholds",
    "empirical_risk",
    "enumerate_ball",
    "evaluate",
    "evaluate_robust",
    "generate_synthetic_dataset",
    "inject_noise",
    "load_dataset",
    "load_lexicon",
    "loss",
    "make_scorer",
    "oracle_noise_score",
    "predict",
    "predict_batch",
    "risk_curve",
    "robust_score",
    "run_coverage_experiment",
    "run_trial",
    "score",
    "split_dataset",
    "summarize",
    "synonym_set",
    "synthetic_lexicon",
    "truth_map",
    "uniform_grid",
    "validate_example",
    "write_dataset",
]
