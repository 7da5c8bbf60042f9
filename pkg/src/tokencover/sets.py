"""Uncertainty sets over token positions.

At threshold lambda, a question's uncertainty set keeps every position whose
importance score is at least 1 - lambda. Sets grow monotonically with lambda:
lambda = 0 keeps only scores exactly 1, lambda = 1 keeps everything.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

from .calibrate import CalibrationResult, loss
from .core import GroundTruthExplanation, ImportanceScores, TokenizedQuestion
from .scorer import ScorerError, ScorerSpec, _ScorerBase, make_scorer


@dataclass(frozen=True)
class UncertaintySet:
    """Selected token positions for one question at a fixed threshold."""

    question_id: str
    indices: frozenset[int]
    tokens: tuple[tuple[int, str], ...]
    lambda_used: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "indices", frozenset(int(j) for j in self.indices))
        object.__setattr__(self, "tokens", tuple((int(j), str(t)) for j, t in self.tokens))

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class EvaluationReport:
    question_id: str
    loss: float
    set_size: int
    truth_size: int
    covered: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "loss": self.loss,
            "set_size": self.set_size,
            "truth_size": self.truth_size,
            "covered": self.covered,
        }


def build_set(question: TokenizedQuestion, scores: ImportanceScores, lam: float) -> UncertaintySet:
    """Keep every position j with scores[j] >= 1 - lam (ties included)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    if len(scores) != len(question.tokens):
        raise ValueError(
            f"scores length {len(scores)} does not match {len(question.tokens)} tokens"
        )
    cutoff = 1.0 - lam
    indices = [j for j, v in enumerate(scores.values) if v >= cutoff]
    return UncertaintySet(
        question_id=question.id,
        indices=frozenset(indices),
        tokens=tuple((j, question.tokens[j]) for j in indices),
        lambda_used=float(lam),
    )


def _resolve_scorer(scorer: _ScorerBase | ScorerSpec) -> _ScorerBase:
    return make_scorer(scorer) if isinstance(scorer, ScorerSpec) else scorer


def _check_scorer_identity(scorer: _ScorerBase, calibration: CalibrationResult, strict: bool) -> None:
    if calibration.scorer_id is not None and scorer.identity != calibration.scorer_id:
        msg = (
            f"scorer {scorer.identity!r} does not match the calibration-time scorer "
            f"{calibration.scorer_id!r}; the risk guarantee does not transfer"
        )
        if strict:
            raise ScorerError(msg)
        warnings.warn(msg)


def predict(
    question: TokenizedQuestion,
    scorer: _ScorerBase | ScorerSpec,
    calibration: CalibrationResult,
    strict: bool = False,
) -> UncertaintySet:
    """Score a fresh question and build its set at the calibrated threshold.

    When the calibration result records a scorer identity, a mismatch with
    the supplied scorer warns by default and raises when ``strict``.
    """
    s = _resolve_scorer(scorer)
    _check_scorer_identity(s, calibration, strict)
    return build_set(question, s.score_question(question), calibration.lambda_hat)


def predict_batch(
    questions: Sequence[TokenizedQuestion],
    scorer: _ScorerBase | ScorerSpec,
    calibration: CalibrationResult,
    strict: bool = False,
    workers: int = 1,
) -> list[UncertaintySet]:
    """Predict many questions, optionally on a thread pool, preserving order."""
    s = _resolve_scorer(scorer)
    _check_scorer_identity(s, calibration, strict)
    lam = calibration.lambda_hat
    if workers <= 1 or len(questions) <= 1:
        return [build_set(q, s.score_question(q), lam) for q in questions]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        scored = list(pool.map(s.score_question, questions))
    return [build_set(q, sc, lam) for q, sc in zip(questions, scored)]


def evaluate(
    uncertainty_set: UncertaintySet,
    truth: GroundTruthExplanation,
    question_id: str | None = None,
) -> EvaluationReport:
    """Coverage loss and size statistics for one predicted set."""
    if question_id is not None and question_id != uncertainty_set.question_id:
        raise ValueError(
            f"set belongs to question {uncertainty_set.question_id!r}, not {question_id!r}"
        )
    covered = len(truth.indices & uncertainty_set.indices)
    return EvaluationReport(
        question_id=uncertainty_set.question_id,
        loss=loss(uncertainty_set, truth),
        set_size=len(uncertainty_set.indices),
        truth_size=len(truth.indices),
        covered=covered,
    )
