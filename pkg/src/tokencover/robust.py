"""Certified coverage under bounded token substitutions.

An adversary may replace up to ``d`` tokens of a question, each drawn from
that token's synonym set. The robust score of a candidate token at position j
is the best plain score it attains over any question in the perturbation
ball that carries the candidate at j; thresholding robust scores yields a
robust uncertainty set of (position, candidate) items. Because the clean
question always lies inside the ball of its own perturbed version (synonym
sets are symmetric and self-inclusive), the robust set built from a noisy
question never loses a (position, token) item that the plain set on the
clean question would have kept.
"""

from __future__ import annotations

import itertools
import json
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .calibrate import CalibrationResult
from .core import GroundTruthExplanation, TokenizedQuestion
from .scorer import ScorerError, ScorerSpec, _ScorerBase
from .sets import UncertaintySet, _check_scorer_identity, _resolve_scorer

BALL_MODES = ("exact", "coordinatewise")

DEFAULT_ENUMERATION_BUDGET = 100_000


class BallBudgetError(ValueError):
    """Raised when a perturbation ball exceeds the enumeration budget."""


def _normalize_entries(
    entries: Mapping[str, Iterable[str]],
) -> tuple[dict[str, frozenset[str]], list[str]]:
    """Enforce self-inclusion and symmetry, reporting every repair made."""
    work: dict[str, set[str]] = {str(t): {str(s) for s in syns} for t, syns in entries.items()}
    repairs: list[str] = []
    for tok, syns in work.items():
        if tok not in syns:
            syns.add(tok)
            repairs.append(f"added {tok!r} to its own synonym set")
    for tok in list(work):
        for syn in sorted(work[tok]):
            if syn == tok:
                continue
            if syn not in work:
                work[syn] = {syn, tok}
                repairs.append(f"created entry {syn!r} for symmetry with {tok!r}")
            elif tok not in work[syn]:
                work[syn].add(tok)
                repairs.append(f"added {tok!r} to {syn!r} for symmetry")
    return {t: frozenset(s) for t, s in work.items()}, repairs


@dataclass(frozen=True)
class SynonymLexicon:
    """Token -> synonym-set mapping, self-inclusive and symmetric.

    Construction repairs violations of either invariant and warns about what
    it changed. Tokens without an entry are their own singleton synonym set.
    """

    entries: dict[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        normalized, repairs = _normalize_entries(self.entries)
        object.__setattr__(self, "entries", normalized)
        if repairs:
            shown = "; ".join(repairs[:5])
            more = f" (+{len(repairs) - 5} more)" if len(repairs) > 5 else ""
            warnings.warn(f"synonym lexicon repaired {len(repairs)} entries: {shown}{more}")

    def synonyms(self, token: str) -> frozenset[str]:
        return self.entries.get(token, frozenset((token,)))

    def __len__(self) -> int:
        return len(self.entries)


def synonym_set(lexicon: SynonymLexicon, token: str) -> frozenset[str]:
    """The token's synonym set; a singleton for tokens absent from the lexicon."""
    return lexicon.synonyms(token)


def load_lexicon(path: str | Path) -> SynonymLexicon:
    """Read a JSON Lines lexicon: one {"token", "synonyms"} object per line."""
    path = Path(path)
    entries: dict[str, list[str]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: line {lineno}: invalid JSON: {e}") from None
            if not isinstance(rec, dict) or "token" not in rec or "synonyms" not in rec:
                raise ValueError(f"{path}: line {lineno}: expected fields 'token' and 'synonyms'")
            tok, syns = rec["token"], rec["synonyms"]
            if not isinstance(tok, str) or not tok:
                raise ValueError(f"{path}: line {lineno}: 'token' must be a non-empty string")
            if not isinstance(syns, list) or not all(isinstance(s, str) for s in syns):
                raise ValueError(f"{path}: line {lineno}: 'synonyms' must be a list of strings")
            entries[tok] = syns
    return SynonymLexicon(entries=entries)


@dataclass(frozen=True)
class BallSpec:
    """Perturbation-ball parameters: radius, enumeration budget, scoring mode.

    ``exact`` mode evaluates the worst case by enumerating the ball;
    ``coordinatewise`` collapses the search to single-token substitutions and
    is only sound for context-free scorers.
    """

    d: int
    enumeration_budget: int = DEFAULT_ENUMERATION_BUDGET
    mode: str = "exact"

    def __post_init__(self) -> None:
        if self.d < 0:
            raise ValueError(f"d must be >= 0, got {self.d}")
        if self.enumeration_budget < 1:
            raise ValueError(f"enumeration budget must be >= 1, got {self.enumeration_budget}")
        if self.mode not in BALL_MODES:
            raise ValueError(f"mode must be one of {BALL_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class RobustItem:
    position: int
    token: str
    score: float


@dataclass(frozen=True)
class RobustUncertaintySet:
    """(position, candidate token) items whose robust score clears the cutoff."""

    question_id: str
    items: tuple[RobustItem, ...]
    lambda_used: float
    ball_size: int

    def pairs(self) -> frozenset[tuple[int, str]]:
        return frozenset((it.position, it.token) for it in self.items)

    def positions(self) -> frozenset[int]:
        return frozenset(it.position for it in self.items)

    def __len__(self) -> int:
        return len(self.items)


def ball_size(question: TokenizedQuestion, lexicon: SynonymLexicon, spec: BallSpec) -> int:
    """Number of questions within substitution distance d, without enumerating.

    With m_j alternatives at position j, the count is the sum over all
    position subsets of size at most d of the product of the subset's m_j,
    i.e. the elementary symmetric sums e_0 + e_1 + ... + e_d of the m_j.
    """
    ms = [len(lexicon.synonyms(tok)) - 1 for tok in question.tokens]
    sums = [1] + [0] * spec.d
    for m in ms:
        if m == 0:
            continue
        for r in range(min(spec.d, len(sums) - 1), 0, -1):
            sums[r] += sums[r - 1] * m
    return sum(sums)


def _alternatives(lexicon: SynonymLexicon, token: str) -> list[str]:
    return sorted(lexicon.synonyms(token) - {token})


def _iter_ball(question: TokenizedQuestion, lexicon: SynonymLexicon, d: int) -> Iterator[TokenizedQuestion]:
    tokens = question.tokens
    alts = [_alternatives(lexicon, tok) for tok in tokens]
    perturbable = [j for j, a in enumerate(alts) if a]
    yield question
    for r in range(1, min(d, len(perturbable)) + 1):
        for positions in itertools.combinations(perturbable, r):
            for choice in itertools.product(*(alts[j] for j in positions)):
                new_tokens = list(tokens)
                for j, tok in zip(positions, choice):
                    new_tokens[j] = tok
                yield TokenizedQuestion(
                    id=question.id, tokens=tuple(new_tokens), prompt=question.prompt
                )


def enumerate_ball(
    question: TokenizedQuestion, lexicon: SynonymLexicon, spec: BallSpec
) -> Iterator[TokenizedQuestion]:
    """All questions within substitution distance d, the question itself first.

    Deterministic order: substitution count, then perturbed-position tuples
    lexicographically, then per-position alternatives in sorted order. Raises
    BallBudgetError before yielding anything if the ball exceeds the budget.
    """
    size = ball_size(question, lexicon, spec)
    if size > spec.enumeration_budget:
        raise BallBudgetError(
            f"perturbation ball of question {question.id!r} has {size} members, "
            f"over the enumeration budget of {spec.enumeration_budget}"
        )
    return _iter_ball(question, lexicon, spec.d)


def _candidates(lexicon: SynonymLexicon, token: str, d: int) -> list[str]:
    # With d = 0 no substitution can realize any candidate besides the
    # observed token, so the candidate set collapses to it.
    if d == 0:
        return [token]
    return sorted(lexicon.synonyms(token))


def robust_scores(
    question: TokenizedQuestion,
    lexicon: SynonymLexicon,
    spec: BallSpec,
    scorer: _ScorerBase | ScorerSpec,
) -> dict[tuple[int, str], float]:
    """Worst-case-best score for every attainable (position, candidate) pair.

    Exact mode scores every ball member once and keeps, per pair, the maximum
    score seen at that position among members carrying the candidate there.
    Coordinatewise mode substitutes one token at a time, which is equal to
    the exact maximum whenever the scorer is context-free, and is refused
    otherwise.
    """
    s = _resolve_scorer(scorer)
    if spec.mode == "coordinatewise":
        if not s.context_free:
            raise ScorerError(
                f"coordinatewise mode requires a context-free scorer; {s.identity!r} is not"
            )
        out: dict[tuple[int, str], float] = {}
        for j, tok in enumerate(question.tokens):
            for cand in _candidates(lexicon, tok, spec.d):
                out[(j, cand)] = s.score_token(question, j, cand)
        return out
    best: dict[tuple[int, str], float] = {}
    for member in enumerate_ball(question, lexicon, spec):
        values = s.score_question(member).values
        for j, tok in enumerate(member.tokens):
            key = (j, tok)
            prev = best.get(key)
            if prev is None or values[j] > prev:
                best[key] = values[j]
    return best


def robust_score(
    question: TokenizedQuestion,
    position: int,
    candidate: str,
    lexicon: SynonymLexicon,
    spec: BallSpec,
    scorer: _ScorerBase | ScorerSpec,
) -> float:
    """Robust score of one candidate token at one position."""
    if not 0 <= position < len(question.tokens):
        raise ValueError(f"position {position} outside [0, {len(question.tokens)})")
    observed = question.tokens[position]
    if candidate not in lexicon.synonyms(observed):
        raise ValueError(
            f"candidate {candidate!r} is not a synonym of observed token {observed!r}"
        )
    if spec.d == 0 and candidate != observed:
        raise ValueError(
            f"candidate {candidate!r} at position {position} is unreachable with d=0"
        )
    table = robust_scores(question, lexicon, spec, scorer)
    return table[(position, candidate)]


def build_robust_set(
    question: TokenizedQuestion,
    lexicon: SynonymLexicon,
    spec: BallSpec,
    scorer: _ScorerBase | ScorerSpec,
    calibration: CalibrationResult,
    strict: bool = False,
) -> RobustUncertaintySet:
    """Threshold robust scores at the calibrated lambda.

    Items are every attainable (position, candidate) whose robust score is at
    least 1 - lambda_hat, sorted by position then token.
    """
    s = _resolve_scorer(scorer)
    _check_scorer_identity(s, calibration, strict)
    lam = calibration.lambda_hat
    cutoff = 1.0 - lam
    table = robust_scores(question, lexicon, spec, s)
    items = tuple(
        RobustItem(position=j, token=tok, score=val)
        for (j, tok), val in sorted(table.items())
        if val >= cutoff
    )
    return RobustUncertaintySet(
        question_id=question.id,
        items=items,
        lambda_used=float(lam),
        ball_size=ball_size(question, lexicon, spec),
    )


def inject_noise(
    question: TokenizedQuestion, lexicon: SynonymLexicon, d: int, seed: int
) -> TokenizedQuestion:
    """Perturb up to d tokens, each replaced by a uniformly chosen synonym.

    Deterministic for a given seed. Positions without alternatives cannot be
    picked; if fewer than d positions are perturbable, all of them are. The
    result keeps the question id and always lies in the clean question's own
    perturbation ball.
    """
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    rng = random.Random(seed)
    alts = {j: _alternatives(lexicon, tok) for j, tok in enumerate(question.tokens)}
    perturbable = [j for j, a in alts.items() if a]
    n_perturb = min(d, len(perturbable))
    if n_perturb == 0:
        return question
    chosen = sorted(rng.sample(perturbable, n_perturb))
    new_tokens = list(question.tokens)
    for j in chosen:
        new_tokens[j] = rng.choice(alts[j])
    return TokenizedQuestion(id=question.id, tokens=tuple(new_tokens), prompt=question.prompt)


@dataclass(frozen=True)
class RobustEvaluation:
    question_id: str
    loss: float
    n_items: int
    n_positions: int
    truth_size: int
    covered: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "loss": self.loss,
            "n_items": self.n_items,
            "n_positions": self.n_positions,
            "truth_size": self.truth_size,
            "covered": self.covered,
        }


def evaluate_robust(
    robust_set: RobustUncertaintySet,
    clean_question: TokenizedQuestion,
    truth: GroundTruthExplanation,
) -> RobustEvaluation:
    """Coverage loss of a robust set against the clean question's truth.

    A ground-truth item is the pair (position, clean token string); it counts
    as covered only when the robust set holds exactly that pair.
    """
    if robust_set.question_id != clean_question.id:
        raise ValueError(
            f"robust set belongs to question {robust_set.question_id!r}, "
            f"not {clean_question.id!r}"
        )
    if len(truth.indices) == 0:
        raise ValueError("ground-truth explanation is empty")
    truth_pairs = {(j, clean_question.tokens[j]) for j in truth.indices}
    covered = len(truth_pairs & robust_set.pairs())
    return RobustEvaluation(
        question_id=robust_set.question_id,
        loss=1.0 - covered / len(truth_pairs),
        n_items=len(robust_set.items),
        n_positions=len(robust_set.positions()),
        truth_size=len(truth_pairs),
        covered=covered,
    )


def plain_set_pairs(uncertainty_set: UncertaintySet) -> frozenset[tuple[int, str]]:
    """A plain set's (position, token) pairs, for superset comparisons."""
    return frozenset(uncertainty_set.tokens)
