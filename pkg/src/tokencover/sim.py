"""Synthetic data generation and Monte Carlo coverage experiments.

Each trial draws an i.i.d. synthetic dataset, splits it, calibrates a
threshold on one side, and measures coverage loss on the other; optionally
the test questions are perturbed with synonym noise and predicted robustly.
Trial seeds derive from (master seed, trial index), so experiments are
reproducible and trials are independent.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .calibrate import (
    MODE_EXACT,
    MODE_GRID,
    _result_from_curve,
    _risks_at,
    calibrate_grid,
    critical_thresholds,
)
from .core import (
    CalibrationExample,
    Dataset,
    GroundTruthExplanation,
    TokenizedQuestion,
    split_dataset,
)
from .robust import BallSpec, SynonymLexicon, inject_noise, robust_scores
from .scorer import OracleNoiseScorer, oracle_noise_score, truth_map
from .sets import build_set


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic question generator and robust noise model."""

    n_calibration: int = 100
    n_test: int = 100
    k_range: tuple[int, int] = (8, 16)
    truth_fraction: float = 0.4
    sigma: float = 0.3
    seed: int = 0
    synonym_fanout: int = 2
    d: int = 1

    def __post_init__(self) -> None:
        if self.n_calibration < 1 or self.n_test < 1:
            raise ValueError("n_calibration and n_test must be >= 1")
        kmin, kmax = self.k_range
        if not 1 <= kmin <= kmax:
            raise ValueError(f"k_range must satisfy 1 <= min <= max, got {self.k_range}")
        if not 0.0 < self.truth_fraction <= 1.0:
            raise ValueError(f"truth_fraction must be in (0, 1], got {self.truth_fraction}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.synonym_fanout < 0:
            raise ValueError(f"synonym_fanout must be >= 0, got {self.synonym_fanout}")
        if self.d < 0:
            raise ValueError(f"d must be >= 0, got {self.d}")


@dataclass(frozen=True)
class TrialResult:
    """Summary of one calibrate-predict-evaluate trial at one alpha."""

    alpha: float
    mode: str
    robust: bool
    lambda_hat: float
    feasible: bool
    mean_loss: float
    mean_set_size: float
    comparator_mean_loss: float | None = None
    comparator_mean_set_size: float | None = None
    superset_rate: float | None = None
    mean_n_items: float | None = None


@dataclass(frozen=True)
class CoverageReport:
    """Aggregate of a multi-trial coverage experiment at one alpha."""

    alpha: float
    mode: str
    robust: bool
    trials: int
    mean_loss: float
    se: float | None
    mean_set_size: float
    mean_lambda: float
    feasibility_rate: float
    per_trial_losses: tuple[float, ...]
    comparator_mean_loss: float | None = None
    comparator_mean_set_size: float | None = None
    superset_rate: float | None = None
    mean_n_items: float | None = None

    def __post_init__(self) -> None:
        if self.trials != len(self.per_trial_losses):
            raise ValueError("per_trial_losses must have one entry per trial")
        for v in self.per_trial_losses:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"per-trial loss {v!r} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "mode": self.mode,
            "robust": self.robust,
            "trials": self.trials,
            "mean_loss": self.mean_loss,
            "se": self.se,
            "mean_set_size": self.mean_set_size,
            "mean_lambda": self.mean_lambda,
            "feasibility_rate": self.feasibility_rate,
            "per_trial_losses": list(self.per_trial_losses),
            "comparator_mean_loss": self.comparator_mean_loss,
            "comparator_mean_set_size": self.comparator_mean_set_size,
            "superset_rate": self.superset_rate,
            "mean_n_items": self.mean_n_items,
        }


def _derived_seed(*parts: int) -> int:
    """Stable non-negative integer seed from a tuple of integers."""
    return int(np.random.SeedSequence(entropy=list(parts)).generate_state(1)[0])


def _scorer_seed(base_seed: int) -> int:
    return _derived_seed(base_seed, 1)


def generate_synthetic_dataset(config: SyntheticConfig, seed: int | None = None) -> Dataset:
    """Draw n_calibration + n_test i.i.d. examples.

    Token count is uniform on k_range (inclusive); each position is a truth
    token with probability truth_fraction, with at least one truth token
    forced per question. Scores are materialized with the noisy oracle at the
    config's sigma, so re-scoring any question with the matching oracle
    scorer (see ``oracle_scorer``) reproduces them exactly.
    """
    base = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[base, 0]))
    s_seed = _scorer_seed(base)
    kmin, kmax = config.k_range
    examples = []
    for i in range(config.n_calibration + config.n_test):
        k = int(rng.integers(kmin, kmax + 1))
        tokens = tuple(f"w{int(v)}" for v in rng.integers(0, 1_000_000_000, size=k))
        mask = rng.random(k) < config.truth_fraction
        if not mask.any():
            mask[int(rng.integers(0, k))] = True
        truth = frozenset(int(j) for j in np.nonzero(mask)[0])
        scores = oracle_noise_score(truth, tokens, config.sigma, s_seed)
        examples.append(
            CalibrationExample(
                question=TokenizedQuestion(id=f"q{i}", tokens=tokens),
                scores=scores,
                explanation=GroundTruthExplanation(truth),
            )
        )
    return Dataset(examples=tuple(examples), source_path=f"synthetic(seed={base})")


def oracle_scorer(
    config: SyntheticConfig, dataset: Dataset, seed: int | None = None
) -> OracleNoiseScorer:
    """The oracle that materialized the dataset's scores, rebuilt for predict."""
    base = config.seed if seed is None else seed
    return OracleNoiseScorer(config.sigma, _scorer_seed(base), truth_map(dataset))


def synthetic_lexicon(dataset: Dataset, fanout: int) -> SynonymLexicon:
    """Give every distinct token ``fanout`` synthetic alternatives.

    The closure entries for the alternatives are included explicitly, so the
    lexicon is symmetric by construction and loads without repairs.
    """
    if fanout < 0:
        raise ValueError(f"fanout must be >= 0, got {fanout}")
    entries: dict[str, list[str]] = {}
    for ex in dataset.examples:
        for tok in ex.question.tokens:
            if tok in entries or fanout == 0:
                continue
            variants = [f"{tok}~{i}" for i in range(1, fanout + 1)]
            entries[tok] = [tok, *variants]
            for v in variants:
                entries[v] = [v, tok]
    return SynonymLexicon(entries=entries)


def _split_counts(config: SyntheticConfig, dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    total = config.n_calibration + config.n_test
    return split_dataset(dataset, config.n_calibration / total, seed=_derived_seed(seed, 2))


def _pair_loss(
    selected: frozenset[int],
    noisy_tokens: tuple[str, ...],
    clean_tokens: tuple[str, ...],
    truth: frozenset[int],
) -> float:
    """Loss under (position, string) matching for a set built on noisy tokens."""
    covered = sum(1 for j in truth if j in selected and noisy_tokens[j] == clean_tokens[j])
    return 1.0 - covered / len(truth)


def _run_trial(
    config: SyntheticConfig,
    alphas: Sequence[float],
    mode: str,
    robust: bool,
    trial_seed: int,
    ball_mode: str = "auto",
) -> list[TrialResult]:
    dataset = generate_synthetic_dataset(config, seed=trial_seed)
    scorer = oracle_scorer(config, dataset, seed=trial_seed)
    cal, test = _split_counts(config, dataset, trial_seed)
    cal_examples = list(cal.examples)
    n = len(cal_examples)

    if mode == MODE_EXACT:
        lambdas = critical_thresholds(cal_examples)
        risks = _risks_at(cal_examples, lambdas)
        results = {
            a: _result_from_curve(lambdas, risks, a, n, MODE_EXACT, None, scorer.identity)
            for a in alphas
        }
    elif mode == MODE_GRID:
        results = {a: calibrate_grid(cal_examples, a, scorer_id=scorer.identity) for a in alphas}
    else:
        raise ValueError(f"mode must be 'exact' or 'grid', got {mode!r}")

    lexicon = None
    spec = None
    if robust:
        lexicon = synthetic_lexicon(dataset, config.synonym_fanout)
        resolved = (
            ("coordinatewise" if scorer.context_free else "exact")
            if ball_mode == "auto"
            else ball_mode
        )
        spec = BallSpec(d=config.d, mode=resolved)

    noise_rng = np.random.default_rng(np.random.SeedSequence(entropy=[trial_seed, 3]))
    per_alpha: dict[float, dict[str, list[float]]] = {
        a: {
            "loss": [],
            "size": [],
            "comp_loss": [],
            "comp_size": [],
            "superset": [],
            "items": [],
        }
        for a in alphas
    }

    for ex in test.examples:
        q = ex.question
        truth = ex.explanation.indices
        if not robust:
            scores = scorer.score_question(q)
            for a in alphas:
                uset = build_set(q, scores, results[a].lambda_hat)
                covered = len(truth & uset.indices)
                per_alpha[a]["loss"].append(1.0 - covered / len(truth))
                per_alpha[a]["size"].append(len(uset.indices))
            continue

        noisy = inject_noise(q, lexicon, config.d, int(noise_rng.integers(2**63)))
        table = robust_scores(noisy, lexicon, spec, scorer)
        noisy_scores = scorer.score_question(noisy)
        clean_scores = ex.scores  # the oracle reproduces these exactly on q
        truth_pairs = {(j, q.tokens[j]) for j in truth}
        for a in alphas:
            cutoff = 1.0 - results[a].lambda_hat
            robust_pairs = {pair for pair, val in table.items() if val >= cutoff}
            covered = sum(1 for p in truth_pairs if p in robust_pairs)
            per_alpha[a]["loss"].append(1.0 - covered / len(truth_pairs))
            per_alpha[a]["size"].append(len({j for j, _ in robust_pairs}))
            per_alpha[a]["items"].append(len(robust_pairs))
            plain_clean = frozenset(
                (j, q.tokens[j]) for j, v in enumerate(clean_scores.values) if v >= cutoff
            )
            per_alpha[a]["superset"].append(1.0 if plain_clean <= robust_pairs else 0.0)
            noisy_selected = frozenset(
                j for j, v in enumerate(noisy_scores.values) if v >= cutoff
            )
            per_alpha[a]["comp_loss"].append(
                _pair_loss(noisy_selected, noisy.tokens, q.tokens, truth)
            )
            per_alpha[a]["comp_size"].append(len(noisy_selected))

    out = []
    for a in alphas:
        stats = per_alpha[a]
        res = results[a]
        out.append(
            TrialResult(
                alpha=a,
                mode=mode,
                robust=robust,
                lambda_hat=res.lambda_hat,
                feasible=res.feasible,
                mean_loss=float(np.mean(stats["loss"])),
                mean_set_size=float(np.mean(stats["size"])),
                comparator_mean_loss=float(np.mean(stats["comp_loss"])) if robust else None,
                comparator_mean_set_size=float(np.mean(stats["comp_size"])) if robust else None,
                superset_rate=float(np.mean(stats["superset"])) if robust else None,
                mean_n_items=float(np.mean(stats["items"])) if robust else None,
            )
        )
    return out


def run_trial(
    config: SyntheticConfig,
    alpha: float,
    mode: str = MODE_EXACT,
    robust: bool = False,
    trial_seed: int | None = None,
    ball_mode: str = "auto",
) -> TrialResult:
    """Generate, split, calibrate, predict, evaluate: one trial, one alpha."""
    seed = config.seed if trial_seed is None else trial_seed
    return _run_trial(config, [alpha], mode, robust, seed, ball_mode)[0]


def run_coverage_experiment(
    config: SyntheticConfig,
    alpha: float | Sequence[float],
    trials: int,
    mode: str = MODE_EXACT,
    robust: bool = False,
    workers: int = 1,
    ball_mode: str = "auto",
) -> CoverageReport | list[CoverageReport]:
    """Run independent trials and aggregate per alpha.

    Accepts one alpha or a sequence; a sequence shares each trial's dataset
    and scoring across all alphas, which only recalibrates the threshold.
    Trial seeds derive from (config.seed, trial index). With a single trial
    the standard error is undefined and reported as None.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    single = isinstance(alpha, (int, float))
    alphas = [float(alpha)] if single else [float(a) for a in alpha]
    if not alphas:
        raise ValueError("need at least one alpha")
    trial_seeds = [_derived_seed(config.seed, t) for t in range(trials)]

    def one(seed: int) -> list[TrialResult]:
        return _run_trial(config, alphas, mode, robust, seed, ball_mode)

    if workers > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_trials = list(pool.map(one, trial_seeds))
    else:
        all_trials = [one(s) for s in trial_seeds]

    reports = []
    for i, a in enumerate(alphas):
        rows = [tr[i] for tr in all_trials]
        losses = np.array([r.mean_loss for r in rows], dtype=np.float64)
        se = float(losses.std(ddof=1) / np.sqrt(trials)) if trials >= 2 else None

        def opt(key: str) -> float | None:
            return float(np.mean([getattr(r, key) for r in rows])) if robust else None

        reports.append(
            CoverageReport(
                alpha=a,
                mode=mode,
                robust=robust,
                trials=trials,
                mean_loss=float(losses.mean()),
                se=se,
                mean_set_size=float(np.mean([r.mean_set_size for r in rows])),
                mean_lambda=float(np.mean([r.lambda_hat for r in rows])),
                feasibility_rate=float(np.mean([1.0 if r.feasible else 0.0 for r in rows])),
                per_trial_losses=tuple(float(v) for v in losses),
                comparator_mean_loss=opt("comparator_mean_loss"),
                comparator_mean_set_size=opt("comparator_mean_set_size"),
                superset_rate=opt("superset_rate"),
                mean_n_items=opt("mean_n_items"),
            )
        )
    return reports[0] if single else reports


CSV_HEADER = "alpha,mode,robust,trials,mean_loss,se,mean_set_size,mean_lambda,feasibility_rate"


def summarize(reports: Sequence[CoverageReport]) -> str:
    """Flatten coverage reports to CSV, sorted by (alpha, mode, robust)."""
    lines = [CSV_HEADER]
    for r in sorted(reports, key=lambda r: (r.alpha, r.mode, r.robust)):
        se = "" if r.se is None else repr(r.se)
        lines.append(
            f"{r.alpha!r},{r.mode},{str(r.robust).lower()},{r.trials},"
            f"{r.mean_loss!r},{se},{r.mean_set_size!r},{r.mean_lambda!r},"
            f"{r.feasibility_rate!r}"
        )
    return "\n".join(lines) + "\n"
