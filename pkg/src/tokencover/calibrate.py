"""Threshold calibration with a finite-sample risk guarantee.

The coverage loss of an uncertainty set is the fraction of ground-truth
tokens it misses. Empirical risk, as a function of the selection threshold
lambda, is a non-increasing right-continuous step function; calibration picks
the smallest lambda whose empirical risk clears the sample-size-adjusted
bound alpha - (1 - alpha)/n, which keeps the expected loss of a fresh
exchangeable example at or below alpha. If even lambda = 1 fails the bound
(possible for small n, where the bound goes negative), calibration falls back
to lambda = 1 and reports infeasibility; the guarantee still holds there
because the full set has zero loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterator, Sequence

import numpy as np

from .core import CalibrationExample, GroundTruthExplanation

if TYPE_CHECKING:
    from .sets import UncertaintySet

DEFAULT_GRID_SIZE = 1001

MODE_EXACT = "exact"
MODE_GRID = "grid"


@dataclass(frozen=True)
class RiskCurve:
    """Empirical risk sampled on an ascending threshold grid."""

    thresholds: tuple[float, ...]
    risks: tuple[float, ...]
    n: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "risks", tuple(float(r) for r in self.risks))
        if len(self.thresholds) != len(self.risks):
            raise ValueError("thresholds and risks must have equal length")
        if not self.thresholds:
            raise ValueError("risk curve must be non-empty")
        t = np.asarray(self.thresholds)
        if t[0] < 0.0 or t[-1] > 1.0 or np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly ascending within [0, 1]")
        r = np.asarray(self.risks)
        if np.any(np.diff(r) > 0):
            raise ValueError("risks must be non-increasing in the threshold")
        if self.thresholds[-1] == 1.0 and self.risks[-1] != 0.0:
            raise ValueError("risk at threshold 1 must be exactly 0")

    def rows(self) -> Iterator[tuple[float, float, int]]:
        """(lambda, risk, n) rows for CSV export."""
        for t, r in zip(self.thresholds, self.risks):
            yield (t, r, self.n)


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of threshold calibration on one calibration set."""

    lambda_hat: float
    alpha: float
    n: int
    adjusted_bound: float
    feasible: bool
    mode: str
    grid_size: int | None = None
    scorer_id: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda_hat": self.lambda_hat,
            "alpha": self.alpha,
            "n": self.n,
            "adjusted_bound": self.adjusted_bound,
            "feasible": self.feasible,
            "mode": self.mode,
            "grid_size": self.grid_size,
            "scorer_id": self.scorer_id,
        }

    @classmethod
    def from_dict(cls, rec: dict[str, Any]) -> "CalibrationResult":
        return cls(
            lambda_hat=float(rec["lambda_hat"]),
            alpha=float(rec["alpha"]),
            n=int(rec["n"]),
            adjusted_bound=float(rec["adjusted_bound"]),
            feasible=bool(rec["feasible"]),
            mode=str(rec["mode"]),
            grid_size=None if rec.get("grid_size") is None else int(rec["grid_size"]),
            scorer_id=rec.get("scorer_id"),
        )


def loss(uncertainty_set: "UncertaintySet", truth: GroundTruthExplanation) -> float:
    """Fraction of ground-truth token positions missing from the set."""
    if len(truth.indices) == 0:
        raise ValueError("ground-truth explanation is empty")
    covered = len(truth.indices & uncertainty_set.indices)
    return 1.0 - covered / len(truth.indices)


def adjusted_bound(alpha: float, n: int) -> float:
    """Sample-size-corrected risk bound alpha - (1 - alpha)/n; may be negative."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return alpha - (1.0 - alpha) / n


def _truth_score_arrays(examples: Sequence[CalibrationExample]) -> list[np.ndarray]:
    if len(examples) == 0:
        raise ValueError("need at least one calibration example")
    out = []
    for ex in examples:
        vals = ex.scores.values
        arr = np.sort(np.array([vals[j] for j in ex.explanation.indices], dtype=np.float64))
        if arr.size == 0:
            raise ValueError(f"example {ex.question.id!r} has an empty explanation")
        out.append(arr)
    return out


def _risks_at(examples: Sequence[CalibrationExample], lambdas: np.ndarray) -> np.ndarray:
    """Empirical risk at every lambda, vectorized.

    A token at position j enters the set iff score_j >= 1 - lambda, so the
    per-example loss at lambda needs only the sorted scores of the example's
    ground-truth positions.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    cutoffs = 1.0 - lam
    arrays = _truth_score_arrays(examples)
    losses = np.empty((len(arrays), lam.size), dtype=np.float64)
    for i, arr in enumerate(arrays):
        covered = arr.size - np.searchsorted(arr, cutoffs, side="left")
        losses[i] = 1.0 - covered / arr.size
    return losses.mean(axis=0)


def empirical_risk(examples: Sequence[CalibrationExample], lam: float) -> float:
    """Mean coverage loss over the calibration examples at threshold ``lam``."""
    return float(_risks_at(examples, np.array([lam]))[0])


def critical_thresholds(examples: Sequence[CalibrationExample]) -> np.ndarray:
    """Ascending candidate thresholds {1 - s : s an observed score} plus 0 and 1.

    The empirical risk is constant between consecutive candidates, so its
    true infimum over [0, 1] is attained on this finite set.
    """
    if len(examples) == 0:
        raise ValueError("need at least one calibration example")
    vals = [1.0 - s for ex in examples for s in ex.scores.values]
    vals.extend([0.0, 1.0])
    return np.unique(np.asarray(vals, dtype=np.float64))


def _result_from_curve(
    lambdas: np.ndarray,
    risks: np.ndarray,
    alpha: float,
    n: int,
    mode: str,
    grid_size: int | None,
    scorer_id: str | None,
) -> CalibrationResult:
    bound = adjusted_bound(alpha, n)
    feasible_at = np.nonzero(risks <= bound)[0]
    if feasible_at.size > 0:
        lam_hat, feasible = float(lambdas[feasible_at[0]]), True
    else:
        lam_hat, feasible = 1.0, False
    return CalibrationResult(
        lambda_hat=lam_hat,
        alpha=alpha,
        n=n,
        adjusted_bound=bound,
        feasible=feasible,
        mode=mode,
        grid_size=grid_size,
        scorer_id=scorer_id,
    )


def calibrate_exact(
    examples: Sequence[CalibrationExample],
    alpha: float,
    scorer_id: str | None = None,
) -> CalibrationResult:
    """Calibrate by exact scan over the critical thresholds.

    Returns the smallest threshold whose empirical risk meets the adjusted
    bound; no threshold strictly below it is feasible. Score-equals-cutoff
    ties are included in the set, with no epsilon slack anywhere.
    """
    lambdas = critical_thresholds(examples)
    risks = _risks_at(examples, lambdas)
    return _result_from_curve(lambdas, risks, alpha, len(examples), MODE_EXACT, None, scorer_id)


def uniform_grid(size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Evenly spaced thresholds over [0, 1], endpoints included."""
    if size < 2:
        raise ValueError(f"grid size must be >= 2, got {size}")
    return np.linspace(0.0, 1.0, size)


def _check_grid(grid: np.ndarray) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if g[0] < 0.0 or np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly ascending within [0, 1]")
    if g[-1] != 1.0:
        raise ValueError("grid must end at 1")
    return g


def calibrate_grid(
    examples: Sequence[CalibrationExample],
    alpha: float,
    grid: Sequence[float] | np.ndarray | None = None,
    scorer_id: str | None = None,
) -> CalibrationResult:
    """Calibrate by binary search on an ascending threshold grid ending at 1.

    Feasibility is monotone in the grid index because the empirical risk is
    non-increasing, so bisection lands on the smallest feasible grid point;
    if even the last point fails the bound the result is infeasible with
    lambda 1.
    """
    g = _check_grid(uniform_grid() if grid is None else grid)
    n = len(examples)
    bound = adjusted_bound(alpha, n)

    def probe(lam: float) -> float:
        return float(_risks_at(examples, np.array([lam]))[0])

    low, high = 0, g.size - 1
    while low < high:
        mid = (low + high) // 2
        if probe(float(g[mid])) <= bound:
            high = mid
        else:
            low = mid + 1
    lam_low = float(g[low])
    if probe(lam_low) <= bound:
        lam_hat, feasible = lam_low, True
    else:
        lam_hat, feasible = 1.0, False
    return CalibrationResult(
        lambda_hat=lam_hat,
        alpha=alpha,
        n=n,
        adjusted_bound=bound,
        feasible=feasible,
        mode=MODE_GRID,
        grid_size=int(g.size),
        scorer_id=scorer_id,
    )


def risk_curve(
    examples: Sequence[CalibrationExample],
    grid: Sequence[float] | np.ndarray | None = None,
) -> RiskCurve:
    """Evaluate the empirical risk on a grid (default: 1001 uniform points)."""
    g = np.asarray(uniform_grid() if grid is None else grid, dtype=np.float64)
    risks = _risks_at(examples, g)
    return RiskCurve(thresholds=tuple(g.tolist()), risks=tuple(risks.tolist()), n=len(examples))
