"""Set construction, prediction at a calibrated threshold, and evaluation."""

from __future__ import annotations

import warnings

import numpy as np
import pytest

from tokencover.calibrate import CalibrationResult
from tokencover.core import GroundTruthExplanation, ImportanceScores, TokenizedQuestion
from tokencover.scorer import ConstantScorer, ScorerError, ScorerSpec, make_scorer
from tokencover.sets import build_set, evaluate, predict, predict_batch

from conftest import random_example


def q(tokens, qid="q0"):
    return TokenizedQuestion(id=qid, tokens=tuple(tokens))


def calib(lam, scorer_id=None):
    return CalibrationResult(
        lambda_hat=lam,
        alpha=0.2,
        n=10,
        adjusted_bound=0.12,
        feasible=True,
        mode="exact",
        scorer_id=scorer_id,
    )


class TestBuildSet:
    def test_cutoff_is_inclusive(self):
        # score exactly at 1 - lambda stays in
        got = build_set(q(["a", "b", "c"]), ImportanceScores((0.7, 0.69, 0.71)), lam=0.3)
        assert got.indices == frozenset({0, 2})

    def test_lambda_one_keeps_everything(self):
        got = build_set(q(["a", "b"]), ImportanceScores((0.0, 1.0)), lam=1.0)
        assert got.indices == frozenset({0, 1})

    def test_lambda_zero_keeps_only_certain_tokens(self):
        got = build_set(q(["a", "b", "c"]), ImportanceScores((1.0, 0.999, 0.0)), lam=0.0)
        assert got.indices == frozenset({0})

    def test_tokens_pair_positions_with_strings(self):
        got = build_set(q(["alpha", "beta", "gamma"]), ImportanceScores((0.9, 0.1, 0.8)), lam=0.5)
        assert got.tokens == ((0, "alpha"), (2, "gamma"))
        assert got.lambda_used == 0.5
        assert got.question_id == "q0"
        assert len(got) == 2

    def test_sets_nest_in_lambda(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            ex = random_example(rng)
            lams = sorted(rng.uniform(0, 1, size=2))
            small = build_set(ex.question, ex.scores, float(lams[0]))
            large = build_set(ex.question, ex.scores, float(lams[1]))
            assert small.indices <= large.indices

    @pytest.mark.parametrize("lam", [-0.01, 1.01])
    def test_lambda_out_of_range(self, lam):
        with pytest.raises(ValueError, match="lambda"):
            build_set(q(["a"]), ImportanceScores((0.5,)), lam)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            build_set(q(["a", "b"]), ImportanceScores((0.5,)), 0.5)


class TestPredict:
    def test_uses_calibrated_threshold(self):
        scorer = make_scorer(
            ScorerSpec(kind="oracle_noise", parameters={"sigma": 0.0}),
            truth_by_id={"q0": {0, 2}},
        )
        got = predict(q(["a", "b", "c"]), scorer, calib(0.5))
        assert got.indices == frozenset({0, 2})
        assert got.lambda_used == 0.5

    def test_accepts_spec_in_place_of_scorer(self):
        got = predict(q(["a", "b"]), ScorerSpec(kind="constant", parameters={"value": 1.0}), calib(0.0))
        assert got.indices == frozenset({0, 1})

    def test_identity_mismatch_warns_by_default(self):
        scorer = ConstantScorer(1.0)
        with pytest.warns(UserWarning, match="does not match"):
            got = predict(q(["a"]), scorer, calib(0.5, scorer_id="uniform_random(seed=1)"))
        assert got.indices == frozenset({0})

    def test_identity_mismatch_raises_in_strict_mode(self):
        scorer = ConstantScorer(1.0)
        with pytest.raises(ScorerError, match="does not match"):
            predict(q(["a"]), scorer, calib(0.5, scorer_id="other"), strict=True)

    def test_matching_identity_is_silent(self):
        scorer = ConstantScorer(1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            predict(q(["a"]), scorer, calib(0.5, scorer_id=scorer.identity), strict=True)

    def test_unstamped_calibration_is_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            predict(q(["a"]), ConstantScorer(1.0), calib(0.5), strict=True)


class TestPredictBatch:
    def test_preserves_order_and_matches_serial(self):
        questions = [q([f"w{i}", f"v{i}"], qid=f"q{i}") for i in range(20)]
        scorer = make_scorer(ScorerSpec(kind="uniform_random", seed=9))
        serial = predict_batch(questions, scorer, calib(0.6), workers=1)
        threaded = predict_batch(questions, scorer, calib(0.6), workers=4)
        assert serial == threaded
        assert [s.question_id for s in serial] == [f"q{i}" for i in range(20)]

    def test_empty_input(self):
        assert predict_batch([], ConstantScorer(0.5), calib(0.5)) == []


class TestEvaluate:
    def test_report_fields(self):
        got = build_set(q(["a", "b", "c"]), ImportanceScores((0.9, 0.1, 0.9)), lam=0.5)
        report = evaluate(got, GroundTruthExplanation({0, 1}))
        assert report.question_id == "q0"
        assert report.set_size == 2
        assert report.truth_size == 2
        assert report.covered == 1
        assert report.loss == 0.5
        assert report.to_dict()["covered"] == 1

    def test_question_id_check(self):
        got = build_set(q(["a"]), ImportanceScores((1.0,)), lam=0.5)
        report = evaluate(got, GroundTruthExplanation({0}), question_id="q0")
        assert report.loss == 0.0
        with pytest.raises(ValueError, match="belongs to"):
            evaluate(got, GroundTruthExplanation({0}), question_id="q1")
