"""Synthetic generator and Monte Carlo coverage experiments."""

from __future__ import annotations

import numpy as np
import pytest

from tokencover.calibrate import calibrate_exact
from tokencover.core import validate_example
from tokencover.sim import (
    CSV_HEADER,
    CoverageReport,
    SyntheticConfig,
    generate_synthetic_dataset,
    oracle_scorer,
    run_coverage_experiment,
    run_trial,
    summarize,
    synthetic_lexicon,
)

SMALL = SyntheticConfig(n_calibration=30, n_test=20, k_range=(3, 6), seed=7)


class TestSyntheticConfig:
    def test_defaults_are_valid(self):
        cfg = SyntheticConfig()
        assert cfg.n_calibration == 100
        assert cfg.k_range == (8, 16)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_calibration": 0},
            {"n_test": 0},
            {"k_range": (0, 5)},
            {"k_range": (5, 3)},
            {"truth_fraction": 0.0},
            {"truth_fraction": 1.2},
            {"sigma": -0.1},
            {"seed": -1},
            {"synonym_fanout": -1},
            {"d": -2},
        ],
    )
    def test_invalid_parameters_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SyntheticConfig(**kwargs)


class TestGenerateSyntheticDataset:
    def test_size_and_validity(self):
        ds = generate_synthetic_dataset(SMALL)
        assert len(ds.examples) == 50
        kmin, kmax = SMALL.k_range
        for ex in ds.examples:
            assert validate_example(ex) == []
            assert kmin <= len(ex.question.tokens) <= kmax
            assert len(ex.explanation.indices) >= 1

    def test_deterministic_per_seed(self):
        assert generate_synthetic_dataset(SMALL) == generate_synthetic_dataset(SMALL)
        other = generate_synthetic_dataset(SMALL, seed=8)
        assert other != generate_synthetic_dataset(SMALL)

    def test_oracle_scorer_reproduces_materialized_scores(self):
        ds = generate_synthetic_dataset(SMALL)
        scorer = oracle_scorer(SMALL, ds)
        for ex in ds.examples:
            assert scorer.score_question(ex.question) == ex.scores

    def test_zero_sigma_gives_exact_indicators(self):
        cfg = SyntheticConfig(n_calibration=5, n_test=5, k_range=(3, 4), sigma=0.0, seed=1)
        for ex in generate_synthetic_dataset(cfg).examples:
            for j, v in enumerate(ex.scores.values):
                assert v == (1.0 if j in ex.explanation.indices else 0.0)


class TestSyntheticLexicon:
    def test_fanout_entries_without_repairs(self, recwarn):
        ds = generate_synthetic_dataset(SMALL)
        lex = synthetic_lexicon(ds, fanout=2)
        assert len(recwarn) == 0
        for ex in ds.examples:
            for tok in ex.question.tokens:
                syns = lex.synonyms(tok)
                assert len(syns) == 3
                for alt in syns - {tok}:
                    assert lex.synonyms(alt) == frozenset({alt, tok})

    def test_zero_fanout_is_empty(self):
        ds = generate_synthetic_dataset(SMALL)
        assert len(synthetic_lexicon(ds, fanout=0)) == 0

    def test_negative_fanout_rejected(self):
        ds = generate_synthetic_dataset(SMALL)
        with pytest.raises(ValueError, match="fanout"):
            synthetic_lexicon(ds, fanout=-1)


class TestRunTrial:
    def test_plain_trial_fields(self):
        res = run_trial(SMALL, alpha=0.3)
        assert res.alpha == 0.3
        assert res.mode == "exact"
        assert not res.robust
        assert 0.0 <= res.lambda_hat <= 1.0
        assert 0.0 <= res.mean_loss <= 1.0
        assert res.mean_set_size >= 0.0
        assert res.comparator_mean_loss is None
        assert res.superset_rate is None

    def test_robust_trial_populates_extras(self):
        res = run_trial(SMALL, alpha=0.3, robust=True)
        assert res.robust
        assert res.comparator_mean_loss is not None
        assert res.comparator_mean_set_size is not None
        assert res.superset_rate is not None
        assert res.mean_n_items is not None
        # items count pairs, so it can only exceed the position count
        assert res.mean_n_items >= res.mean_set_size

    def test_zero_noise_means_zero_loss(self):
        cfg = SyntheticConfig(n_calibration=20, n_test=20, k_range=(3, 5), sigma=0.0, seed=3)
        res = run_trial(cfg, alpha=0.3)
        assert res.feasible
        assert res.lambda_hat == 0.0
        assert res.mean_loss == 0.0

    def test_grid_mode_overshoots_exact_by_at_most_one_step(self):
        exact = run_trial(SMALL, alpha=0.3, mode="exact", trial_seed=11)
        grid = run_trial(SMALL, alpha=0.3, mode="grid", trial_seed=11)
        assert exact.feasible and grid.feasible
        assert 0.0 <= grid.lambda_hat - exact.lambda_hat <= 1.0 / 1000 + 1e-12
        assert grid.mean_loss <= exact.mean_loss + 1e-12

    def test_ball_modes_agree_for_the_oracle(self):
        # the oracle is context-free, so single-substitution scoring equals
        # full ball enumeration
        auto = run_trial(SMALL, alpha=0.3, robust=True, ball_mode="auto")
        exact = run_trial(SMALL, alpha=0.3, robust=True, ball_mode="exact")
        coord = run_trial(SMALL, alpha=0.3, robust=True, ball_mode="coordinatewise")
        assert auto == exact == coord

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            run_trial(SMALL, alpha=0.3, mode="psychic")


class TestRunCoverageExperiment:
    def test_reproducible(self):
        a = run_coverage_experiment(SMALL, alpha=0.3, trials=4)
        b = run_coverage_experiment(SMALL, alpha=0.3, trials=4)
        assert a == b

    def test_single_trial_has_no_se(self):
        rep = run_coverage_experiment(SMALL, alpha=0.3, trials=1)
        assert rep.se is None
        assert rep.trials == 1
        assert len(rep.per_trial_losses) == 1

    def test_workers_do_not_change_results(self):
        serial = run_coverage_experiment(SMALL, alpha=0.3, trials=4, workers=1)
        threaded = run_coverage_experiment(SMALL, alpha=0.3, trials=4, workers=4)
        assert serial == threaded

    def test_alpha_sequence_matches_independent_runs(self):
        multi = run_coverage_experiment(SMALL, alpha=[0.2, 0.4], trials=3)
        assert isinstance(multi, list)
        for rep in multi:
            single = run_coverage_experiment(SMALL, alpha=rep.alpha, trials=3)
            assert rep == single

    def test_mean_loss_respects_alpha(self):
        # light statistical check; the acceptance suite runs the full one
        rep = run_coverage_experiment(SyntheticConfig(seed=5), alpha=0.3, trials=30)
        assert rep.feasibility_rate == 1.0
        assert rep.mean_loss <= 0.3 + 3 * rep.se

    def test_lambda_grows_with_noise(self):
        lambdas = []
        for sigma in (0.05, 0.5, 2.0):
            cfg = SyntheticConfig(
                n_calibration=50, n_test=10, k_range=(5, 8), sigma=sigma, seed=13
            )
            rep = run_coverage_experiment(cfg, alpha=0.2, trials=5)
            lambdas.append(rep.mean_lambda)
        assert lambdas[0] < lambdas[1] < lambdas[2]

    def test_robust_superset_rate_is_exactly_one(self):
        cfg = SyntheticConfig(n_calibration=30, n_test=15, k_range=(3, 5), seed=9)
        rep = run_coverage_experiment(cfg, alpha=0.3, trials=3, robust=True)
        assert rep.superset_rate == 1.0
        assert rep.comparator_mean_loss is not None

    def test_validation(self):
        with pytest.raises(ValueError, match="trials"):
            run_coverage_experiment(SMALL, alpha=0.3, trials=0)
        with pytest.raises(ValueError, match="alpha"):
            run_coverage_experiment(SMALL, alpha=[], trials=1)


class TestCoverageReportShape:
    def test_per_trial_losses_must_match_trials(self):
        with pytest.raises(ValueError, match="one entry per trial"):
            CoverageReport(
                alpha=0.2,
                mode="exact",
                robust=False,
                trials=3,
                mean_loss=0.1,
                se=0.01,
                mean_set_size=4.0,
                mean_lambda=0.5,
                feasibility_rate=1.0,
                per_trial_losses=(0.1,),
            )

    def test_per_trial_losses_must_be_probabilities(self):
        with pytest.raises(ValueError, match="outside"):
            CoverageReport(
                alpha=0.2,
                mode="exact",
                robust=False,
                trials=1,
                mean_loss=0.1,
                se=None,
                mean_set_size=4.0,
                mean_lambda=0.5,
                feasibility_rate=1.0,
                per_trial_losses=(1.5,),
            )

    def test_to_dict_round_trips_floats(self):
        rep = run_coverage_experiment(SMALL, alpha=0.25, trials=2)
        d = rep.to_dict()
        assert d["alpha"] == 0.25
        assert d["per_trial_losses"] == list(rep.per_trial_losses)


class TestSummarize:
    def test_header_and_sorting(self):
        reps = [
            run_coverage_experiment(SMALL, alpha=0.4, trials=2),
            run_coverage_experiment(SMALL, alpha=0.2, trials=2),
        ]
        text = summarize(reps)
        lines = text.strip().split("\n")
        assert lines[0] == CSV_HEADER
        assert lines[1].startswith("0.2,exact,false,2,")
        assert lines[2].startswith("0.4,exact,false,2,")

    def test_floats_round_trip_through_repr(self):
        rep = run_coverage_experiment(SMALL, alpha=0.3, trials=2)
        row = summarize([rep]).strip().split("\n")[1].split(",")
        assert float(row[4]) == rep.mean_loss
        assert float(row[5]) == rep.se

    def test_missing_se_is_empty_field(self):
        rep = run_coverage_experiment(SMALL, alpha=0.3, trials=1)
        row = summarize([rep]).strip().split("\n")[1].split(",")
        assert row[5] == ""
