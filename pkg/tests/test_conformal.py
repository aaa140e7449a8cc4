import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpforest import (
    BENIGN,
    MALICIOUS,
    CalibrationScores,
    DataError,
    Dataset,
    calibration_scores,
    class_pvalues,
    forced_prediction,
    forced_predictions,
    icp_pvalue,
    label_conditional,
    lcmcp_pvalue,
    lcmicp_pvalue,
    mondrian_calibration,
    mondrian_pvalue,
    nonconformity,
    one_nn_scorer,
    prediction_sets,
    predict_with,
    rf_lcmicp_pipeline,
    rng_from,
    tcp_pvalue,
)

from conftest import make_labelled


def counting_oracle(scores, test_score, add_one_to_denominator=True):
    """Direct counting definition of the p-value, independent of the library."""
    count = sum(1 for a in scores if a >= test_score)
    return (count + 1) / (len(scores) + (1 if add_one_to_denominator else 0))


def calib_from(benign=(), malicious=()):
    return CalibrationScores((np.asarray(benign, dtype=float), np.asarray(malicious, dtype=float)))


score_lists = st.lists(
    st.one_of(st.sampled_from([i / 8 for i in range(9)]), st.floats(0, 1)),
    min_size=1,
    max_size=20,
)


class TestNonconformity:
    def test_benign_score(self):
        assert nonconformity(np.array([0.75, 0.25]), BENIGN) == pytest.approx(0.25)

    def test_worst_case(self):
        assert nonconformity(np.array([1.0, 0.0]), MALICIOUS) == 1.0

    def test_symmetric_posterior(self):
        assert nonconformity(np.array([0.5, 0.5]), BENIGN) == 0.5
        assert nonconformity(np.array([0.5, 0.5]), MALICIOUS) == 0.5

    def test_batch_form(self):
        post = np.array([[0.9, 0.1], [0.2, 0.8]])
        out = nonconformity(post, np.array([0, 1]))
        assert out.tolist() == pytest.approx([0.1, 0.2])


class TestIcpPvalue:
    def test_hand_counted_example(self):
        assert icp_pvalue([0.1, 0.2, 0.3, 0.9], 0.25) == pytest.approx(0.6)

    def test_score_below_everything(self):
        assert icp_pvalue([0.1, 0.2, 0.3, 0.9], 0.0) == 1.0

    def test_score_above_everything(self):
        assert icp_pvalue([0.1, 0.2, 0.3, 0.9], 0.95) == pytest.approx(1 / 5)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            icp_pvalue([], 0.5)

    @settings(deadline=None, max_examples=60)
    @given(score_lists, st.floats(0, 1))
    def test_matches_counting_oracle(self, scores, t):
        assert icp_pvalue(scores, t) == counting_oracle(scores, t)


class TestLcmicpPvalue:
    def test_hand_counted_example(self):
        calib = calib_from(malicious=[0.2, 0.5, 0.8])
        assert lcmicp_pvalue(calib, MALICIOUS, 0.4) == pytest.approx(0.75)

    def test_score_below_class_bucket(self):
        calib = calib_from(malicious=[0.2, 0.5, 0.8])
        assert lcmicp_pvalue(calib, MALICIOUS, 0.1) == 1.0

    def test_round_denominator_for_calibration_bucket_of_899(self):
        rng = rng_from(0)
        calib = calib_from(benign=rng.random(899))
        assert lcmicp_pvalue(calib, BENIGN, 2.0) == 1 / 900

    def test_literal_denominator_variant(self):
        calib = calib_from(malicious=[0.2, 0.5, 0.8])
        assert lcmicp_pvalue(calib, MALICIOUS, 0.4, denominator="literal") == pytest.approx(1.0)
        # the literal variant can exceed 1 when the test score is smallest
        assert lcmicp_pvalue(calib, MALICIOUS, 0.0, denominator="literal") == pytest.approx(4 / 3)

    def test_empty_bucket_rejected(self):
        with pytest.raises(DataError, match="class"):
            lcmicp_pvalue(calib_from(benign=[0.5]), MALICIOUS, 0.5)

    @settings(deadline=None, max_examples=60)
    @given(score_lists, score_lists, st.floats(0, 1))
    def test_matches_counting_oracle_per_class(self, benign, malicious, t):
        calib = calib_from(benign, malicious)
        assert lcmicp_pvalue(calib, BENIGN, t) == counting_oracle(benign, t)
        assert lcmicp_pvalue(calib, MALICIOUS, t) == counting_oracle(malicious, t)
        assert lcmicp_pvalue(calib, MALICIOUS, t, denominator="literal") == counting_oracle(
            malicious, t, add_one_to_denominator=False
        )

    @settings(deadline=None, max_examples=40)
    @given(score_lists, st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_test_score(self, scores, t1, t2):
        lo, hi = min(t1, t2), max(t1, t2)
        calib = calib_from(benign=scores)
        assert lcmicp_pvalue(calib, BENIGN, lo) >= lcmicp_pvalue(calib, BENIGN, hi)

    def test_minimum_is_one_over_count_plus_one(self):
        calib = calib_from(benign=np.linspace(0.1, 0.6, 13))
        assert lcmicp_pvalue(calib, BENIGN, 0.99) == 1 / 14


class TestMondrian:
    def test_custom_taxonomy_buckets(self):
        scores = np.array([0.1, 0.4, 0.9, 0.3, 0.7])
        cats = np.array(["easy", "easy", "hard", "hard", "hard"])
        by_cat = mondrian_calibration(scores, cats)
        assert by_cat["easy"].tolist() == [0.1, 0.4]
        assert mondrian_pvalue(by_cat, "hard", 0.5) == counting_oracle([0.9, 0.3, 0.7], 0.5)

    def test_label_conditional_matches_lcmicp(self):
        scores = np.array([0.3, 0.6, 0.2, 0.9])
        labels = np.array([0, 1, 0, 1])
        by_cat = mondrian_calibration(scores, label_conditional(None, labels))
        calib = calib_from(benign=[0.3, 0.2], malicious=[0.6, 0.9])
        for t in (0.0, 0.25, 0.61, 1.0):
            assert mondrian_pvalue(by_cat, 1, t) == lcmicp_pvalue(calib, MALICIOUS, t)

    def test_unknown_category_rejected(self):
        with pytest.raises(DataError, match="category"):
            mondrian_pvalue({"a": np.array([0.5])}, "b", 0.5)


class TestPredictionSets:
    def test_both_classes_kept(self):
        assert prediction_sets(np.array([0.62, 0.08]), 0.05).tolist() == [[True, True]]

    def test_one_class_kept(self):
        assert prediction_sets(np.array([0.62, 0.08]), 0.10).tolist() == [[True, False]]

    def test_empty_set_permitted(self):
        assert prediction_sets(np.array([0.02, 0.01]), 0.05).tolist() == [[False, False]]

    def test_per_class_levels(self):
        masks = prediction_sets(np.array([0.08, 0.08]), (0.05, 0.10))
        assert masks.tolist() == [[True, False]]

    def test_invalid_level_rejected(self):
        with pytest.raises(DataError):
            prediction_sets(np.array([0.5, 0.5]), 1.0)


class TestForcedPrediction:
    def test_direct_example(self):
        fp = forced_prediction([0.62, 0.08])
        assert (fp.label, fp.confidence, fp.credibility) == (BENIGN, pytest.approx(0.92), 0.62)

    def test_tie_goes_to_benign(self):
        fp = forced_prediction([0.5, 0.5])
        assert fp.label == BENIGN
        assert fp.confidence == 0.5 and fp.credibility == 0.5

    def test_tie_break_configurable(self):
        fp = forced_prediction([0.5, 0.5], tie_break=MALICIOUS)
        assert fp.label == MALICIOUS

    def test_low_credibility_signals_strangeness(self):
        fp = forced_prediction([0.01, 0.002])
        assert fp.credibility == 0.01

    @settings(deadline=None, max_examples=40)
    @given(st.floats(0.001, 1), st.floats(0.001, 1))
    def test_confidence_plus_second_pvalue_is_one(self, p0, p1):
        fp = forced_prediction([p0, p1])
        assert fp.confidence + min(p0, p1) == 1.0
        assert fp.credibility == max(p0, p1)


class TestTransductive:
    def test_single_training_example_has_two_possible_pvalues(self):
        for seed in range(10):
            rng = rng_from(seed)
            train = Dataset(rng.normal(size=(1, 2)), [0], ("t0",), ("a", "b"))
            p = tcp_pvalue(train, rng.normal(size=2), 0, one_nn_scorer)
            assert p in (0.5, 1.0)

    def test_duplicate_of_training_pair_is_not_strange(self):
        rng = rng_from(3)
        X = rng.normal(size=(12, 2))
        y = np.array([0, 1] * 6)
        train = Dataset(X, y, tuple(map(str, range(12))), ("a", "b"))
        p = tcp_pvalue(train, X[4], int(y[4]), one_nn_scorer)
        assert p >= 2 / 13

    def test_label_conditional_duplicate_bound(self):
        rng = rng_from(4)
        X = rng.normal(size=(10, 2))
        y = np.array([0] * 7 + [1] * 3)
        train = Dataset(X, y, tuple(map(str, range(10))), ("a", "b"))
        p = lcmcp_pvalue(train, X[8], 1, one_nn_scorer)
        assert p >= 2 / 4

    def test_vacuous_class_gives_pvalue_one(self):
        rng = rng_from(5)
        X = rng.normal(size=(4, 2))
        y = np.zeros(4, dtype=int)
        train = Dataset(X, y, tuple(map(str, range(4))), ("a", "b"))
        assert lcmcp_pvalue(train, rng.normal(size=2), 1, one_nn_scorer) == 1.0

    def test_transductive_validity_smoke(self):
        # error rate at level 0.2 stays near or below 0.2 over i.i.d. draws
        rng = rng_from(6)
        errors = 0
        draws = 300
        for _ in range(draws):
            y = (rng.random(21) < 0.5).astype(int)
            X = rng.normal(size=(21, 2)) + y[:, None]
            train = Dataset(X[:-1], y[:-1], tuple(map(str, range(20))), ("a", "b"))
            p = tcp_pvalue(train, X[-1], int(y[-1]), one_nn_scorer)
            errors += p <= 0.2
        assert errors / draws <= 0.2 + 3 * np.sqrt(0.2 * 0.8 / draws)


@pytest.fixture(scope="module")
def fitted():
    pool = make_labelled(260, 140, dim=4, seed=8)  # benign rows 0..259, malicious 260..399
    proper = pool.take([*range(0, 120), *range(260, 320)])
    calib = pool.take([*range(120, 200), *range(320, 360)])
    tests = pool.take([*range(200, 260), *range(360, 400)])
    model, result = rf_lcmicp_pipeline(proper, calib, tests, n_trees=25, deltas=(0.05, 0.2), seed=10)
    return model, result, tests


class TestPipeline:
    def test_pvalues_in_unit_interval(self, fitted):
        _, result, _ = fitted
        assert (result.pvalues > 0).all() and (result.pvalues <= 1).all()

    def test_empty_test_set(self):
        pool = make_labelled(60, 60, dim=3, seed=12)  # benign rows 0..59, malicious 60..119
        proper = pool.take([*range(0, 40), *range(60, 100)])
        calib = pool.take([*range(40, 60), *range(100, 120)])
        empty = Dataset(np.empty((0, 3)), None, (), pool.feature_names)
        model, result = rf_lcmicp_pipeline(proper, calib, empty, n_trees=5, seed=1)
        assert result.pvalues.shape == (0, 2)
        assert model.forest.n_trees == 5

    def test_calibration_instance_as_test_is_conforming(self):
        pool = make_labelled(80, 80, dim=3, seed=13)  # benign rows 0..79, malicious 80..159
        proper = pool.take([*range(0, 50), *range(80, 130)])
        calib = pool.take([*range(50, 80), *range(130, 160)])
        probe = calib.take([0])
        model, result = rf_lcmicp_pipeline(proper, calib, probe, n_trees=10, seed=2)
        label = int(probe.y[0])
        n_label = model.calibration.count(label)
        assert result.pvalues[0, label] >= 2 / (n_label + 1)

    def test_sets_nested_in_delta(self, fitted):
        _, result, _ = fitted
        grid = np.arange(0.0, 1.0, 0.07)
        previous = prediction_sets(result.pvalues, grid[0])
        for d in grid[1:]:
            current = prediction_sets(result.pvalues, d)
            assert (current <= previous).all()
            previous = current

    def test_forced_prediction_consistency_with_sets(self, fitted):
        _, result, _ = fitted
        labels, confidence, _ = forced_predictions(result.pvalues)
        eps = 1e-9
        for i in range(result.pvalues.shape[0]):
            p_second = 1.0 - confidence[i]
            if result.pvalues[i].max() == p_second:  # tied p-values have no singleton level
                continue
            only = prediction_sets(result.pvalues[i], min(p_second + eps, 1 - eps))[0]
            assert only[labels[i]] and only.sum() == 1
            if p_second > 0:
                both = prediction_sets(result.pvalues[i], p_second - min(eps, p_second / 2))[0]
                assert both.all()

    def test_predict_with_matches_pipeline(self, fitted):
        model, result, tests = fitted
        again = predict_with(model, tests, deltas=(0.05, 0.2))
        assert np.array_equal(again.pvalues, result.pvalues)
        assert all(np.array_equal(a, b) for a, b in zip(again.set_masks, result.set_masks))

    def test_calibration_scores_bucketed_by_true_class(self):
        post = np.array([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]])
        labels = np.array([0, 1, 1])
        calib = calibration_scores(post, labels)
        assert calib.by_class[BENIGN].tolist() == pytest.approx([0.1])
        assert calib.by_class[MALICIOUS].tolist() == pytest.approx([0.3, 0.6])

    def test_class_pvalues_shape_and_agreement(self, fitted):
        model, result, tests = fitted
        direct = class_pvalues(model.calibration, model.forest.posterior(tests.X))
        assert np.array_equal(direct, result.pvalues)
