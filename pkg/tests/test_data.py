import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpforest import (
    BENIGN,
    MALICIOUS,
    DataError,
    Dataset,
    calibration_split,
    normalize,
    rng_from,
    spawn_seed,
    stratified_sample,
)

from conftest import make_labelled


def column_dataset(values, label=0):
    values = np.asarray(values, dtype=float).reshape(-1, 1)
    y = np.full(len(values), label, dtype=int)
    return Dataset(values, y, tuple(f"i{k}" for k in range(len(values))), ("f0",))


class TestDataset:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError, match="unique"):
            Dataset(np.zeros((2, 1)), np.array([0, 1]), ("a", "a"), ("f0",))

    def test_bad_labels_rejected(self):
        with pytest.raises(DataError, match="labels"):
            Dataset(np.zeros((2, 1)), np.array([0, 2]), ("a", "b"), ("f0",))

    def test_take_preserves_order_and_labels(self, labelled_dataset):
        ds = labelled_dataset(3, 2)
        sub = ds.take([4, 0])
        assert sub.ids == (ds.ids[4], ds.ids[0])
        assert list(sub.y) == [1, 0]

    def test_instances_are_immutable(self, labelled_dataset):
        ds = labelled_dataset(2, 2)
        with pytest.raises(ValueError):
            ds.X[0, 0] = 99.0


class TestNormalize:
    def test_affine_endpoints(self):
        train, _, _ = normalize(column_dataset([2.0, 4.0, 6.0]))
        assert train.X[:, 0].tolist() == [0.0, 0.5, 1.0]

    def test_out_of_range_clamped(self):
        _, (test,), _ = normalize(column_dataset([2.0, 6.0]), [column_dataset([8.0, 1.0])])
        assert test.X[:, 0].tolist() == [1.0, 0.0]

    def test_constant_column_maps_to_zero(self):
        train, (other,), _ = normalize(column_dataset([5.0, 5.0, 5.0]), [column_dataset([7.0])])
        assert not train.X.any()
        assert not other.X.any()

    def test_dimension_mismatch(self, labelled_dataset):
        with pytest.raises(DataError, match="dimension mismatch"):
            normalize(labelled_dataset(2, 2, dim=3), [labelled_dataset(2, 2, dim=4)])

    def test_empty_train_rejected(self):
        empty = Dataset(np.empty((0, 1)), np.empty(0, dtype=int), (), ("f0",))
        with pytest.raises(DataError, match="empty"):
            normalize(empty)

    @settings(deadline=None, max_examples=30)
    @given(st.integers(min_value=2, max_value=40), st.integers(min_value=1, max_value=6), st.integers(0, 2**32 - 1))
    def test_idempotent_on_normalized_data(self, n, d, seed):
        rng = rng_from(seed)
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 50) + rng.normal()
        X[:, 0] = 3.25  # keep one degenerate column in play
        ds = Dataset(X, None, tuple(map(str, range(n))), tuple(f"f{j}" for j in range(d)))
        once, _, _ = normalize(ds)
        twice, _, _ = normalize(once)
        assert np.abs(twice.X - once.X).max() <= 1e-12


class TestStratifiedSample:
    def test_exact_class_counts_from_corpus_sized_pool(self, labelled_dataset):
        pool = labelled_dataset(4816, 1866, dim=1)
        selected, remainder = stratified_sample(pool, {BENIGN: 300, MALICIOUS: 300}, seed=11)
        sub = pool.take(selected)
        assert selected.size == 600
        assert sub.class_counts() == (300, 300)
        assert remainder.size == pool.n - 600
        assert not np.intersect1d(selected, remainder).size

    def test_zero_counts_select_nothing(self, labelled_dataset):
        pool = labelled_dataset(5, 5)
        selected, remainder = stratified_sample(pool, {BENIGN: 0, MALICIOUS: 0}, seed=1)
        assert selected.size == 0
        assert remainder.tolist() == list(range(10))

    def test_same_seed_same_selection(self, labelled_dataset):
        pool = labelled_dataset(50, 20)
        a, _ = stratified_sample(pool, {BENIGN: 10, MALICIOUS: 5}, seed=7)
        b, _ = stratified_sample(pool, {BENIGN: 10, MALICIOUS: 5}, seed=7)
        assert a.tolist() == b.tolist()

    def test_insufficient_class_names_the_class(self, labelled_dataset):
        pool = labelled_dataset(10, 3)
        with pytest.raises(DataError, match="malicious"):
            stratified_sample(pool, {BENIGN: 5, MALICIOUS: 4}, seed=0)


class TestCalibrationSplit:
    @pytest.mark.parametrize(
        "n_benign,n_malicious,expected",
        [(4500, 1500, (899, 299)), (4500, 500, (899, 99)), (10, 10, (1, 1))],
    )
    def test_per_class_counts(self, labelled_dataset, n_benign, n_malicious, expected):
        train = labelled_dataset(n_benign, n_malicious, dim=1)
        plan = calibration_split(train, 0.2, seed=3)
        calib = train.take(plan.calibration)
        assert calib.class_counts() == expected
        assert plan.proper_training.size + plan.calibration.size == train.n

    def test_small_class_rejected(self, labelled_dataset):
        train = labelled_dataset(100, 5)
        with pytest.raises(DataError, match="malicious"):
            calibration_split(train, 0.2, seed=0)

    def test_bad_fraction_rejected(self, labelled_dataset):
        with pytest.raises(DataError, match="fraction"):
            calibration_split(labelled_dataset(10, 10), 1.0, seed=0)

    @settings(deadline=None, max_examples=30)
    @given(
        st.integers(min_value=12, max_value=400),
        st.integers(min_value=12, max_value=400),
        st.integers(0, 2**32 - 1),
    )
    def test_partition_property(self, n_benign, n_malicious, seed):
        train = make_labelled(n_benign, n_malicious, dim=1, seed=seed)
        plan = calibration_split(train, 0.2, seed=seed)
        union = np.union1d(plan.proper_training, plan.calibration)
        assert union.tolist() == list(range(train.n))
        assert not np.intersect1d(plan.proper_training, plan.calibration).size


class TestSeeding:
    def test_streams_differ_but_reproduce(self):
        a = rng_from(42, 1).random(4)
        b = rng_from(42, 2).random(4)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, rng_from(42, 1).random(4))

    def test_spawn_seed_stable(self):
        assert spawn_seed(42, 3, 1) == spawn_seed(42, 3, 1)
        assert spawn_seed(42, 3, 1) != spawn_seed(42, 3, 2)
