import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal, assert_allclose

from conftest import make_dataset
from toplabel_calib.data import (LabeledDataset, TopLabelView, confusion_tables, conf1,
                                 predicted_category, top_label_view)
from toplabel_calib.errors import CalibrationError, EmptyCategoryWarning


def test_predicted_category_ties_go_to_lowest_index():
    assert predicted_category([0.4, 0.4, 0.2]) == 0
    assert predicted_category([0.2, 0.4, 0.4]) == 1
    assert_array_equal(predicted_category([[0.1, 0.9], [0.5, 0.5]]), [1, 0])
    assert isinstance(predicted_category([0.1, 0.9]), int)


def test_top_scores_and_correct(tiny):
    assert_allclose(tiny.top_scores, [0.7, 0.6, 0.5, 0.9, 0.7, 0.8, 0.6, 0.7, 0.6, 0.5])
    assert_array_equal(tiny.predicted, [0, 0, 0, 0, 1, 1, 1, 2, 2, 2])
    assert tiny.correct.sum() == 7


def test_top_label_view_hand_split(tiny):
    v0 = top_label_view(tiny, 0)
    assert_allclose(v0.tp_scores, [0.5, 0.7, 0.9])
    assert_allclose(v0.fp_scores, [0.6])
    assert v0.precision == pytest.approx(0.75)
    v2 = top_label_view(tiny, 2)
    assert_allclose(v2.tp_scores, [0.5, 0.7])
    assert_allclose(v2.fp_scores, [0.6])


def test_labeled_scores_put_fp_before_tp_on_ties():
    v = TopLabelView(0, [0.5, 0.7], [0.5, 0.2])
    s, tp = v.labeled_scores()
    assert_allclose(s, [0.2, 0.5, 0.5, 0.7])
    assert_array_equal(tp, [False, False, True, True])


def test_view_rejects_scores_outside_range():
    with pytest.raises(CalibrationError):
        TopLabelView(0, [1.2], [])


def test_empty_category_warns():
    ds = make_dataset(("a", "b", "c"), [0, 1], [[0.6, 0.3, 0.1], [0.7, 0.2, 0.1]])
    with pytest.warns(EmptyCategoryWarning):
        v = top_label_view(ds, 2)
    assert v.n_positive == 0 and v.precision is None


def test_confusion_tables_match_hand_counts(tiny):
    t = confusion_tables(tiny)
    assert_array_equal(t.joint, [[3, 0, 1], [1, 2, 0], [0, 1, 2]])
    assert_allclose(t.col_normalized[:, 0], [0.75, 0.25, 0.0])
    assert_allclose(t.row_normalized[1], [1 / 3, 2 / 3, 0.0])
    assert_allclose(np.diag(t.col_normalized), [c for c in conf1(tiny)])


def test_undefined_rows_and_columns():
    ds = make_dataset(("a", "b", "c"), [0, 0, 1], [[0.6, 0.3, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    t = confusion_tables(ds)
    assert_array_equal(t.row_defined, [True, True, False])
    assert_array_equal(t.col_defined, [True, True, False])
    assert np.isnan(t.col_normalized[:, 2]).all()
    assert "undefined" in t.format("col_normalized")
    assert conf1(ds)[2] is None


def test_empty_dataset_errors():
    ds = LabeledDataset(("a", "b"), (), np.zeros(0), np.zeros((0, 2)))
    with pytest.raises(CalibrationError):
        confusion_tables(ds)
    with pytest.raises(CalibrationError):
        conf1(ds)


@pytest.mark.parametrize("kwargs", [
    dict(category_names=("a", "a"), labels=[0], scores=[[0.5, 0.5]]),
    dict(category_names=("a", "b"), labels=[2], scores=[[0.5, 0.5]]),
    dict(category_names=("a", "b"), labels=[0], scores=[[0.6, 0.5]]),
    dict(category_names=("a", "b"), labels=[0], scores=[[1.1, -0.1]]),
    dict(category_names=("a", "b"), labels=[0], scores=[[np.nan, 0.5]]),
    dict(category_names=("a", "b"), labels=[0, 1], scores=[[0.5, 0.5]]),
])
def test_dataset_validation(kwargs):
    ids = tuple(str(i) for i in range(len(kwargs["labels"])))
    with pytest.raises(CalibrationError):
        LabeledDataset(kwargs["category_names"], ids, kwargs["labels"], kwargs["scores"])


def test_dataset_is_read_only(tiny):
    with pytest.raises(ValueError):
        tiny.scores[0, 0] = 1.0


def test_subset_and_iteration(tiny):
    sub = tiny.subset(tiny.predicted == 1)
    assert len(sub) == 3
    assert [s.id for s in sub] == ["s4", "s5", "s6"]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_views_partition_the_dataset(K, n, seed):
    rng = np.random.default_rng(seed)
    ds = make_dataset([f"c{i}" for i in range(K)], rng.integers(0, K, n), rng.dirichlet(np.ones(K), n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyCategoryWarning)
        views = [top_label_view(ds, k) for k in range(K)]
    assert sum(v.n_positive for v in views) == n
    assert sum(v.n_tp for v in views) == ds.correct.sum()
    assert confusion_tables(ds).joint.sum() == n
