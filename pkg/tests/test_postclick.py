import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ClickPopulation, clicked_rows, display_rows, fit_conversion_model
from wnll.data import EMPTY_VECTOR
from wnll.linear import ModelParams
from wnll.postclick import (
    TwoStagePrediction,
    clicked_sample_weight,
    postclick_weight,
    two_stage_predict,
    two_stage_predict_batch,
)


def test_postclick_weight_examples():
    assert postclick_weight(1, 50.0, 0.3) == 50.0
    assert postclick_weight(1, 50.0, 0.01) == 50.0
    assert postclick_weight(0, 10.0, 0.1) == pytest.approx(1.0)
    assert postclick_weight(0, 10.0, 1 - 1e-12) == pytest.approx(10.0)


def test_postclick_weight_rejects_bad_inputs():
    with pytest.raises(ValueError):
        postclick_weight(0, 1.0, 0.0)
    with pytest.raises(ValueError):
        postclick_weight(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        postclick_weight(0, 0.0, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_postclick_weight_monotone(v, a, b):
    lo, hi = sorted((a, b))
    assert postclick_weight(0, v, lo) <= postclick_weight(0, v, hi)
    assert postclick_weight(1, v, lo) == postclick_weight(1, v, hi)


def test_postclick_weight_broadcasts():
    out = postclick_weight(np.array([1, 0, 0]), np.array([2.0, 4.0, 8.0]), 0.5)
    assert out.tolist() == [2.0, 2.0, 4.0]
    assert clicked_sample_weight(np.array([1, 0]), np.array([3.0, 5.0])).tolist() == [3.0, 5.0]


def _model(intercept, w0=0.0):
    w = np.zeros(1 << 16)
    w[0] = w0
    return ModelParams(w, intercept)


def test_two_stage_product():
    logit = lambda p: np.log(p / (1 - p))
    click, conv = _model(logit(0.1)), _model(logit(0.05))
    pred = two_stage_predict(click, conv, EMPTY_VECTOR)
    assert isinstance(pred, TwoStagePrediction)
    assert pred.p_click == pytest.approx(0.1)
    assert pred.p_total == pytest.approx(0.005)
    assert pred.p_total == pred.p_click * pred.p_conv_given_click
    assert pred.p_total <= min(pred.p_click, pred.p_conv_given_click)


def test_retraining_conv_model_changes_only_second_factor():
    X = sp.csr_matrix(np.array([[1.0], [0.0], [2.0]]))
    X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(3, 1 << 16))
    click = _model(-2.0, 0.3)
    pc1, q1 = two_stage_predict_batch(click, _model(-4.0, 0.1), X)
    pc2, q2 = two_stage_predict_batch(click, _model(-3.0, -0.2), X)
    assert np.array_equal(pc1, pc2)
    assert not np.allclose(q1, q2)


# ---------------------------------------------------------------- equivalence


@pytest.fixture(scope="module")
def population():
    pop = ClickPopulation()
    return pop, *pop.grid_search()


def test_postclick_weighting_matches_display_optimum(population):
    pop, best, fbest = population
    for rows in (display_rows, clicked_rows):
        theta = fit_conversion_model(pop, rows)
        gap = (pop.display_objective(*theta) - fbest) / fbest
        assert gap <= 1e-6
        assert np.max(np.abs(theta - best)) <= 0.01


def test_unweighted_conversion_model_misses_the_optimum(population):
    pop, best, fbest = population
    theta = fit_conversion_model(pop, lambda p: clicked_rows(p, weighted=False))
    assert np.max(np.abs(theta - best)) > 0.05
    assert pop.display_objective(*theta) > fbest * (1 + 1e-4)
