import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wnll.data import EMPTY_VECTOR, SparseVector
from wnll.errors import DataError, IndexOutOfRange
from wnll.linear import (
    PRED_EPS,
    ModelParams,
    dumps_model,
    load_model,
    loads_model,
    predict,
    predict_batch,
    save_model,
    score,
    score_batch,
)

D = 16


def _vec(pairs):
    idx = np.array(sorted(pairs), dtype=np.int64)
    return SparseVector(idx, np.array([pairs[i] for i in sorted(pairs)], dtype=np.float64))


def test_score_examples():
    m = ModelParams.zeros(D)
    assert score(m, _vec({3: 1.0, 9: 2.0})) == 0.0
    w = np.zeros(1 << D)
    w[5] = 1.0
    assert score(ModelParams(w, 0.0, 0.0, D), _vec({5: 2.0})) == 2.0
    assert score(ModelParams(w, 0.7, 0.0, D), EMPTY_VECTOR) == 0.7


def test_score_rejects_out_of_range():
    with pytest.raises(IndexOutOfRange):
        score(ModelParams.zeros(D), _vec({1 << D: 1.0}))
    with pytest.raises(IndexOutOfRange):
        score_batch(ModelParams.zeros(D), sp.csr_matrix((1, 10)))


def test_predict_examples():
    w = np.zeros(1 << D)
    w[0] = 1.0
    assert predict(ModelParams.zeros(D), EMPTY_VECTOR) == 0.5
    assert predict(ModelParams(w, 1e6, 0.0, D), EMPTY_VECTOR) == 1.0 - PRED_EPS
    assert predict(ModelParams(w, -1e6, 0.0, D), EMPTY_VECTOR) == PRED_EPS
    assert predict(ModelParams(w, math.log(9.0), 0.0, D), EMPTY_VECTOR) == pytest.approx(0.9, rel=1e-15)


def test_params_invariants():
    with pytest.raises(ValueError):
        ModelParams(np.zeros(1 << D), 0.0, -1.0, D)
    bad = np.zeros(1 << D)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        ModelParams(bad, 0.0, 0.0, D)
    with pytest.raises(ValueError):
        ModelParams(np.zeros(10), 0.0, 0.0, D)


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_predict_monotone_and_symmetric(a, b):
    m = lambda s: predict(ModelParams(np.zeros(1 << D), s, 0.0, D), EMPTY_VECTOR)
    if a <= b:
        assert m(a) <= m(b)
    assert m(-a) == pytest.approx(1.0 - m(a), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-10, 10))
def test_score_linear_in_features(seed, alpha):
    rng = np.random.default_rng(seed)
    m = ModelParams(rng.normal(size=1 << D), float(rng.normal()), 0.0, D)
    rows = sp.random(2, 1 << D, density=2e-4, random_state=rng, format="csr")
    x1 = SparseVector(rows[0].indices.astype(np.int64), rows[0].data)
    x2 = SparseVector(rows[1].indices.astype(np.int64), rows[1].data)
    comb = (alpha * rows[0] + rows[1]).tocsr()
    comb.sum_duplicates()
    x12 = SparseVector(comb.indices.astype(np.int64), comb.data)
    b = m.intercept
    lhs = score(m, x12) - b
    rhs = alpha * (score(m, x1) - b) + (score(m, x2) - b)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    m = ModelParams(rng.normal(size=1 << D), -0.3, 1.0, D)
    X = sp.random(30, 1 << D, density=1e-4, random_state=rng, format="csr")
    single = [predict(m, SparseVector(X[i].indices.astype(np.int64), X[i].data)) for i in range(30)]
    assert np.allclose(predict_batch(m, X), single, rtol=1e-14, atol=0)


def test_serialization_bit_identical(tmp_path):
    rng = np.random.default_rng(2)
    w = np.zeros(1 << D)
    nz = rng.choice(1 << D, 500, replace=False)
    w[nz] = rng.normal(size=500) * 10.0 ** rng.integers(-12, 5, size=500)
    m = ModelParams(w, float(rng.normal()), 3.25, D)
    save_model(tmp_path / "m.json", m)
    back = load_model(tmp_path / "m.json")
    assert back.hash_bits == D and back.lam == 3.25 and back.intercept == m.intercept
    assert np.array_equal(back.weights, m.weights)
    X = sp.random(200, 1 << D, density=1e-3, random_state=rng, format="csr")
    assert np.array_equal(predict_batch(back, X), predict_batch(m, X))
    assert dumps_model(back) == dumps_model(m)


def test_load_rejects_wrong_format():
    with pytest.raises(DataError):
        loads_model('{"format": "other", "version": 1}')
