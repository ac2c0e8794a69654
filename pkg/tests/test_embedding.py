import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from ovsbench.embedding import EmbeddingSet, cosine_matrix, cosine_similarity, l2_normalize, mask_pool
from ovsbench.errors import DegenerateInputError, EmptyRegionError, ShapeError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 16), elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.7071, abs=1e-4)
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(oracles.cosine([1, 1], [1, 0]), abs=1e-12)


def test_cosine_rejects_zero_and_mismatch():
    with pytest.raises(DegenerateInputError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(ShapeError):
        cosine_similarity([1, 0, 0], [1, 0])


@given(vectors)
def test_self_cosine_is_one(v):
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-9)


@given(vectors, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(v, s1, s2):
    w = np.roll(v, 1) + 0.5
    if np.linalg.norm(w) == 0:
        return
    assert cosine_similarity(s1 * v, s2 * w) == pytest.approx(cosine_similarity(v, w), abs=1e-9)
    assert cosine_similarity(v, w) == pytest.approx(cosine_similarity(w, v), abs=1e-15)


def test_l2_normalize():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8])
    np.testing.assert_allclose(l2_normalize([0, 1, 0]), [0, 1, 0])
    with pytest.raises(DegenerateInputError):
        l2_normalize([0, 0])


@given(vectors)
def test_l2_normalize_idempotent(v):
    once = l2_normalize(v)
    assert np.linalg.norm(once) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-12)


def test_cosine_matrix_matches_scalar(rng):
    x, y = rng.standard_normal((4, 5)), rng.standard_normal((3, 5))
    m = cosine_matrix(x, y)
    for i in range(4):
        for j in range(3):
            assert m[i, j] == pytest.approx(oracles.cosine(x[i], y[j]), abs=1e-12)


def test_mask_pool_examples(rng):
    v = np.array([0.3, -2.0, 5.0])
    feats = np.broadcast_to(v, (3, 4, 3))
    mask = np.zeros((3, 4), bool)
    mask[1, 2] = mask[0, 0] = True
    np.testing.assert_allclose(mask_pool(feats, mask), v)

    feats = np.zeros((1, 2, 2))
    feats[0, 0] = [1, 0]
    feats[0, 1] = [0, 1]
    np.testing.assert_allclose(mask_pool(feats, [[1, 1]]), [0.5, 0.5])


def test_mask_pool_matches_pixel_loop(rng):
    for _ in range(10):
        feats = rng.standard_normal((4, 4, 6))
        mask = rng.random((4, 4)) < 0.5
        mask[rng.integers(4), rng.integers(4)] = True
        expected = oracles.mask_pool(feats.tolist(), mask.tolist())
        np.testing.assert_allclose(mask_pool(feats, mask), expected, atol=1e-12)


def test_mask_pool_full_image_is_global_mean(rng):
    feats = rng.standard_normal((5, 7, 3))
    np.testing.assert_allclose(mask_pool(feats, np.ones((5, 7))), feats.reshape(-1, 3).mean(axis=0), atol=1e-12)


def test_mask_pool_errors():
    with pytest.raises(EmptyRegionError):
        mask_pool(np.ones((2, 2, 3)), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        mask_pool(np.ones((2, 2, 3)), np.ones((3, 2)))


def test_embedding_set_validation():
    s = EmbeddingSet([[1, 2], [3, 4]], ["a", "b"])
    assert len(s) == 2 and s.dim == 2 and s.index_of("b") == 1
    assert s.rows.dtype == np.float64
    with pytest.raises(ShapeError):
        EmbeddingSet([[1, 2], [3, 4]], ["a", "a"])
    with pytest.raises(ShapeError):
        EmbeddingSet([[1, 2]], ["a", "b"])
    with pytest.raises(DegenerateInputError):
        EmbeddingSet([[np.nan, 1.0]])
