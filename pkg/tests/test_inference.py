import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskrank.errors import DegenerateInputError, ParameterError, ShapeError
from maskrank.inference import (SimilarityMatrix, class_probabilities, semantic_inference,
                                similarity_matrix)

from oracles import inference_loop


def test_self_similarity_diagonal():
    T = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_allclose(np.diag(similarity_matrix(T, T)), 1.0, atol=1e-12)


def test_orthogonal_embeddings_zero():
    I = np.eye(4)
    np.testing.assert_allclose(similarity_matrix(I[:2], I[2:]), 0.0, atol=1e-15)


def test_similarity_closed_form():
    R = similarity_matrix(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 1.0]]) / [[1], [np.sqrt(2)]])
    np.testing.assert_allclose(R, [[1.0], [0.70711]], atol=5e-6)


def test_similarity_zero_row_named():
    with pytest.raises(DegenerateInputError, match="row 1"):
        similarity_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2))


def test_similarity_dim_mismatch():
    with pytest.raises(ShapeError):
        similarity_matrix(np.ones((2, 3)), np.ones((2, 4)))


def test_similarity_matrix_type_checks():
    with pytest.raises(ParameterError):
        SimilarityMatrix(np.array([[1.5]]), ("a",), [True])
    with pytest.raises(ShapeError):
        SimilarityMatrix(np.array([[0.5]]), ("a", "b"), [True, False])
    sm = SimilarityMatrix(np.array([[0.5, 0.1]]), ("a",), [True])
    assert np.asarray(sm).shape == (1, 2)


def test_single_proposal_labels_argmax():
    R = np.array([[0.1], [0.7], [0.3]])
    M = np.full((1, 2, 3), 0.4)
    np.testing.assert_array_equal(semantic_inference(R, M, 0.1), np.ones((2, 3), dtype=int))


def test_disjoint_one_hot_pastes_classes():
    R = np.array([[1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])  # proposal 0 -> class 0, 1 -> class 2
    M = np.zeros((2, 2, 2))
    M[0, 0] = 1.0
    M[1, 1] = 1.0
    out = semantic_inference(R, M, 0.01)
    np.testing.assert_array_equal(out, [[0, 0], [2, 2]])


def test_flat_proposals_need_shape():
    R = np.zeros((2, 1))
    with pytest.raises(ShapeError):
        semantic_inference(R, np.ones((1, 4)), 1.0)
    assert semantic_inference(R, np.ones((1, 4)), 1.0, shape=(2, 2)).shape == (2, 2)


def test_proposal_count_mismatch():
    with pytest.raises(ShapeError):
        semantic_inference(np.zeros((2, 3)), np.ones((2, 2, 2)), 1.0)


def test_ties_go_to_lowest_class():
    R = np.zeros((3, 2))
    out = semantic_inference(R, np.full((2, 2, 2), 0.5), 1.0)
    assert np.all(out == 0)


def test_random_instance_matches_loop():
    rng = np.random.default_rng(11)
    R = rng.uniform(-1, 1, (4, 3))
    M = rng.uniform(0.01, 0.99, (3, 4))
    got = semantic_inference(R, M, 0.1, shape=(2, 2))
    assert got.ravel().tolist() == inference_loop(R, M, 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.randoms(use_true_random=False))
def test_proposal_permutation_invariance(seed, rnd):
    rng = np.random.default_rng(seed)
    R = rng.uniform(-1, 1, (4, 5))
    M = rng.uniform(0.01, 0.99, (5, 3, 3))
    perm = list(range(5))
    rnd.shuffle(perm)
    np.testing.assert_array_equal(semantic_inference(R, M, 0.2),
                                  semantic_inference(R[:, perm], M[perm], 0.2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_column_shift_invariance(seed):
    rng = np.random.default_rng(seed)
    R = rng.uniform(-1, 1, (4, 5))
    M = rng.uniform(0.01, 0.99, (5, 3, 3))
    shift = rng.uniform(-0.5, 0.5, (1, 5))
    a = semantic_inference(R, M, 0.2)
    b = semantic_inference(R + shift, M, 0.2)
    np.testing.assert_array_equal(a, b)


def test_ensemble_weight_zero_is_identity():
    rng = np.random.default_rng(3)
    R = rng.uniform(-1, 1, (3, 4))
    s = rng.uniform(0.1, 1, (3, 4))
    np.testing.assert_allclose(class_probabilities(R, 0.1, s, 0.0), class_probabilities(R, 0.1))


def test_ensemble_weight_one_follows_external_scores():
    rng = np.random.default_rng(4)
    R = rng.uniform(-1, 1, (3, 4))
    s = rng.uniform(0.1, 1, (3, 4))
    np.testing.assert_allclose(class_probabilities(R, 0.1, s, 1.0), s / s.sum(axis=0), atol=1e-12)


def test_ensemble_validation():
    R = np.zeros((2, 2))
    with pytest.raises(ParameterError):
        class_probabilities(R, 0.1, np.ones((2, 2)), 1.5)
    with pytest.raises(ShapeError):
        class_probabilities(R, 0.1, np.ones((3, 2)), 0.5)
    with pytest.raises(ParameterError):
        class_probabilities(R, 0.1, np.zeros((2, 2)), 0.5)
