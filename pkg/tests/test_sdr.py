import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rmfgp.errors import InvalidEigenvalue, RankDeficient, SliceTooSmall, TooFewPoints
from rmfgp.sdr import (
    bic_criterion,
    bic_dimension,
    default_slice_count,
    orthonormalize,
    projector,
    save,
    sir,
    slice_response,
    subspace_distance,
)


def test_subspace_distance_identities(rng):
    A = rng.standard_normal((5, 2))
    assert subspace_distance(A, A) < 1e-10
    assert subspace_distance([[1.0], [0.0]], [[0.0], [1.0]]) == pytest.approx(math.sqrt(2), abs=1e-12)
    Q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    assert subspace_distance(A, A @ Q) < 1e-10
    assert subspace_distance(A, -A[:, ::-1]) < 1e-10
    with pytest.raises(RankDeficient):
        subspace_distance(A, np.column_stack([A[:, 0], 2 * A[:, 0]]))


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
def test_subspace_distance_symmetric_and_bounded(seed, d1, d2):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((5, d1)), rng.standard_normal((5, d2))
    m = subspace_distance(A, B)
    assert m == pytest.approx(subspace_distance(B, A), abs=1e-12)
    assert 0 <= m <= math.sqrt(d1 + d2) + 1e-12


def test_subspace_distance_projector_formula(rng):
    A = rng.standard_normal((4, 1))
    B = rng.standard_normal((4, 1))
    a, b = A[:, 0] / np.linalg.norm(A), B[:, 0] / np.linalg.norm(B)
    # for unit vectors ||aa' - bb'||_F^2 = 2 - 2 cos^2
    assert subspace_distance(A, B) == pytest.approx(math.sqrt(2 - 2 * (a @ b) ** 2), abs=1e-12)
    assert np.allclose(projector(A), np.outer(a, a))


@given(arrays(float, st.integers(10, 80), elements=st.floats(-5, 5)), st.integers(2, 6))
def test_slices_are_balanced(y, H):
    y = np.round(y, 6)
    if np.unique(y).size < 3 * H:
        return
    try:
        spec = slice_response(y, H)
    except Exception:
        return
    sizes = np.bincount(spec.labels)[1:]
    # slice h holds responses no larger than slice h+1
    for h in range(1, H):
        assert y[spec.labels == h].max() <= y[spec.labels == h + 1].min()
    if np.unique(y).size == y.size:
        assert sizes.max() - sizes.min() <= 1


def test_ties_go_to_lower_slice():
    y = np.array([0, 1, 1, 1, 2, 3], dtype=float)
    spec = slice_response(y, 2)
    assert list(spec.labels) == [1, 1, 1, 1, 2, 2]


def test_default_slice_count():
    assert default_slice_count(500) == 10
    assert default_slice_count(22) == 4
    assert default_slice_count(6) == 2


def test_sir_recovers_linear_direction(rng):
    X = rng.standard_normal((2000, 4))
    y = X[:, 0] + 0.01 * rng.standard_normal(2000)
    res = sir(X, y)
    assert subspace_distance(np.eye(4)[:, :1], res.basis(1)) < 0.1


def test_sir_no_signal(rng):
    res = sir(rng.standard_normal((2000, 4)), rng.standard_normal(2000))
    assert res.eigenvalues.max() < 0.05


def test_save_finds_symmetric_direction_where_sir_fails(rng):
    X = rng.uniform(-1, 1, (4000, 4))
    y = X[:, 0] ** 2
    res = save(X, y, 10)
    assert subspace_distance(np.eye(4)[:, :1], res.basis(1)) < 0.1
    lam = sir(X, y, 10).eigenvalues
    # no gap: the leading SIR eigenvalue is comparable to the rest
    assert lam[0] < 3 * lam[1] + 0.01


def test_save_no_signal(rng):
    res = save(rng.random((4000, 4)), rng.random(4000))
    assert res.eigenvalues.max() < 0.1


def test_save_matrix_is_symmetric_psd_and_rotation_orthogonal(rng):
    X = rng.random((300, 5))
    res = save(X, np.sin(X @ np.arange(1.0, 6.0)))
    assert np.allclose(res.M, res.M.T, atol=1e-12)
    assert res.eigenvalues.min() > -1e-10
    assert np.all(np.diff(res.eigenvalues) <= 1e-15)
    assert np.linalg.norm(res.rotation.T @ res.rotation - np.eye(5)) < 1e-10


def test_save_on_linear_benchmark_large_sample():
    from rmfgp.benchmarks import linear_problem

    prob = linear_problem()
    X = np.random.default_rng(7).random((10000, 6))
    res = save(X, prob.high_eval(X))
    assert subspace_distance(prob.true_subspace, res.basis(2)) < 0.1


def test_save_errors(rng):
    with pytest.raises(TooFewPoints):
        save(rng.random((4, 4)), rng.random(4), 2)
    X = rng.random((12, 2))
    y = np.arange(12.0)
    with pytest.raises(SliceTooSmall):
        save(X, y, 12)


def test_constant_response_is_degenerate(rng):
    res = save(rng.random((50, 3)), np.ones(50))
    assert res.degenerate and np.array_equal(res.rotation, np.eye(3))


def test_orthonormalize_keeps_span_and_positive_diagonal(rng):
    A = rng.standard_normal((5, 3))
    Q = orthonormalize(A)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-12)
    R = Q.T @ A
    assert np.allclose(np.tril(R, -1), 0, atol=1e-12) and np.all(np.diag(R) > 0)


def test_bic_pure_penalty_selects_one():
    d, G = bic_dimension(np.ones(6), 500, 6, c_n=math.log(500))
    assert d == 1
    ks = np.arange(1, 6)
    assert np.allclose(G, -math.log(500) * ks * (12 - ks + 1) / 2)


def test_bic_detects_spike():
    lam = np.array([2.0, 1.8, 1.01, 1.0, 1.0])
    assert bic_dimension(lam, 500, 5)[0] == 2


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_bic_argmax_invariant_to_positive_scaling(c, seed):
    lam = 1 + np.sort(np.random.default_rng(seed).random(5))[::-1]
    G = bic_criterion(lam, 300, 5)
    assert np.argmax(c * G) == np.argmax(G)


def test_bic_rejects_eigenvalues_below_one():
    with pytest.raises(InvalidEigenvalue):
        bic_dimension(np.array([1.5, 0.9]), 100, 2)
    assert bic_dimension(np.array([1.5, 1 - 1e-12]), 100, 2)[0] == 1
