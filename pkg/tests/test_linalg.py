import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastgntk import linalg
from oracles import kron_loop, vec_loop


def test_matmul_shape_error():
    with pytest.raises(linalg.ShapeError):
        linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_and_matvec(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    loop = np.array([[sum(a[i, k] * b[k, j] for k in range(4)) for j in range(2)]
                     for i in range(3)])
    assert np.allclose(linalg.matmul(a, b), loop, atol=1e-14)
    x = rng.standard_normal(4)
    assert np.allclose(linalg.matvec(a, x), [sum(a[i, k] * x[k] for k in range(4))
                                             for i in range(3)])
    with pytest.raises(linalg.ShapeError):
        linalg.matvec(a, np.ones(3))


def test_matmul_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        linalg.matmul(np.array([[np.inf]]), np.array([[1.0]]))


def test_kron_small_example():
    a = np.array([[1.0, 2.0]])
    b = np.array([[0.0], [1.0]])
    # a is 1x2 and b is 2x1, so a[0, j1] * b[i2, 0] lands at (i2, j1)
    assert np.array_equal(linalg.kron(a, b), kron_loop(a, b))
    assert np.array_equal(linalg.kron(a, b), np.array([[0.0, 0.0], [1.0, 2.0]]))


def test_kron_matches_index_definition(rng):
    for _ in range(10):
        p, q, r, s = rng.integers(1, 5, size=4)
        a = rng.standard_normal((p, q))
        b = rng.standard_normal((r, s))
        assert np.array_equal(linalg.kron(a, b), kron_loop(a, b))


def test_kron_cap(monkeypatch):
    monkeypatch.setattr(linalg, "MAX_KRON_ENTRIES", 10)
    with pytest.raises(MemoryError):
        linalg.kron(np.ones((2, 2)), np.ones((2, 2)))


def test_vectorize_roundtrip(rng):
    h = rng.standard_normal((3, 5))
    v = linalg.vectorize(h)
    assert np.array_equal(v, vec_loop(h))
    assert np.array_equal(linalg.devectorize(v, 3, 5), h)
    with pytest.raises(linalg.ShapeError):
        linalg.devectorize(v, 4, 4)


def test_vec_trick_shape_error():
    with pytest.raises(linalg.ShapeError):
        linalg.vec_trick(np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)))


dims = st.integers(1, 6)


@settings(max_examples=60, deadline=None)
@given(p=dims, q=dims, r=dims, s=dims, seed=st.integers(0, 2**31))
def test_vec_trick_identity(p, q, r, s, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, q))
    h = rng.standard_normal((q, s))
    b = rng.standard_normal((r, s))
    lhs = linalg.vectorize(linalg.vec_trick(a, h, b))
    rhs = linalg.kron(a, b) @ linalg.vectorize(h)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


@settings(max_examples=40, deadline=None)
@given(p=dims, q=dims, r=dims, s=dims, seed=st.integers(0, 2**31))
def test_kron_mixed_product(p, q, r, s, seed):
    rng = np.random.default_rng(seed)
    a, c = rng.standard_normal((p, q)), rng.standard_normal((q, p))
    b, d = rng.standard_normal((r, s)), rng.standard_normal((s, r))
    lhs = linalg.kron(a, b) @ linalg.kron(c, d)
    rhs = linalg.kron(a @ c, b @ d)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_symmetrize_rejects_asymmetric():
    with pytest.raises(ValueError):
        linalg.symmetrize(np.array([[1.0, 2.0], [0.0, 1.0]]))
    k = np.array([[2.0, 1.0 + 1e-12], [1.0, 2.0]])
    assert np.allclose(linalg.symmetrize(k), linalg.symmetrize(k).T)


def test_solve_spd_identity():
    y = np.array([1.0, -2.0, 3.0])
    assert np.allclose(linalg.solve_spd_jitter(np.eye(3), y, jitter=0.0), y)


def test_solve_spd_matches_dense_solve(rng):
    m = rng.standard_normal((6, 6))
    k = m @ m.T + 0.5 * np.eye(6)
    y = rng.standard_normal(6)
    x = linalg.solve_spd_jitter(k, y, jitter=0.0)
    assert np.allclose(x, np.linalg.solve(k, y), rtol=1e-10)


def test_solve_spd_jitter_rescues_singular():
    k = np.ones((3, 3))  # rank one
    y = np.ones(3)
    with pytest.raises(linalg.NotPositiveDefiniteError):
        linalg.solve_spd_jitter(k, y, jitter=0.0)
    x = linalg.solve_spd_jitter(k, y, jitter=1e-6)
    assert np.allclose((k + 1e-6 * np.eye(3)) @ x, y, atol=1e-8)


def test_solve_spd_rejects_indefinite():
    with pytest.raises(linalg.NotPositiveDefiniteError, match="jitter"):
        linalg.solve_spd_jitter(np.diag([1.0, -1.0]), np.ones(2), jitter=0.0)


def test_default_jitter_and_eigs():
    k = np.diag([1.0, 3.0])
    assert linalg.default_jitter(k) == pytest.approx(2e-8)
    assert linalg.sym_eigvals_min(k) == pytest.approx(1.0)
    assert linalg.spectral_norm(k) == pytest.approx(3.0)
