import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oialr import linalg
from oialr.exceptions import ConvergenceError, ShapeError
from oialr.linalg import compact_svd, matmul, orthogonal_component, qr_mixing

from .conftest import rel_fro


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def sym3_eigenvalues(g):
    """Roots of det(g - x I) for symmetric 3x3 g, trigonometric form of the cubic."""
    p1 = g[0, 1] ** 2 + g[0, 2] ** 2 + g[1, 2] ** 2
    q = np.trace(g) / 3.0
    p2 = (g[0, 0] - q) ** 2 + (g[1, 1] - q) ** 2 + (g[2, 2] - q) ** 2 + 2 * p1
    p = math.sqrt(p2 / 6.0)
    b = (g - q * np.eye(3)) / p
    r = np.linalg.det(b) / 2.0
    phi = math.acos(min(1.0, max(-1.0, r))) / 3.0
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    return np.array([e1, 3 * q - e1 - e3, e3])


def gram_schmidt(a):
    m, n = a.shape
    q = np.zeros((m, n))
    r = np.zeros((n, n))
    for j in range(n):
        x = a[:, j].copy()
        for _ in range(2):  # re-orthogonalize
            for i in range(j):
                c = q[:, i] @ x
                r[i, j] += c
                x -= c * q[:, i]
        r[j, j] = np.linalg.norm(x)
        q[:, j] = x / r[j, j]
    return q, r


def inv_sqrt_2x2(g):
    """(g)^(-1/2) of symmetric positive definite 2x2 from its closed-form eigenpairs."""
    a, b, d = g[0, 0], g[0, 1], g[1, 1]
    mean = (a + d) / 2
    rad = math.hypot((a - d) / 2, b)
    out = np.zeros((2, 2))
    for lam in (mean + rad, mean - rad):
        vec = np.array([b, lam - a]) if abs(b) > 1e-15 else (np.array([1.0, 0.0]) if abs(lam - a) < abs(lam - d) else np.array([0.0, 1.0]))
        vec = vec / np.linalg.norm(vec)
        out += np.outer(vec, vec) / math.sqrt(lam)
    return out


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
matrices = st.tuples(st.integers(1, 9), st.integers(1, 9)).flatmap(lambda s: arrays(np.float64, s, elements=finite))


# matmul


def test_matmul_identity_and_permutation():
    a = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(matmul(np.eye(3), a), a)
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0, 1], [1, 0]]), [[2, 1], [4, 3]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), rtol=0, atol=1e-13)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"2x3 by 2x3"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


# compact_svd


def test_svd_identity_and_diagonal():
    np.testing.assert_allclose(compact_svd(np.eye(4)).s, np.ones(4), atol=1e-15)
    f = compact_svd(np.diag([3.0, 1.0, 0.0]))
    np.testing.assert_allclose(f.s, [3, 1, 0], atol=1e-15)
    np.testing.assert_allclose(f.u.T @ f.u, np.eye(3), atol=1e-12)


def test_svd_matches_gram_characteristic_polynomial(rng):
    a = rng.normal(size=(6, 3))
    f = compact_svd(a)
    assert rel_fro(f.reconstruct(), a) < 1e-12
    np.testing.assert_allclose(f.s**2, sym3_eigenvalues(a.T @ a), rtol=1e-10)


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (7, 3), (3, 7), (12, 12)])
def test_svd_shapes(rng, shape):
    a = rng.normal(size=shape)
    f = compact_svd(a)
    r = min(shape)
    assert f.u.shape == (shape[0], r) and f.v.shape == (shape[1], r) and f.rank == r
    assert rel_fro(f.reconstruct(), a) < 1e-12


def test_svd_rank_deficient_gets_orthonormal_completion(rng):
    a = rng.normal(size=(8, 2)) @ rng.normal(size=(2, 5))
    f = compact_svd(a)
    assert np.count_nonzero(f.s) == 2
    np.testing.assert_allclose(f.u.T @ f.u, np.eye(5), atol=1e-10)
    np.testing.assert_allclose(f.v.T @ f.v, np.eye(5), atol=1e-10)
    assert rel_fro(f.reconstruct(), a) < 1e-10


def test_svd_zero_matrix():
    f = compact_svd(np.zeros((4, 2)))
    np.testing.assert_array_equal(f.s, [0.0, 0.0])
    np.testing.assert_allclose(f.u.T @ f.u, np.eye(2), atol=1e-12)


def test_svd_sign_convention(rng):
    f = compact_svd(rng.normal(size=(9, 4)))
    for j in range(4):
        col = f.u[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_svd_deterministic(rng):
    a = rng.normal(size=(30, 11))
    f1, f2 = compact_svd(a), compact_svd(a.copy())
    for x, y in ((f1.u, f2.u), (f1.s, f2.s), (f1.v, f2.v)):
        assert x.tobytes() == y.tobytes()


def test_svd_does_not_modify_input(rng):
    a = rng.normal(size=(3, 6))
    keep = a.copy()
    compact_svd(a)
    compact_svd(np.ascontiguousarray(a.T).T)
    np.testing.assert_array_equal(a, keep)


def test_svd_rejects_nonfinite_and_empty():
    with pytest.raises(ValueError):
        compact_svd(np.array([[1.0, np.nan]]))
    with pytest.raises(ShapeError):
        compact_svd(np.zeros((0, 3)))
    with pytest.raises(ShapeError):
        compact_svd(np.zeros(3))


def test_svd_convergence_error_reports_cap(rng, monkeypatch):
    monkeypatch.setattr(linalg, "MAX_SWEEPS", 1)
    with pytest.raises(ConvergenceError) as exc:
        compact_svd(rng.normal(size=(20, 10)))
    assert exc.value.iterations == 1


@given(matrices)
def test_svd_invariants(a):
    f = compact_svd(a)
    r = min(a.shape)
    assert np.all(f.s >= 0) and np.all(np.diff(f.s) <= 0)
    assert np.linalg.norm(f.reconstruct() - a) / max(np.linalg.norm(a), 1e-12) <= 1e-8
    assert np.linalg.norm(f.u.T @ f.u - np.eye(r)) <= 1e-8
    assert np.linalg.norm(f.v.T @ f.v - np.eye(r)) <= 1e-8
    fro2 = np.sum(a * a)
    assert abs(fro2 - np.sum(f.s**2)) <= 1e-8 * max(fro2, 1e-300)


# qr_mixing


def test_qr_examples(rng):
    q0, _ = np.linalg.qr(rng.normal(size=(6, 3)))
    q, r = qr_mixing(q0)
    np.testing.assert_allclose(r, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(q, q0, atol=1e-12)
    q, r = qr_mixing([[2.0, 0.0], [0.0, 3.0]])
    np.testing.assert_allclose(q, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(r, np.diag([2.0, 3.0]), atol=1e-15)


def test_qr_matches_gram_schmidt(rng):
    a = rng.normal(size=(5, 3))
    q, r = qr_mixing(a)
    q_gs, r_gs = gram_schmidt(a)
    np.testing.assert_allclose(q, q_gs, atol=1e-12)
    np.testing.assert_allclose(r, r_gs, atol=1e-12)
    assert rel_fro(q @ r, a) < 1e-12


def test_qr_wide_is_shape_error():
    with pytest.raises(ShapeError, match="m >= n"):
        qr_mixing(np.ones((2, 3)))


@given(st.integers(1, 8).flatmap(lambda n: st.integers(n, 10).flatmap(lambda m: arrays(np.float64, (m, n), elements=finite))))
def test_qr_invariants(a):
    q, r = qr_mixing(a)
    n = a.shape[1]
    assert np.linalg.norm(q.T @ q - np.eye(n)) <= 1e-8
    assert np.all(np.diag(r) >= 0)
    np.testing.assert_array_equal(r, np.triu(r))
    assert np.linalg.norm(q @ r - a) <= 1e-8 * max(np.linalg.norm(a), 1e-12)


# orthogonal_component


def test_polar_examples(rng):
    q0, _ = np.linalg.qr(rng.normal(size=(5, 3)))
    np.testing.assert_allclose(orthogonal_component(q0), q0, atol=1e-12)
    np.testing.assert_allclose(orthogonal_component(np.diag([5.0, 2.0])), np.eye(2), atol=1e-15)


def test_polar_matches_inverse_sqrt_oracle(rng):
    a = rng.normal(size=(4, 2))
    expected = a @ inv_sqrt_2x2(a.T @ a)
    np.testing.assert_allclose(orthogonal_component(a), expected, atol=1e-12)


@given(matrices, st.floats(1e-3, 1e3))
def test_polar_scale_invariant_and_semi_orthogonal(a, c):
    f = compact_svd(a)
    if f.s[-1] <= 1e-6 * max(f.s[0], 1e-300):
        return  # the polar factor is not unique for rank-deficient input
    p = orthogonal_component(a)
    assert np.linalg.norm(orthogonal_component(c * a) - p) <= 1e-8
    gram = p.T @ p if a.shape[0] >= a.shape[1] else p @ p.T
    assert np.linalg.norm(gram - np.eye(min(a.shape))) <= 1e-8
