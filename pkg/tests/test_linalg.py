import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrann.errors import ParameterError, ShapeError
from rrann.linalg import (
    matmul,
    pseudoinverse,
    random_rotation,
    randomized_svd,
    top_eigenvectors,
)

from oracles import det_cofactor, jacobi_svd, naive_matmul

F32 = np.float32


class TestMatmul:
    def test_identity(self, rng):
        m = rng.standard_normal((3, 3)).astype(F32)
        np.testing.assert_array_equal(matmul(np.eye(3, dtype=F32), m), m)

    def test_hand_example(self):
        a = np.array([[1, 2], [3, 4]], dtype=F32)
        b = np.array([[0], [1]], dtype=F32)
        np.testing.assert_allclose(matmul(a, b), [[2], [4]])

    def test_against_triple_loop(self, rng):
        a = rng.standard_normal((7, 5)).astype(F32)
        b = rng.standard_normal((5, 3)).astype(F32)
        np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), atol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3), dtype=F32), np.zeros((2, 3), dtype=F32))

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(1, 16),
        k=st.integers(1, 16),
        m=st.integers(1, 16),
        seed=st.integers(0, 2**31),
    )
    def test_vector_associativity(self, n, k, m, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((1, n)).astype(F32)
        a = r.standard_normal((n, k)).astype(F32)
        b = r.standard_normal((k, m)).astype(F32)
        left = matmul(matmul(x, a), b)
        right = matmul(x, matmul(a, b))
        scale = max(float(np.abs(right).max()), 1.0)
        np.testing.assert_allclose(left, right, atol=1e-4 * scale)


class TestRandomizedSvd:
    def test_identity_spectrum(self):
        f = randomized_svd(np.eye(5, dtype=F32), rank=5, seed=0)
        np.testing.assert_allclose(f.singular_values, np.ones(5), atol=1e-4)

    def test_known_rank_two(self, rng):
        a, b = rng.standard_normal((2, 9)).astype(F32)
        c, d = rng.standard_normal((2, 7)).astype(F32)
        m = np.outer(a, c) + np.outer(b, d)
        f = randomized_svd(m.astype(F32), rank=2, seed=1)
        recon = (f.u * f.singular_values) @ f.v.T
        assert np.linalg.norm(recon - m) <= 1e-3 * np.linalg.norm(m)

    def test_against_jacobi_oracle(self, rng):
        m = rng.standard_normal((20, 12)).astype(F32)
        f = randomized_svd(m, rank=12, seed=2)
        _, s_ref, _ = jacobi_svd(m)
        np.testing.assert_allclose(f.singular_values, s_ref, rtol=1e-3)

    def test_full_rank_reconstruction(self, rng):
        m = rng.standard_normal((15, 10)).astype(F32)
        f = randomized_svd(m, rank=10, power_iters=2, seed=3)
        recon = (f.u * f.singular_values) @ f.v.T
        assert np.linalg.norm(recon - m) <= 1e-3 * np.linalg.norm(m)

    def test_orthonormal_factors(self, rng):
        m = rng.standard_normal((30, 14)).astype(F32)
        f = randomized_svd(m, rank=6, seed=4)
        np.testing.assert_allclose(f.u.T @ f.u, np.eye(6), atol=1e-4)
        np.testing.assert_allclose(f.v.T @ f.v, np.eye(6), atol=1e-4)
        assert np.all(np.diff(f.singular_values) <= 1e-6)
        assert np.all(f.singular_values >= 0)

    def test_rank_too_large(self):
        with pytest.raises(ParameterError):
            randomized_svd(np.eye(4, dtype=F32), rank=5, seed=0)

    def test_deterministic(self, rng):
        m = rng.standard_normal((12, 8)).astype(F32)
        f1 = randomized_svd(m, rank=4, seed=9)
        f2 = randomized_svd(m, rank=4, seed=9)
        np.testing.assert_array_equal(f1.u, f2.u)
        np.testing.assert_array_equal(f1.singular_values, f2.singular_values)
        np.testing.assert_array_equal(f1.v, f2.v)


class TestPseudoinverse:
    def test_diagonal(self):
        np.testing.assert_allclose(
            pseudoinverse(np.diag([2.0, 4.0]).astype(F32)),
            np.diag([0.5, 0.25]),
            atol=1e-6,
        )

    def test_zero_matrix(self):
        np.testing.assert_array_equal(
            pseudoinverse(np.zeros((3, 3), dtype=F32)), np.zeros((3, 3), dtype=F32)
        )

    def test_left_inverse_property(self, rng):
        m = rng.standard_normal((10, 6)).astype(F32)
        pinv = pseudoinverse(m)
        np.testing.assert_allclose(pinv @ m, np.eye(6), atol=1e-3)

    def test_defining_property(self, rng):
        m = rng.standard_normal((8, 12)).astype(F32)
        pinv = pseudoinverse(m)
        err = np.linalg.norm(m @ pinv @ m - m) / np.linalg.norm(m)
        assert err <= 1e-3


class TestRandomRotation:
    def test_dim_one(self):
        r = random_rotation(1, seed=5)
        assert r.shape == (1, 1)
        assert abs(abs(r[0, 0]) - 1.0) < 1e-6

    def test_isometry(self, rng):
        for dim in (2, 7, 33):
            r = random_rotation(dim, seed=dim)
            v = rng.standard_normal(dim).astype(F32)
            assert abs(np.linalg.norm(r @ v) - np.linalg.norm(v)) <= 1e-4 * np.linalg.norm(v)

    def test_orthogonal(self):
        r = random_rotation(16, seed=6)
        np.testing.assert_allclose(r.T @ r, np.eye(16), atol=1e-4)

    def test_deterministic(self):
        np.testing.assert_array_equal(random_rotation(9, seed=7), random_rotation(9, seed=7))

    def test_unit_determinant_cofactor(self):
        for dim in range(1, 9):
            r = random_rotation(dim, seed=40 + dim)
            assert abs(abs(det_cofactor(r.astype(np.float64))) - 1.0) <= 1e-3


class TestTopEigenvectors:
    def test_planted_subspace(self, rng):
        basis, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        coeffs = rng.standard_normal((40, 2))
        data = (coeffs @ basis.T).astype(F32)
        w = top_eigenvectors(data, 2, seed=0)
        recon = data @ w @ w.T
        np.testing.assert_allclose(recon, data, atol=1e-4)

    def test_complete_basis(self, rng):
        data = rng.standard_normal((30, 6)).astype(F32)
        w = top_eigenvectors(data, 6, seed=0)
        np.testing.assert_allclose(w @ w.T, np.eye(6), atol=1e-3)

    def test_planted_principal_axis(self, rng):
        # exactly orthogonal columns with variances (9, 1, 1e-4, 1e-4)
        q, _ = np.linalg.qr(rng.standard_normal((200, 4)))
        data = (q * np.array([3.0, 1.0, 0.01, 0.01]) * np.sqrt(200)).astype(F32)
        w = top_eigenvectors(data, 1, seed=0)
        e1 = np.zeros(4)
        e1[0] = 1.0
        assert min(np.linalg.norm(w[:, 0] - e1), np.linalg.norm(w[:, 0] + e1)) <= 1e-3

    def test_randomized_path_matches_gram(self, rng):
        # s far below d triggers the sketched path; use a decaying spectrum so
        # the top-4 subspace is well separated and comparable
        u, _ = np.linalg.qr(rng.standard_normal((300, 48)))
        v, _ = np.linalg.qr(rng.standard_normal((48, 48)))
        spectrum = 10.0 * (0.7 ** np.arange(48))
        data = ((u * spectrum) @ v.T).astype(F32)
        w = top_eigenvectors(data, 4, seed=3)
        gram = data.astype(np.float64).T @ data.astype(np.float64)
        evals, evecs = np.linalg.eigh(gram)
        ref = evecs[:, np.argsort(evals)[::-1][:4]]
        # column spans must agree: projector distance small
        p1 = w @ w.T
        p2 = ref @ ref.T
        assert np.abs(p1 - p2).max() <= 1e-3

    def test_s_too_large(self):
        with pytest.raises(ParameterError):
            top_eigenvectors(np.eye(3, dtype=F32), 4, seed=0)

    def test_orthonormal(self, rng):
        data = rng.standard_normal((50, 10)).astype(F32)
        w = top_eigenvectors(data, 5, seed=0)
        np.testing.assert_allclose(w.T @ w, np.eye(5), atol=1e-4)
