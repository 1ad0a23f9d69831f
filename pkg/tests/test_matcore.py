import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilae import matcore
from pilae.errors import NumericalError

from conftest import planted


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def penrose_errors(a, ap):
    return (
        rel(a @ ap @ a, a),
        rel(ap @ a @ ap, ap),
        rel((a @ ap).T, a @ ap),
        rel((ap @ a).T, ap @ a),
    )


@pytest.mark.parametrize("shape", [(1, 1), (1, 7), (7, 1), (5, 5), (12, 30), (30, 12), (40, 400), (400, 40)])
def test_svd_reconstructs_and_is_orthonormal(rng, shape):
    a = rng.standard_normal(shape)
    f = matcore.svd(a)
    k = min(shape)
    assert f.u.shape == (shape[0], k) and f.v.shape == (shape[1], k)
    assert rel(f.reconstruct(), a) < 1e-12
    assert np.allclose(f.u.T @ f.u, np.eye(k), atol=1e-12)
    assert np.allclose(f.v.T @ f.v, np.eye(k), atol=1e-12)
    assert np.all(np.diff(f.sigma) <= 0)


@pytest.mark.parametrize("shape", [(8, 8), (20, 35), (300, 40), (40, 300), (300, 300)])
def test_singular_values_match_lapack(rng, shape):
    a = rng.standard_normal(shape)
    ref = np.linalg.svd(a, compute_uv=False)
    assert np.allclose(matcore.svd(a).sigma, ref, rtol=1e-11, atol=1e-12 * ref[0])


def test_sign_convention_and_determinism(rng):
    a = rng.standard_normal((9, 14))
    f1, f2 = matcore.svd(a), matcore.svd(a)
    assert np.array_equal(f1.u, f2.u) and np.array_equal(f1.sigma, f2.sigma) and np.array_equal(f1.v, f2.v)
    idx = np.argmax(np.abs(f1.u), axis=0)
    assert np.all(f1.u[idx, np.arange(f1.u.shape[1])] >= 0)


def test_svd_of_diagonal_matrix():
    a = np.diag([3.0, -5.0, 1.0])
    f = matcore.svd(a)
    assert np.allclose(f.sigma, [5.0, 3.0, 1.0])
    assert rel(f.reconstruct(), a) < 1e-15


def test_zero_matrix_has_rank_zero_and_zero_pinv():
    a = np.zeros((4, 6))
    f = matcore.svd(a)
    assert f.rank() == 0
    assert np.all(matcore.pinv(a) == 0.0)
    assert np.allclose(f.u.T @ f.u, np.eye(4))


@given(st.integers(1, 60), st.integers(1, 60), st.data())
@settings(max_examples=60, deadline=None)
def test_numeric_rank_recovers_planted_rank(m, n, data):
    r = data.draw(st.integers(0, min(m, n)))
    seed = data.draw(st.integers(0, 2**32 - 1))
    a = planted(np.random.default_rng(seed), m, n, r)
    f = matcore.svd(a)
    assert matcore.numeric_rank(f.sigma, m, n) == r


def test_gram_route_rank_on_tall_rank_deficient(rng):
    # short side above the Jacobi limit goes through the Gram route
    a = planted(rng, 2000, 300, 120)
    f = matcore.svd(a)
    assert f.rank() == 120
    assert rel(f.reconstruct(), a) < 1e-10
    assert np.allclose(f.u.T @ f.u, np.eye(300), atol=1e-10)


@pytest.mark.parametrize("shape,r", [((6, 9), 3), ((9, 6), 6), ((25, 25), 10), ((50, 80), 50), ((300, 40), 17)])
def test_pinv_penrose_identities(rng, shape, r):
    a = planted(rng, *shape, r)
    ap = matcore.pinv(a)
    assert ap.shape == shape[::-1]
    assert max(penrose_errors(a, ap)) < 1e-10


def test_pinv_of_identity_and_known_values():
    assert np.allclose(matcore.pinv(np.eye(3)), np.eye(3))
    # rank-1: pinv(u v^T) = v u^T / (|u|^2 |v|^2)
    u, v = np.array([1.0, 2.0]), np.array([3.0, 0.0, 4.0])
    expect = np.outer(v, u) / (u @ u * (v @ v))
    assert np.allclose(matcore.pinv(np.outer(u, v)), expect, atol=1e-15)


def test_truncated_pinv_is_bit_identical_row_slice(rng):
    a = planted(rng, 30, 600, 30)
    full = matcore.pinv(a)
    for p in (1, 7, 255, 256, 257, 600):
        assert np.array_equal(matcore.truncated_pinv(a, p), full[:p])


def test_truncated_pinv_validates_p(rng):
    a = rng.standard_normal((4, 5))
    for bad in (0, 6, 2.5):
        with pytest.raises(ValueError):
            matcore.truncated_pinv(a, bad)


def test_ridge_pinv_matches_normal_equations(rng):
    h = rng.standard_normal((5, 9))
    lam = 0.3
    oracle = h.T @ np.linalg.inv(h @ h.T + lam * np.eye(5))
    assert rel(matcore.ridge_pinv(h, lam), oracle) < 1e-12
    t = rng.standard_normal((3, 9))
    assert rel(matcore.ridge_apply(t, h, lam), t @ oracle) < 1e-12


def test_ridge_pinv_tends_to_pinv_for_full_row_rank(rng):
    h = rng.standard_normal((4, 10))
    assert rel(matcore.ridge_pinv(h, 1e-12), matcore.pinv(h)) < 1e-6


def test_ridge_rejects_nonpositive_lambda(rng):
    with pytest.raises(ValueError):
        matcore.ridge_pinv(rng.standard_normal((2, 3)), 0.0)


def test_identity_distance_matches_dense_formula(rng):
    h = planted(rng, 6, 15, 4)
    lam = 1e-2
    n = h.shape[1]
    dense = np.linalg.norm(matcore.ridge_pinv(h, lam) @ h - np.eye(n)) ** 2 / n
    assert abs(matcore.identity_distance(h, lam) - dense) < 1e-12
    sigma = matcore.svd(h).sigma
    assert abs(matcore.identity_distance(h, lam, sigma=sigma) - dense) < 1e-12


def test_identity_distance_limits(rng):
    assert matcore.identity_distance(np.zeros((3, 5)), 1e-6) == pytest.approx(1.0)
    # square, well conditioned H: H^+ H -> I as lambda -> 0
    h = rng.standard_normal((8, 8)) + 8 * np.eye(8)
    assert matcore.identity_distance(h, 1e-12) < 1e-20


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        matcore.svd(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        matcore.svd(np.zeros((0, 3)))


def test_jacobi_non_convergence_is_reported(rng, monkeypatch):
    monkeypatch.setattr(matcore, "_MAX_SWEEPS", 1)
    with pytest.raises(NumericalError):
        matcore.svd(rng.standard_normal((20, 20)))
