import numpy as np
import pytest
import scipy.sparse as sp

from diffrank.cg import CgConfig, SolverError, solve_cg


def test_identity_one_iteration():
    x, stats = solve_cg(np.eye(5), np.eye(5)[1], CgConfig(20, 1e-12), return_stats=True)
    np.testing.assert_array_equal(x, np.eye(5)[1])
    assert stats.iterations == 1


def test_two_by_two_against_analytic_inverse():
    alpha = 0.99
    m = np.array([[1.0, -alpha], [-alpha, 1.0]])
    x = solve_cg(m, [1.0, 0.0], CgConfig(50, 1e-12))
    analytic = np.array([1.0, alpha]) / (1 - alpha**2)
    np.testing.assert_allclose(x, analytic, rtol=1e-10)
    np.testing.assert_allclose(x, [50.2513, 49.7487], atol=1e-4)


def test_random_spd_residual():
    rng = np.random.default_rng(7)
    g = rng.standard_normal((50, 50))
    m = g @ g.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = solve_cg(m, b, CgConfig(500, 1e-10))
    assert np.linalg.norm(m @ x - b) <= 1e-9 * max(1.0, np.linalg.norm(b))


def test_sparse_input_and_determinism():
    rng = np.random.default_rng(3)
    d = sp.random(80, 80, density=0.05, random_state=4)
    m = sp.csr_matrix(d @ d.T + sp.identity(80))
    b = rng.standard_normal(80)
    x1 = solve_cg(m, b, CgConfig(30, 1e-12))
    x2 = solve_cg(m, b, CgConfig(30, 1e-12))
    assert x1.tobytes() == x2.tobytes()


def test_iteration_cap():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((40, 40))
    m = g @ g.T + np.eye(40)
    _, stats = solve_cg(m, rng.standard_normal(40), CgConfig(3, 1e-14), return_stats=True)
    assert stats.iterations == 3 and stats.residual > 1e-14


def test_zero_rhs():
    x = solve_cg(np.eye(3), np.zeros(3))
    assert not x.any()


def test_indefinite_matrix_raises():
    with pytest.raises(SolverError):
        solve_cg(np.diag([1.0, -1.0]), np.array([1.0, 1.0]), CgConfig(10, 1e-12))


def test_non_finite_raises():
    with pytest.raises(SolverError):
        solve_cg(np.eye(2), np.array([np.nan, 1.0]))


def test_config_validation():
    with pytest.raises(ValueError):
        CgConfig(0, 1e-6)
    with pytest.raises(ValueError):
        CgConfig(5, -1.0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve_cg(np.eye(3), np.ones(2))
