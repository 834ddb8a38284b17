import numpy as np
import pytest
import scipy.sparse as sp

from topt import fem
from topt.linsys import (ConvergenceError, SolverError, SpdFactorization, as_sparse, is_symmetric, matvec,
                         solve_spd)
from topt.mesh import build_rect_mesh


def _spd(n=30):
    mesh = build_rect_mesh(1.0, 1.0, n, n)
    return (fem.assemble_stiffness(mesh, 1.0) + fem.assemble_mass(mesh)).tocsr()


def test_identity_takes_one_iteration():
    b = np.arange(1.0, 6.0)
    x, report = solve_spd(sp.identity(5, format="csr"), b, method="cg")
    np.testing.assert_allclose(x, b)
    assert report.iterations == 1
    assert report.method == "cg"


def test_cg_matches_dense(rng):
    A = _spd(8)
    b = rng.standard_normal(A.shape[0])
    x, report = solve_spd(A, b, tol=1e-10, method="cg")
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-6, atol=1e-6)
    assert report.relative_residual <= 1e-10


def test_zero_rhs_gives_zero():
    x, report = solve_spd(_spd(4), np.zeros(25))
    assert not np.any(x)
    assert report.iterations == 0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        solve_spd(_spd(4), np.ones(3))
    with pytest.raises(ValueError):
        matvec(_spd(4), np.ones(3))


def test_cg_iteration_limit_raises_and_auto_falls_back(rng):
    A = _spd(30)
    b = rng.standard_normal(A.shape[0])
    with pytest.raises(ConvergenceError) as info:
        solve_spd(A, b, tol=1e-12, max_iter=3, method="cg")
    assert info.value.x.shape == b.shape
    x, report = solve_spd(A, b, tol=1e-12, max_iter=3, method="auto")
    assert report.method == "direct"
    assert report.relative_residual < 1e-10


def test_high_contrast_coefficients_solved():
    # kappa contrast of 1e4 between neighbouring elements
    mesh = build_rect_mesh(1.0, 1.0, 16, 16)
    coeff = np.where(np.arange(mesh.num_triangles) % 2 == 0, 1e4, 1.0)
    A = (fem.assemble_stiffness(mesh, coeff) + fem.assemble_mass(mesh)).tocsr()
    b = np.ones(mesh.num_nodes)
    x, report = solve_spd(A, b, tol=1e-10)
    assert np.linalg.norm(b - A @ x) <= 1e-8 * np.linalg.norm(b)


def test_symmetry_check():
    assert is_symmetric(_spd(5))
    nonsym = as_sparse(np.triu(np.ones((4, 4))))
    assert not is_symmetric(nonsym)
    with pytest.raises(SolverError):
        solve_spd(nonsym, np.ones(4), method="direct")


def test_symmetry_check_on_empty_matrix():
    assert is_symmetric(sp.csr_matrix((3, 3)))
    assert is_symmetric(as_sparse(np.zeros((2, 2))))


def test_direct_solve_flags_residual_above_tol():
    A = _spd(6)
    b = np.ones(A.shape[0])
    x, report = solve_spd(A, b, tol=1e-30, method="direct")
    assert not report.within_tol
    np.testing.assert_allclose(A @ x, b, atol=1e-10)
    _, report = solve_spd(A, b, tol=1e-8, method="direct")
    assert report.within_tol


def test_factorization_reuse(rng):
    A = _spd(6)
    factor = SpdFactorization(A)
    for _ in range(3):
        b = rng.standard_normal(A.shape[0])
        x, report = factor.solve(b)
        np.testing.assert_allclose(A @ x, b, atol=1e-10)
        assert report.method == "direct"
