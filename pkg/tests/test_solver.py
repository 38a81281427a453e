import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from esfem.assembly import build_system
from esfem.bvp import box_spec
from esfem.mesh import DimensionMode, generate_structured_mesh, perturb_interior_nodes
from esfem.solver import (ConvergenceError, IndefiniteMatrixError, SolverError, SolverMethod,
                          conjugate_gradient, solve)


def spd(rng, n, shift=None):
    a = rng.standard_normal((n, n))
    return a @ a.T + (n if shift is None else shift) * np.eye(n)


def test_identity_one_iteration(rng):
    b = rng.standard_normal(30)
    rep = solve(sp.identity(30, format="csr"), b)
    assert rep.iterations == 1
    assert np.allclose(rep.solution, b, rtol=1e-15)
    assert rep.method is SolverMethod.CG


def test_diagonal_one_iteration():
    # the Jacobi preconditioner makes any diagonal system exact after one step
    A = sp.diags(np.arange(1.0, 21.0)).tocsr()
    rep = solve(A, np.ones(20))
    assert rep.iterations == 1
    assert np.allclose(rep.solution, 1 / np.arange(1.0, 21.0))


def test_cg_matches_cholesky(rng):
    A = sp.csr_matrix(spd(rng, 50))
    b = rng.standard_normal(50)
    x_cg = solve(A, b, tolerance=1e-12).solution
    x_ch = solve(A, b, method="cholesky").solution
    assert np.linalg.norm(x_cg - x_ch) <= 1e-8 * np.linalg.norm(x_ch)


def test_residual_history(rng):
    A = sp.csr_matrix(spd(rng, 40, shift=1.0))
    b = rng.standard_normal(40)
    rep = solve(A, b, tolerance=1e-10)
    assert len(rep.residual_history) == rep.iterations + 1
    assert rep.residual_history[0] == pytest.approx(1.0)
    assert rep.final_relative_residual <= 1e-10
    assert np.linalg.norm(b - A @ rep.solution) <= 1e-10 * np.linalg.norm(b)


def test_initial_guess_does_not_change_answer(rng):
    A = sp.csr_matrix(spd(rng, 40))
    b = rng.standard_normal(40)
    x0 = solve(A, b, tolerance=1e-12).solution
    x1 = solve(A, b, tolerance=1e-12, x0=rng.standard_normal(40)).solution
    assert np.allclose(x0, x1, rtol=1e-9, atol=1e-11)
    # starting at the answer returns immediately
    assert solve(A, b, tolerance=1e-10, x0=x0).iterations == 0


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2 ** 32 - 1))
def test_scale_invariance(scale, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    A = sp.csr_matrix(spd(rng, 20))
    b = rng.standard_normal(20)
    x = solve(A, b, tolerance=1e-12).solution
    xs = solve(A * scale, b * scale, tolerance=1e-12).solution
    assert np.allclose(x, xs, rtol=1e-8, atol=1e-10)


def test_box_system_cg_vs_cholesky():
    mesh = perturb_interior_nodes(generate_structured_mesh(DimensionMode.CARTESIAN_3D, 8), 0.2, 7)
    for method in ("FEM", "ESFEM"):
        system = build_system(mesh, box_spec(), method)
        assert system.size <= 2000
        x_cg = solve(system).solution
        x_ch = solve(system, method="cholesky").solution
        assert np.linalg.norm(x_cg - x_ch) <= 1e-8 * np.linalg.norm(x_ch)


def test_deterministic_iterations():
    mesh = generate_structured_mesh(DimensionMode.CARTESIAN_3D, 6)
    system = build_system(mesh, box_spec(), "ESFEM")
    a, b = solve(system), solve(system)
    assert a.iterations == b.iterations
    assert np.array_equal(a.solution, b.solution)


def test_zero_rhs():
    rep = solve(sp.identity(5, format="csr"), np.zeros(5))
    assert rep.iterations == 0
    assert np.array_equal(rep.solution, np.zeros(5))


def test_indefinite_rejected():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(IndefiniteMatrixError):
        solve(A, np.array([1.0, 0.0]))
    with pytest.raises(IndefiniteMatrixError):
        solve(A, np.array([1.0, 0.0]), method="cholesky")
    with pytest.raises(IndefiniteMatrixError):
        solve(sp.diags([1.0, -1.0]).tocsr(), np.ones(2))


def test_iteration_cap(rng):
    A = sp.csr_matrix(spd(rng, 60, shift=1e-3))
    with pytest.raises(ConvergenceError) as info:
        conjugate_gradient(A, rng.standard_normal(60), tol=1e-14, max_iterations=3)
    assert len(info.value.history) == 4


@pytest.mark.parametrize("tol", [0.0, 1.0, -1e-3])
def test_bad_tolerance(tol):
    with pytest.raises(ValueError):
        solve(sp.identity(2, format="csr"), np.ones(2), tolerance=tol)


def test_dense_size_limit():
    with pytest.raises(SolverError):
        solve(sp.identity(2001, format="csr"), np.ones(2001), method="cholesky")
