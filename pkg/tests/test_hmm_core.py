import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import poisson_unit_load
from hmmfluct.errors import AssemblyError, SolverError
from hmmfluct.functions import ClosedForm
from hmmfluct.hmm_core import (
    QuadratureSpec,
    assemble,
    conjugate_gradient,
    dense_matrix,
    element_hms_errors,
    field_moments,
    from_interior,
    h1_seminorm_sq,
    pointwise_moments,
    solve,
    stencil_apply,
    to_interior,
    verify_structure,
)
from hmmfluct.mesh import build_mesh
from hmmfluct.quadrature import patch_rule
from hmmfluct.randfield import LrcFieldSpec, SrcFieldSpec, mix_seed, sample_field, zero_field

Q0 = ClosedForm("1.5 + 0.5*x*y")
F = ClosedForm("sin(pi*x)*sin(pi*y)")


def test_laplacian_stencil():
    sys = assemble(build_mesh(6), None, ClosedForm("0"), 0.5)
    inner = (slice(1, -1), slice(1, -1))
    assert np.allclose(sys.diag[inner], 4.0)
    assert np.allclose(sys.alpha[0][2:-1, 1:-1], -1.0)
    assert np.allclose(sys.alpha[1][1:-1, 2:-1], -1.0)
    assert np.allclose(sys.alpha[2], 0.0, atol=1e-15)
    assert np.allclose(sys.d, 0.0)


@pytest.mark.parametrize("r", [1.0, 0.5, 0.25])
def test_constant_potential_zeroth_order_term(r):
    mesh = build_mesh(4)
    sys = assemble(mesh, None, ClosedForm("2"), r)
    assert np.allclose(sys.d[1:-1, 1:-1], 2.0 * mesh.h**2)


def test_full_patch_without_field_is_homogenized():
    mesh = build_mesh(5)
    a = assemble(mesh, zero_field(1 / 320), Q0, 1.0, eps=1 / 320)
    b = assemble(mesh, None, Q0, 1.0, QuadratureSpec(), eps=1 / 320)
    assert np.allclose(dense_matrix(a), dense_matrix(b), rtol=0, atol=1e-15)


@pytest.mark.parametrize("spec,eps", [(SrcFieldSpec(1.0), 2.0**-8), (LrcFieldSpec(alpha=1.0, resolution=0.25), 2.0**-7)])
def test_fast_moments_match_pointwise(spec, eps):
    mesh = build_mesh(4)
    rule = patch_rule(mesh, 0.5, QuadratureSpec().subdivisions(0.5 * mesh.h, eps))
    field = sample_field(spec, eps, 17)
    fast, fmin = field_moments(rule, field, fast=True)
    slow, smin = pointwise_moments(rule, field)
    assert np.allclose(fast, slow, rtol=0, atol=1e-12 * np.abs(slow).max())
    assert fmin <= smin  # the fast route reports a lower bound


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stencil_apply_matches_dense(seed):
    N = 6
    mesh = build_mesh(N)
    sys = assemble(mesh, sample_field(SrcFieldSpec(1.0), 1 / 96, seed), Q0, 0.5, eps=1 / 96)
    rng = np.random.default_rng(seed)
    V = from_interior(rng.normal(size=(N - 1) ** 2), N)
    assert np.allclose(to_interior(stencil_apply(sys, V)), dense_matrix(sys) @ to_interior(V))


def test_solver_matches_dense_solve():
    N = 8
    mesh = build_mesh(N)
    sys = assemble(mesh, sample_field(SrcFieldSpec(1.0), 1 / 128, 3), Q0, 0.5, f=F, eps=1 / 128)
    U, hist = solve(sys, tol=1e-12, return_history=True)
    direct = np.linalg.solve(dense_matrix(sys), to_interior(sys.F))
    assert np.allclose(to_interior(U), direct, rtol=1e-9, atol=1e-14)
    assert hist[-1] <= 1e-12 * hist[0]
    Uj = solve(sys, tol=1e-12, jacobi=True)
    assert np.allclose(Uj, U, atol=1e-12)
    assert np.all(U[0] == 0) and np.all(U[:, -1] == 0)


def test_solver_error_carries_history():
    A = np.diag(np.arange(1.0, 51.0))
    with pytest.raises(SolverError) as info:
        conjugate_gradient(lambda v: A @ v, np.ones(50), tol=1e-14, maxiter=3)
    assert len(info.value.history) >= 3


def test_poisson_series_oracle():
    errs = []
    for N in (8, 16, 32):
        U = solve(assemble(build_mesh(N), None, ClosedForm("0"), 1.0, f=ClosedForm("1")), tol=1e-12)
        errs.append(abs(U[N // 2, N // 2] - poisson_unit_load(0.5, 0.5)))
    assert errs[-1] < 1e-4
    assert errs[0] > errs[1] > errs[2]


def test_positivity_violation():
    mesh = build_mesh(4)
    field = sample_field(SrcFieldSpec(1.0), 1 / 64, 1)
    with pytest.raises(AssemblyError):
        assemble(mesh, field, ClosedForm("0.5"), 0.5, eps=1 / 64)


def test_structure_report_detects_corruption():
    mesh = build_mesh(6)
    sys = assemble(mesh, sample_field(SrcFieldSpec(1.0), 1 / 96, 4), Q0, 0.5, eps=1 / 96)
    rep = verify_structure(sys)
    assert rep["max_violation"] < 1e-12
    sys.alpha[0, 3, 2] *= 1.0 + 1e-6
    assert verify_structure(sys)["max_violation"] > 1e-9


def test_h1_seminorm_of_hat():
    N = 5
    V = np.zeros((N + 1, N + 1))
    V[2, 3] = 1.0
    assert np.isclose(h1_seminorm_sq(build_mesh(N), V), 4.0)


def test_hms_errors_vanish_without_field():
    mesh = build_mesh(4)
    rule = patch_rule(mesh, 0.5, 8)
    fm, _ = field_moments(rule, zero_field(1 / 64))
    assert np.all(element_hms_errors(mesh, 0.5, fm) == 0)
