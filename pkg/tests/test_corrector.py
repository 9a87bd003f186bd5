import numpy as np
import pytest

from hmmfluct.config import ExperimentConfig
from hmmfluct.corrector import (
    build_reference,
    corrector_pairing,
    intermediate_variance,
    limit_variance,
    pairing_weights,
)
from hmmfluct.experiment import build_context, evaluate_sample
from hmmfluct.functions import ClosedForm
from hmmfluct.hmm_core import assemble, solve
from hmmfluct.quadrature import patch_rule
from hmmfluct.randfield import SrcFieldSpec, ZeroFieldSpec, mix_seed, sample_field

CFG = ExperimentConfig(N=4, eps=2.0**-7, ratios=(1.0, 0.5))


@pytest.fixture(scope="module", params=[1.0, 0.5])
def ctx(request):
    return build_context(CFG, request.param)


def test_sample_value_matches_full_solve(ctx):
    field = sample_field(CFG.field_spec(), CFG.eps, mix_seed(1, 0))
    value, linear, resid = evaluate_sample(ctx, field)
    q0, f, phi = CFG.functions()
    U_eps = solve(assemble(ctx.mesh, field, q0, ctx.ratio, CFG.quadrature(), f, eps=CFG.eps), tol=1e-13)
    direct = corrector_pairing(U_eps, ctx.U0, phi, ctx.mesh, CFG.eps, ctx.beta)
    assert np.isclose(value, direct, rtol=1e-6)
    assert np.isclose(resid, value - linear)


def test_linear_part_is_field_against_kernel(ctx):
    """Two routes: the stencil form and direct quadrature of q_eps * L on the patches."""
    field = sample_field(CFG.field_spec(), CFG.eps, mix_seed(1, 5))
    _, linear, _ = evaluate_sample(ctx, field)
    rule = ctx.base.rule
    direct = ctx.kernel.integrate_against(field, rule) * CFG.eps ** (-ctx.beta / 2)
    assert np.isclose(linear, direct, rtol=1e-10)


def test_residual_is_second_order_in_amplitude(ctx):
    seed = mix_seed(2, 0)
    out = []
    for a in (0.4, 0.2):
        spec = SrcFieldSpec(a)
        out.append(evaluate_sample(ctx, sample_field(spec, CFG.eps, seed)))
    assert np.isclose(out[0][1], 2 * out[1][1], rtol=1e-10)
    assert 3.0 < out[0][2] / out[1][2] < 5.0


def test_kernel_splitting(ctx):
    k = ctx.kernel
    pts = patch_rule(ctx.mesh, ctx.ratio, 7).physical_points(0).reshape(-1, 2)
    assert np.allclose(k.evaluate_L1(pts) + k.evaluate_L2(pts), k(pts), atol=1e-18)
    assert np.allclose(k.evaluate_L1(pts), k.evaluate_L1_from_edges(pts), atol=1e-15)


def test_kernel_vanishes_off_patches():
    c = build_context(CFG, 0.5)
    h = c.mesh.h
    corners = np.array([[h * 1.01, h * 1.005], [2 * h - 1e-3, 2 * h - 1e-4]])
    assert np.all(c.kernel(corners) == 0)


def test_kernel_norm_against_fine_centroid_rule(ctx):
    rule = patch_rule(ctx.mesh, ctx.ratio, 64)
    total = 0.0
    for o in (0, 1):
        vals = ctx.kernel(rule.physical_points(o).reshape(-1, 2))
        total += rule.weight * np.sum(vals**2)
    assert np.isclose(ctx.kernel.l2_norm_sq(), total, rtol=1e-3)


def test_pairing_weights_integrate_phi():
    c = build_context(CFG, 1.0)
    w = pairing_weights(c.mesh, ClosedForm("1"))
    assert np.allclose(w[1:-1, 1:-1], c.mesh.h**2)
    assert np.all(w[0] == 0) and np.all(w[:, -1] == 0)


def test_predicted_variances_scale():
    ref = build_reference(ClosedForm("1.5 + 0.5*x*y"), ClosedForm("sin(pi*x)*sin(pi*y)"), ClosedForm("1"), N_ref=16)
    spec = SrcFieldSpec(0.5)
    assert np.isclose(limit_variance(ref, spec, 0.5), 4 * limit_variance(ref, spec, 1.0))
    assert np.isclose(limit_variance(ref, spec, 1.0), 0.25 * ref.product_l2_sq)
    assert limit_variance(ref, ZeroFieldSpec(), 1.0) == 0.0
    c = build_context(CFG, 1.0)
    assert intermediate_variance(c.kernel, ZeroFieldSpec()) == 0.0
    assert np.isclose(intermediate_variance(c.kernel, spec), 0.25 * c.kernel.l2_norm_sq())


def test_doubling_quadrature_density_changes_little():
    from hmmfluct.experiment import run_coupled

    cfg = ExperimentConfig(N=4, eps=2.0**-8, samples=40, seed=1)
    a = np.array([s.value for s in run_coupled(cfg, (1.0,))[0]])
    b = np.array([s.value for s in run_coupled(cfg.with_overrides(n_q=8), (1.0,))[0]])
    assert np.abs(a - b).max() < 0.01 * a.std()
