"""Scaled corrector functionals, their linear kernel, and predicted variances.

For a field sample the pairing

    value = eps^(-beta/2) * sum_ij (U_eps - U_0)_ij <phi, phi_ij>

splits into a part linear in the field, ``eps^(-beta/2) * int q_eps L``, and a
residual.  On each patch the kernel is ``L = -r^-2 m_h u_h`` with ``m_h`` the
discrete Green function applied to phi and ``u_h`` the homogenized solution.
It is the sum of an interpolation-defect part ``L1 = r^-2 (Pi(m u) - m u)``
and ``L2 = -r^-2 Pi(m u)``, both restricted to the patches.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .hls import hls_integral, hls_with_refinement
from .hmm_core import (
    QuadratureSpec,
    assemble_from_moments,
    load_vector,
    prepare_potential,
    assemble_homogenized,
    solve,
)
from .mesh import build_mesh, d_minus
from .quadrature import DUNAVANT6_BARY, DUNAVANT6_WEIGHTS
from .randfield import analytic_kappa, analytic_sigma2


def default_beta(spec):
    return spec.alpha if spec.kind == "lrc" else 2.0


def pairing_weights(mesh, phi):
    """<phi, phi_ij> for all nodes, zero on the boundary."""
    out = load_vector(mesh, phi)
    out[0, :] = out[-1, :] = out[:, 0] = out[:, -1] = 0.0
    return out


def corrector_pairing(U_eps, U_0, phi, mesh, eps, beta):
    """eps^(-beta/2) <phi, u_eps - u_0> using the exact pairing with hat functions.

    ``phi`` is either a callable or precomputed pairing weights.
    """
    weights = phi if isinstance(phi, np.ndarray) else pairing_weights(mesh, phi)
    return float(np.sum((np.asarray(U_eps) - np.asarray(U_0)) * weights)) * eps ** (-beta / 2.0)


def solve_discrete_green_rhs(sys0, phi, tol=1e-10):
    """M with A0 M = (<phi, phi_kl>), i.e. the discrete Green operator applied to phi."""
    weights = phi if isinstance(phi, np.ndarray) else pairing_weights(sys0.mesh, phi)
    return solve(sys0, rhs=weights, tol=tol)


def potential_stencil(mesh, r, field_mom):
    """Edge and zeroth-order arrays of the field part alone (gradient part removed)."""
    zero_stiff = np.zeros((mesh.n_elements, 3, 3))
    sys = assemble_from_moments(mesh, r, field_mom, np.zeros((mesh.N + 1, mesh.N + 1)), "random",
                                stiffness=zero_stiff)
    return sys.alpha, sys.d


def stencil_difference(sys_eps, sys0):
    return sys_eps.alpha - sys0.alpha, sys_eps.d - sys0.d


def linear_representation(alpha_eps, d_eps, M, U_0, eps, beta):
    """eps^(-beta/2) [sum_s sum_kl D-M alpha D-U0 - sum_kl M d U0].

    The edge sum runs over every edge, including edges with one boundary end.
    """
    total = 0.0
    for s in (1, 2, 3):
        total += np.sum(d_minus(M, s) * alpha_eps[s - 1] * d_minus(U_0, s))
    total -= np.sum(M * d_eps * U_0)
    return float(total) * eps ** (-beta / 2.0)


@dataclass
class KernelL:
    mesh: object
    ratio: float
    M: np.ndarray
    U0: np.ndarray

    def _local(self, points):
        elem, lam = self.mesh.locate(points)
        verts = self.mesh.elements[elem]
        Mv = self.M.ravel()[verts]
        Uv = self.U0.ravel()[verts]
        inside = lam.min(axis=-1) >= (1.0 - self.ratio) / 3.0 - 1e-12
        return lam, Mv, Uv, inside

    def evaluate_L1(self, points):
        lam, Mv, Uv, inside = self._local(points)
        interp = np.sum(lam * Mv * Uv, axis=-1)
        prod = np.sum(lam * Mv, axis=-1) * np.sum(lam * Uv, axis=-1)
        return np.where(inside, (interp - prod) / self.ratio**2, 0.0)

    def evaluate_L2(self, points):
        lam, Mv, Uv, inside = self._local(points)
        return np.where(inside, -np.sum(lam * Mv * Uv, axis=-1) / self.ratio**2, 0.0)

    def evaluate_L1_from_edges(self, points):
        """L1 through the edge form sum_s (D-M)(D-U) phi_m phi_n on each patch."""
        lam, Mv, Uv, inside = self._local(points)
        total = np.zeros(lam.shape[:-1])
        for m, n in ((0, 1), (0, 2), (1, 2)):
            total += (Mv[..., m] - Mv[..., n]) * (Uv[..., m] - Uv[..., n]) * lam[..., m] * lam[..., n]
        return np.where(inside, total / self.ratio**2, 0.0)

    def __call__(self, points):
        lam, Mv, Uv, inside = self._local(points)
        prod = np.sum(lam * Mv, axis=-1) * np.sum(lam * Uv, axis=-1)
        return np.where(inside, -prod / self.ratio**2, 0.0)

    def patch_rule_values(self, bary_patch):
        """L at patch points given in patch barycentric coordinates, shape (E, P)."""
        lam = (1.0 - self.ratio) / 3.0 + self.ratio * bary_patch
        Mv = self.M.ravel()[self.mesh.elements]
        Uv = self.U0.ravel()[self.mesh.elements]
        return -(Mv @ lam.T) * (Uv @ lam.T) / self.ratio**2

    def l2_norm_sq(self, bary=DUNAVANT6_BARY, weights=DUNAVANT6_WEIGHTS):
        """Integral of L^2; the default degree-4 rule is exact for it."""
        vals = self.patch_rule_values(bary)
        patch_area = self.ratio**2 * self.mesh.element_area
        return float(patch_area * np.sum(vals**2 @ weights))

    def sup_L1(self, n=12):
        from .quadrature import centroid_subdivision

        bary = np.vstack([np.eye(3), centroid_subdivision(n)])
        lam = (1.0 - self.ratio) / 3.0 + self.ratio * bary
        Mv = self.M.ravel()[self.mesh.elements]
        Uv = self.U0.ravel()[self.mesh.elements]
        interp = (Mv * Uv) @ lam.T
        prod = (Mv @ lam.T) * (Uv @ lam.T)
        return float(np.abs(interp - prod).max() / self.ratio**2)

    def integrate_against(self, realization, rule):
        """int q_eps L by direct point evaluation on a patch rule."""
        total = 0.0
        for o in (0, 1):
            pts = rule.physical_points(o)
            total += float(np.sum(realization(pts) * self(pts))) * rule.weight
        return total

    def averaging_grid(self, target=32):
        """Grid cells per element edge, and whether patch edges fall on grid lines."""
        fr = Fraction(self.ratio).limit_denominator(64)
        if abs(float(fr) - self.ratio) > 1e-12:
            return target, False
        # patch edges sit at (1-r)h/3 and (2+r)h/3 from the cell corner
        base = math.lcm(Fraction(1 - fr, 3).denominator, Fraction(2 + fr, 3).denominator)
        return base * math.ceil(target / base), True

    def hls(self, alpha, target=32, refine=False):
        """Double integral of L(x) L(y) |x - y|^-alpha; with ``refine`` also the 2x-grid change."""
        c, aligned = self.averaging_grid(target)
        n = self.mesh.N * c
        sub = None if aligned else 8
        if refine:
            return hls_with_refinement(self, alpha, n, sub)
        return hls_integral(self, alpha, n, sub)


def build_kernel(mesh, r, M, U_0):
    return KernelL(mesh, float(r), np.asarray(M), np.asarray(U_0))


def intermediate_variance(kernel, spec, target=32):
    """Predicted variance of the scaled pairing for fixed mesh and patch ratio."""
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "src":
        return analytic_sigma2(spec) * kernel.l2_norm_sq()
    return analytic_kappa(spec) * kernel.hls(spec.alpha, target)


@dataclass
class ReferenceSolution:
    mesh: object
    u0: np.ndarray
    green_phi: np.ndarray
    product_l2_sq: float
    _hls_cache: dict = field(default_factory=dict, repr=False)

    def product(self, points):
        elem, lam = self.mesh.locate(points)
        verts = self.mesh.elements[elem]
        return np.sum(lam * self.u0.ravel()[verts], axis=-1) * np.sum(lam * self.green_phi.ravel()[verts], axis=-1)

    def hls(self, alpha, n=None, refine=False):
        """Double integral of the product; with ``refine`` also the 2x-grid change.

        The default grid is the reference mesh itself, on which cell averages
        of the piecewise-quadratic product are exact.
        """
        n = self.mesh.N if n is None else n
        key = (float(alpha), n, refine)
        if key not in self._hls_cache:
            if refine:
                self._hls_cache[key] = hls_with_refinement(self.product, alpha, n)
            else:
                self._hls_cache[key] = hls_integral(self.product, alpha, n)
        return self._hls_cache[key]


def build_reference(q0, f, phi, N_ref=128, quad=QuadratureSpec(), tol=1e-10):
    """Fine-mesh homogenized solution and Green function applied to phi (full elements)."""
    mesh = build_mesh(N_ref)
    base = prepare_potential(mesh, q0, 1.0, quad.min_subdivisions)
    sys0 = assemble_homogenized(base, load_vector(mesh, f))
    u0 = solve(sys0, tol=tol)
    m = solve_discrete_green_rhs(sys0, phi, tol=tol)
    kernel = build_kernel(mesh, 1.0, m, u0)
    return ReferenceSolution(mesh, u0, m, kernel.l2_norm_sq())


def limit_variance(reference, spec, r):
    """Continuum variance of the scaled pairing for patch ratio r."""
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "src":
        return analytic_sigma2(spec) * reference.product_l2_sq / (r * r)
    return analytic_kappa(spec) * reference.hls(spec.alpha)

