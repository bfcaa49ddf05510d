"""Differential operators on functions, 1-forms and symmetric 2-tensors.

Sign conventions: ``Delta = -tr nabla^2 >= 0``, ``(div u)_i = -nabla^j u_ji``,
``d^* omega = -nabla^i omega_i``.  Second derivatives along a single axis use
the compact five-point stencil, so the discrete Laplacians have no spurious
odd-even kernel; mixed derivatives compose first differences.
"""

from __future__ import annotations

import numpy as np

from .curvature import (
    Background,
    christoffel,
    connection_term,
    covariant_derivative,
    riemann_ricci_scalar,
)
from .grid import (
    GridMismatchError,
    MetricField,
    OneFormField,
    ScalarField,
    SymTensorField,
    TensorField,
    gradient_array,
    perturbed_metric,
    second_partials_array,
    trace,
    tracefree_part,
)

__all__ = [
    "covariant_derivative", "second_covariant", "hessian", "tracefree_hessian", "killing",
    "exterior_derivative", "codifferential", "divergence", "divergence_and_bianchi",
    "bianchi_coefficient", "rough_laplacian", "ric_action", "riem_action", "lichnerowicz",
    "hodge_laplacian", "hodge_laplacian_dd", "gauge_term",
]


def _same_grid(g: MetricField, u: TensorField):
    if u.grid != g.grid:
        raise GridMismatchError("field and metric live on different grids")


def second_covariant(g: MetricField, u: TensorField) -> np.ndarray:
    """Array of ``(nabla^2 u)_{ab...}``, the two derivative indices first."""
    _same_grid(g, u)
    S = second_partials_array(u.values, g.grid, compact=True)
    if g.is_constant:
        return S
    n = g.n
    gam = christoffel(g).values
    C = connection_term(gam, u.values, u.signature, n)
    grad = gradient_array(u.values, g.grid) + C
    return S + gradient_array(C, g.grid) + connection_term(gam, grad, "l" + u.signature, n)


def hessian(g: MetricField, u: ScalarField) -> SymTensorField:
    return SymTensorField(g.grid, second_covariant(g, u))


def tracefree_hessian(g: MetricField, u: ScalarField) -> SymTensorField:
    return tracefree_part(g, hessian(g, u))


def killing(g: MetricField, omega: OneFormField) -> SymTensorField:
    """Symmetrized covariant derivative ``1/2 (nabla_i w_j + nabla_j w_i)``."""
    nw = covariant_derivative(g, omega).values
    return SymTensorField(g.grid, 0.5 * (nw + np.swapaxes(nw, -1, -2)))


def exterior_derivative(u: ScalarField) -> OneFormField:
    return OneFormField(u.grid, gradient_array(u.values, u.grid))


def codifferential(g: MetricField, omega: OneFormField) -> ScalarField:
    """``d^* omega = -g^ij nabla_i omega_j``."""
    nw = covariant_derivative(g, omega).values
    return ScalarField(g.grid, -np.einsum("...ij,...ij->...", g.inverse, nw))


def divergence(g: MetricField, u: SymTensorField) -> OneFormField:
    nu = covariant_derivative(g, u).values  # nu[l, j, i] = nabla_l u_ji
    return OneFormField(g.grid, -np.einsum("...jl,...lji->...i", g.inverse, nu))


def bianchi_coefficient(kappa: float, n: int) -> float:
    """Weight of ``d Tr`` in the kappa-adapted Bianchi operator."""
    if np.isclose(1 + kappa * n, 0.0, atol=1e-14):
        raise ValueError(f"kappa = -1/n = {kappa} makes the Bianchi coefficient singular")
    return (2 * kappa + 1) / (2 * (1 + kappa * n))


def divergence_and_bianchi(g: MetricField, u: SymTensorField, kappa: float = 0.0):
    """Return ``(div u, B_g u, B^kappa_g u)``.

    ``B_g u = div u + 1/2 d tr u`` and the kappa-variant weights ``d tr u`` by
    :func:`bianchi_coefficient`; the two coincide at ``kappa = 0``.
    """
    coef = bianchi_coefficient(kappa, g.n)
    div = divergence(g, u).values
    dtr = gradient_array(trace(g, u).values, g.grid)
    return (OneFormField(g.grid, div), OneFormField(g.grid, div + 0.5 * dtr),
            OneFormField(g.grid, div + coef * dtr))


def rough_laplacian(g: MetricField, u: TensorField) -> TensorField:
    """``nabla^* nabla u = -g^ab (nabla^2 u)_ab`` on any tensor bundle."""
    idx = "cdefgh"[:len(u.signature)]
    lap = -np.einsum(f"...ab,...ab{idx}->...{idx}", g.inverse, second_covariant(g, u))
    return u._new(lap) if not isinstance(u, MetricField) else SymTensorField(g.grid, lap)


def ric_action(g: MetricField, u: SymTensorField) -> SymTensorField:
    """``1/2 (Ric_ik u^k_j + Ric_jk u^k_i)``."""
    _, ric, _ = riemann_ricci_scalar(g)
    m = np.einsum("...ik,...kl,...lj->...ij", ric.values, g.inverse, u.values)
    return SymTensorField(g.grid, 0.5 * (m + np.swapaxes(m, -1, -2)))


def riem_action(g: MetricField, u: SymTensorField) -> SymTensorField:
    """``R_ikjl u^kl``."""
    riem, _, _ = riemann_ricci_scalar(g)
    up = np.einsum("...ka,...ab,...bl->...kl", g.inverse, u.values, g.inverse)
    return SymTensorField(g.grid, np.einsum("...ikjl,...kl->...ij", riem.values, up))


def lichnerowicz(g: MetricField, h: SymTensorField) -> SymTensorField:
    """``Delta_L h = Delta h + 2 (Ric - Riem) h``."""
    lap = rough_laplacian(g, h)
    if g.is_constant:
        return lap
    return SymTensorField(g.grid, lap.values + 2 * (ric_action(g, h).values - riem_action(g, h).values))


def hodge_laplacian(g: MetricField, omega: OneFormField) -> OneFormField:
    """Hodge Laplacian on 1-forms in Weitzenboeck form ``Delta + Ric``."""
    lap = rough_laplacian(g, omega)
    if g.is_constant:
        return lap
    _, ric, _ = riemann_ricci_scalar(g)
    r = np.einsum("...ij,...jk,...k->...i", ric.values, g.inverse, omega.values)
    return OneFormField(g.grid, lap.values + r)


def hodge_laplacian_dd(g: MetricField, omega: OneFormField) -> OneFormField:
    """``d d^* + d^* d`` composed from first-order operators (cross-check of the Weitzenboeck form)."""
    grid = g.grid
    dd_star = gradient_array(codifferential(g, omega).values, grid)
    dw = gradient_array(omega.values, grid)
    beta = dw - np.swapaxes(dw, -1, -2)  # (d omega)_kj = d_k w_j - d_j w_k
    nb = covariant_derivative(g, TensorField(grid, beta, "ll")).values  # nb[i, k, j]
    dstar_d = -np.einsum("...ik,...ikj->...j", g.inverse, nb)
    return OneFormField(grid, dd_star + dstar_d)


def gauge_term(bg: Background, h: SymTensorField, E: SymTensorField) -> SymTensorField:
    """DeTurck term: Killing operator of ``g`` applied to ``Ein_g^{-1} B^kappa_{g+h}(E)``."""
    G = perturbed_metric(bg.g, h)
    _, _, bb = divergence_and_bianchi(G, E, bg.kappa)
    w = OneFormField(bg.grid, bg.apply_ein_inverse(bb.values))
    return killing(bg.g, w)
