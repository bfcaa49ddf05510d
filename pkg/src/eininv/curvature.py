"""Curvature of metrics on periodic grids.

Conventions (fixed here and nowhere else):

* Riemann is fully covariant with ``R_ijkl = g_ip R^p_jkl`` where
  ``R^p_jkl = d_k G^p_lj - d_l G^p_kj + G^p_kq G^q_lj - G^p_lq G^q_kj``.
  On the unit round sphere ``R_ijkl = g_ik g_jl - g_il g_jk``.
* ``Ric_jl = g^ik R_ijkl``, so the curvature action on symmetric tensors
  ``(Riem u)_ij = R_ikjl u^kl`` sends ``g`` to ``Ric``.
* Riemann is evaluated from the second-derivative formula, which makes all
  its algebraic symmetries hold to rounding even on the discrete grid.
"""

from __future__ import annotations

import numpy as np

from .grid import (
    DegenerateMetricError,
    FourTensorField,
    GridMismatchError,
    MetricField,
    ScalarField,
    SymTensorField,
    Tensor12Field,
    Tensor13Field,
    TensorField,
    gradient_array,
    kulkarni_nomizu,
    perturbed_metric,
    second_partials_array,
)

RICCI_PARALLEL_TOL = 1e-10
NONDEG_TOL = 1e-10


def christoffel_lower(g: MetricField) -> np.ndarray:
    """``G_{s,ij} = 1/2 (d_i g_sj + d_j g_is - d_s g_ij)`` with axes ``(s, i, j)``."""
    cached = g._cache.get("christoffel_lower")
    if cached is not None:
        return cached
    n = g.n
    dg = gradient_array(g.values, g.grid)  # dg[a, i, j] = d_a g_ij
    ax = tuple(range(n))
    # dg[i,s,j] -> (s,i,j) ; dg[j,i,s] -> (s,i,j) ; dg[s,i,j]
    t1 = np.transpose(dg, ax + (n + 1, n, n + 2))
    t2 = np.transpose(dg, ax + (n + 2, n + 1, n))
    out = 0.5 * (t1 + t2 - dg)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    out.flags.writeable = False
    g._cache["christoffel_lower"] = out
    return out


def christoffel(g: MetricField) -> Tensor12Field:
    """Levi-Civita symbols ``G^k_ij`` (exactly symmetric in ``i, j``)."""
    cached = g._cache.get("christoffel")
    if cached is None:
        gl = christoffel_lower(g)
        up = np.einsum("...ks,...sij->...kij", g.inverse, gl)
        cached = Tensor12Field(g.grid, 0.5 * (up + np.swapaxes(up, -1, -2)))
        g._cache["christoffel"] = cached
    return cached


def connection_term(gamma: np.ndarray, values: np.ndarray, signature: str, n: int) -> np.ndarray:
    """Zeroth-order part of ``nabla``: ``(nabla A - dA)_{d ...}``.

    The new derivative index is placed first among the component axes.
    """
    rank = len(signature)
    grid_shape = values.shape[:n]
    if rank == 0:
        return np.zeros(grid_shape + (n,))
    out = np.zeros(grid_shape + (n,) * (rank + 1))
    for s, kind in enumerate(signature):
        moved = np.moveaxis(values, n + s, -1)
        others = moved.shape[n:-1]
        flat = moved.reshape(grid_shape + (-1, n))
        if kind == "l":
            t = -np.einsum("...pda,...mp->...dma", gamma, flat)
        else:
            t = np.einsum("...adp,...mp->...dma", gamma, flat)
        t = t.reshape(grid_shape + (n,) + others + (n,))
        out += np.moveaxis(t, -1, n + 1 + s)
    return out


def covariant_derivative(g: MetricField, u: TensorField) -> TensorField:
    """``nabla u`` of the Levi-Civita connection of ``g``; derivative index first."""
    if u.grid != g.grid:
        raise GridMismatchError("field and metric live on different grids")
    grad = gradient_array(u.values, g.grid)
    if not g.is_constant:
        grad = grad + connection_term(christoffel(g).values, u.values, u.signature, g.n)
    return TensorField(g.grid, grad, "l" + u.signature)


def riemann_ricci_scalar(g: MetricField):
    """Return ``(Riem, Ric, R)`` for the metric ``g``."""
    cached = g._cache.get("curvature")
    if cached is not None:
        return cached
    n = g.n
    grid = g.grid
    if g.is_constant:
        riem = FourTensorField(grid, np.zeros(grid.shape + (n,) * 4))
        ric = SymTensorField(grid, np.zeros(grid.shape + (n, n)))
        R = ScalarField(grid, np.zeros(grid.shape))
        g._cache["curvature"] = (riem, ric, R)
        return riem, ric, R
    # dd[a, b, i, j] = d_a d_b g_ij, composed first differences (exactly symmetric in a, b)
    dd = second_partials_array(g.values, grid, compact=False)
    # 1/2 (d_j d_k g_il + d_i d_l g_jk - d_i d_k g_jl - d_j d_l g_ik)
    sec = 0.5 * (np.einsum("...jkil->...ijkl", dd) + np.einsum("...iljk->...ijkl", dd)
                 - np.einsum("...ikjl->...ijkl", dd) - np.einsum("...jlik->...ijkl", dd))
    gl = christoffel_lower(g)
    q = np.einsum("...pjk,...pr,...ril->...jkil", gl, g.inverse, gl, optimize=True)  # Q(jk, il)
    quad = np.einsum("...jkil->...ijkl", q) - np.einsum("...jlik->...ijkl", q)
    riem_v = sec + quad
    ric_v = np.einsum("...ik,...ijkl->...jl", g.inverse, riem_v)
    ric = SymTensorField(grid, ric_v)
    R = ScalarField(grid, np.einsum("...jl,...jl->...", g.inverse, ric.values))
    riem = FourTensorField(grid, riem_v)
    g._cache["curvature"] = (riem, ric, R)
    return riem, ric, R


def ein_tensor(g: MetricField, kappa: float, Lambda: float) -> SymTensorField:
    """``Ric(g) + kappa R(g) g + Lambda g``."""
    _, ric, R = riemann_ricci_scalar(g)
    return SymTensorField(g.grid, ric.values + (kappa * R.values[..., None, None] + Lambda) * g.values)


def kappa_is_singular(kappa: float, n: int) -> bool:
    return bool(np.isclose(1 + kappa * n, 0.0, atol=1e-14)
                or np.isclose(1 + 2 * (n - 1) * kappa, 0.0, atol=1e-14))


class Background:
    """Reference metric with the constants of the curvature operator.

    Validity is *recorded* in :attr:`flags` rather than enforced, so that
    curvature identities can be exercised on non-parallel metrics; the
    spectral report and the Newton solver read the flags.  Only the
    coefficient singularities ``kappa = -1/n`` and ``kappa = -1/(2(n-1))``
    are rejected outright.
    """

    def __init__(self, g: MetricField, kappa: float = 0.0, Lambda: float = 0.0,
                 ricci_parallel_tol: float = RICCI_PARALLEL_TOL, nondeg_tol: float = NONDEG_TOL):
        n = g.n
        if kappa_is_singular(kappa, n):
            raise ValueError(f"kappa={kappa} is excluded for n={n} (kappa != -1/n, -1/(2(n-1)))")
        self.g = g
        self.n = n
        self.grid = g.grid
        self.kappa = float(kappa)
        self.Lambda = float(Lambda)
        self.christoffels = christoffel(g)
        self.riem, self.ric, self.R = riemann_ricci_scalar(g)
        self.ein_g = ein_tensor(g, self.kappa, self.Lambda)
        self.tau = float(np.mean(self.R.values)) / n

        scale = max(1.0, self.ric.max_abs())
        self.ricci_gradient = covariant_derivative(g, self.ric).max_abs()
        self.einstein_defect = float(np.max(np.abs(self.ric.values - self.tau * g.values)))
        ricci_parallel = self.ricci_gradient <= ricci_parallel_tol * scale
        einstein = self.einstein_defect <= ricci_parallel_tol * scale and ricci_parallel

        endo = np.einsum("...ik,...kj->...ij", self.ein_g.values, g.inverse)
        eig = np.linalg.eigvals(endo)
        self.nondeg_margin = float(np.min(np.abs(eig)))
        ein_scale = max(float(np.max(np.abs(eig))), 1.0)
        nondegenerate = self.nondeg_margin > nondeg_tol * ein_scale
        self.ein_endo_inverse = np.linalg.inv(endo) if nondegenerate else None

        # Ein(g) = mu g exactly (flat or Einstein backgrounds): inverse is a division
        self.ein_scalar = None
        if nondegenerate:
            mu = float(np.mean(np.einsum("...ij,...ij->...", g.inverse, self.ein_g.values))) / n
            if np.max(np.abs(self.ein_g.values - mu * g.values)) <= 1e-14 * ein_scale:
                self.ein_scalar = mu

        self.flags = {
            "ricci_parallel": bool(ricci_parallel),
            "einstein": bool(einstein),
            "nondegenerate": bool(nondegenerate),
            "structure": bool(ricci_parallel if self.kappa == 0 else einstein),
        }

    def apply_ein_inverse(self, omega: np.ndarray) -> np.ndarray:
        """Pointwise ``Ein_g^{-1}`` on 1-form components ``(..., n)``."""
        if self.ein_endo_inverse is None:
            raise ValueError(f"Ein(g) is degenerate (margin {self.nondeg_margin:.3g})")
        if self.ein_scalar is not None:
            return omega / self.ein_scalar
        return np.einsum("...ij,...j->...i", self.ein_endo_inverse, omega)


def ein(bg: Background, g_eval: MetricField) -> SymTensorField:
    """``Ein`` of ``g_eval`` with the constants of ``bg``."""
    if g_eval.grid != bg.grid:
        raise GridMismatchError("metric is not on the background grid")
    return ein_tensor(g_eval, bg.kappa, bg.Lambda)


def deturck_tensor(g: MetricField, h: SymTensorField) -> Tensor12Field:
    """Difference of connections ``T^k_ij`` between ``g + h`` and ``g``.

    Raises :class:`DegenerateMetricError` when ``g + h`` is not SPD.
    """
    G = perturbed_metric(g, h)
    nh = covariant_derivative(g, h).values  # nh[a, i, j] = nabla_a h_ij
    n = g.n
    ax = tuple(range(n))
    # nabla_i h_sj + nabla_j h_is - nabla_s h_ij, axes (s, i, j)
    t1 = np.transpose(nh, ax + (n + 1, n, n + 2))
    t2 = np.transpose(nh, ax + (n + 2, n + 1, n))
    low = t1 + t2 - nh
    T = 0.5 * np.einsum("...ks,...sij->...kij", G.inverse, low)
    return Tensor12Field(g.grid, 0.5 * (T + np.swapaxes(T, -1, -2)))


def ricci_increment(g: MetricField, h: SymTensorField) -> SymTensorField:
    """``Ric(g+h) - Ric(g)`` through the connection-difference tensor."""
    T = deturck_tensor(g, h)
    nT = covariant_derivative(g, T).values  # nT[m, l, j, k] = nabla_m T^l_jk
    t = T.values
    div_part = np.einsum("...lljk->...jk", nT)
    grad_part = np.einsum("...kljl->...jk", nT)
    quad = (np.einsum("...pjk,...lpl->...jk", t, t)
            - np.einsum("...pjl,...lpk->...jk", t, t))
    return SymTensorField(g.grid, div_part - grad_part + quad)


# ---------------------------------------------------------------------------
# Kulkarni-Nomizu curvature tensor


def kn_constants(n: int, kappa: float, Lambda: float, a: float) -> tuple[float, float]:
    """Coefficients ``(b, c)`` making ``Tr_g`` of the four-tensor proportional to ``Ein``."""
    if n >= 3 and np.isclose(a, -1.0 / (n - 2), rtol=0, atol=1e-14):
        raise ValueError(f"a = -1/(n-2) = {a} is forbidden")
    f = 1 + (n - 2) * a
    b = (kappa * f - a) / (2 * (n - 1))
    c = f * Lambda / (2 * (n - 1))
    return b, c


def kn_ein(bg: Background, a: float):
    """Curvature-type four-tensor ``Riem + g o (a Ric + b R g + c g)``.

    Returns ``(E4, b, c)``; its ``g``-trace equals ``(1 + (n-2) a) Ein(g)``.
    """
    b, c = kn_constants(bg.n, bg.kappa, bg.Lambda, a)
    g = bg.g
    w = SymTensorField(bg.grid, a * bg.ric.values + (b * bg.R.values[..., None, None] + c) * g.values)
    E4 = FourTensorField(bg.grid, bg.riem.values + kulkarni_nomizu(g, w).values)
    return E4, b, c


def kn_trace(g: MetricField, E4: FourTensorField) -> SymTensorField:
    """``g^ik E_ijkl``."""
    return SymTensorField(g.grid, np.einsum("...ik,...ijkl->...jl", g.inverse, E4.values))


def riemann_christoffel(bg: Background, a: float) -> Tensor13Field:
    """Raise the first index of :func:`kn_ein`."""
    E4, _, _ = kn_ein(bg, a)
    return Tensor13Field(bg.grid, np.einsum("...ij,...jklm->...iklm", bg.g.inverse, E4.values))


def curvature_symmetry_defects(T: FourTensorField) -> dict[str, float]:
    """Max pointwise violation of each curvature-type symmetry."""
    v = T.values
    return {
        "antisym_12": float(np.max(np.abs(v + np.einsum("...jikl->...ijkl", v)))),
        "antisym_34": float(np.max(np.abs(v + np.einsum("...ijlk->...ijkl", v)))),
        "pair": float(np.max(np.abs(v - np.einsum("...klij->...ijkl", v)))),
        "bianchi": float(np.max(np.abs(v + np.einsum("...iljk->...ijkl", v)
                                       + np.einsum("...iklj->...ijkl", v)))),
    }


def r13_defects(tau: Tensor13Field) -> dict[str, float]:
    """Violations of ``t^i_ilm = 0``, ``t^i_klm = -t^i_kml`` and the cyclic identity."""
    v = tau.values
    return {
        "trace": float(np.max(np.abs(np.einsum("...iilm->...lm", v)))),
        "antisym": float(np.max(np.abs(v + np.einsum("...ikml->...iklm", v)))),
        "cyclic": float(np.max(np.abs(v + np.einsum("...imkl->...iklm", v)
                                      + np.einsum("...ilmk->...iklm", v)))),
    }


def check_degenerate(g: MetricField, h: SymTensorField) -> None:
    """Raise if ``g + h`` is not positive definite."""
    perturbed_metric(g, h)


__all__ = [
    "Background", "DegenerateMetricError", "christoffel", "christoffel_lower", "connection_term",
    "covariant_derivative", "riemann_ricci_scalar", "ein", "ein_tensor", "deturck_tensor",
    "ricci_increment", "kn_constants", "kn_ein", "kn_trace", "riemann_christoffel",
    "curvature_symmetry_defects", "r13_defects",
]
