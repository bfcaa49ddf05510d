import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eininv.curvature import Background
from eininv.grid import (
    GridSpec,
    OneFormField,
    ScalarField,
    SymTensorField,
    construct_metric,
    l2_inner,
    trace,
)
from eininv.operators import (
    bianchi_coefficient,
    divergence,
    divergence_and_bianchi,
    gauge_term,
    hessian,
    hodge_laplacian,
    hodge_laplacian_dd,
    killing,
    lichnerowicz,
    rough_laplacian,
    tracefree_hessian,
)


def flat(n=2, N=32, G0=None):
    grid = GridSpec.uniform(n, N)
    return construct_metric(grid, G0=G0), grid.coordinates()


def conformal(n, N, amp=0.1):
    grid = GridSpec.uniform(n, N)
    x = grid.coordinates()
    return construct_metric(grid, "conformal", f=ScalarField(grid, amp * np.sin(x[0]))), x


def smooth_field(grid, sig, seed):
    rng = np.random.default_rng(seed)
    x = grid.coordinates()
    n = grid.n
    shape = (n,) * len(sig)
    vals = np.zeros(grid.shape + shape)
    for idx in np.ndindex(*shape):
        c = rng.standard_normal(5)
        vals[(...,) + idx] = (c[0] + c[1] * np.sin(x[0] + c[2]) + c[3] * np.cos(2 * x[1] + c[4])
                              + 0.3 * c[2] * np.sin(x[0] - x[-1]))
    if sig == "ll":
        return SymTensorField(grid, vals)
    if sig == "l":
        return OneFormField(grid, vals)
    return ScalarField(grid, vals)


def test_killing_examples():
    g, x = flat()
    grid = g.grid
    w = OneFormField(grid, [1.0, 0.0])
    assert killing(g, w).max_abs() == 0
    w = OneFormField(grid, np.stack([np.sin(x[0]), 0 * x[0]], -1))
    L = killing(g, w).values
    assert np.array_equal(L, np.swapaxes(L, -1, -2))
    assert np.max(np.abs(L[..., 0, 0] - np.cos(x[0]))) <= 1e-4
    assert np.max(np.abs(L[..., 0, 1])) == 0 and np.max(np.abs(L[..., 1, 1])) == 0


def test_hessian_examples():
    g, x = conformal(3, 12)
    grid = g.grid
    assert hessian(g, ScalarField(grid, np.full(grid.shape, 2.0))).max_abs() == 0
    u = smooth_field(grid, "", 1)
    assert trace(g, tracefree_hessian(g, u)).max_abs() <= 1e-13 * max(1.0, hessian(g, u).max_abs())


def test_trace_of_hessian_is_minus_laplacian():
    g, _ = conformal(2, 16)
    u = smooth_field(g.grid, "", 2)
    assert np.allclose(trace(g, hessian(g, u)).values, -rough_laplacian(g, u).values, atol=1e-12, rtol=0)


def test_divergence_bianchi_constant_and_kappa_zero():
    g, _ = flat()
    c = SymTensorField(g.grid, [[1.0, 0.4], [0.4, -2.0]])
    for v in divergence_and_bianchi(g, c, 0.3):
        assert v.max_abs() == 0
    gc, _ = conformal(2, 16)
    u = smooth_field(gc.grid, "ll", 3)
    _, B, BB = divergence_and_bianchi(gc, u, 0.0)
    assert np.max(np.abs(B.values - BB.values)) <= 1e-15 * max(1.0, B.max_abs())


def test_bianchi_coefficient_singular():
    assert bianchi_coefficient(0.0, 3) == 0.5
    with pytest.raises(ValueError):
        bianchi_coefficient(-1 / 3, 3)
    g, _ = flat(3, 8)
    with pytest.raises(ValueError):
        divergence_and_bianchi(g, SymTensorField(g.grid, np.eye(3)), -1 / 3)


@pytest.mark.parametrize("kappa,Lambda", [(0.0, 1.0), (0.3, -0.5)])
def test_bianchi_of_ein_decays_order_four(kappa, Lambda):
    res = []
    for N in (32, 64):
        g, _ = conformal(2, N)
        bg = Background(g, kappa, Lambda)
        res.append(divergence_and_bianchi(g, bg.ein_g, kappa)[2].max_abs())
    assert 2 ** 3.5 <= res[0] / res[1] <= 2 ** 4.5


def test_laplacians_flat_examples():
    g, x = flat()
    grid = g.grid
    h = SymTensorField(grid, np.sin(x[0])[..., None, None] * np.eye(2))
    assert np.max(np.abs(lichnerowicz(g, h).values - h.values)) <= 1e-4
    c = SymTensorField(grid, [[1.0, 2.0], [2.0, 3.0]])
    assert lichnerowicz(g, c).max_abs() == 0
    w = OneFormField(grid, np.stack([np.sin(x[1]), 0 * x[0]], -1))
    assert np.max(np.abs(hodge_laplacian(g, w).values - w.values)) <= 1e-4


def test_flat_laplacians_are_componentwise_scalar_laplacian():
    g, _ = flat(3, 12)
    h = smooth_field(g.grid, "ll", 4)
    lap = lichnerowicz(g, h).values
    for i, j in np.ndindex(3, 3):
        u = ScalarField(g.grid, h.values[..., i, j])
        assert np.array_equal(lap[..., i, j], rough_laplacian(g, u).values)


def test_lichnerowicz_on_pure_trace_flat():
    g, _ = flat()
    u = smooth_field(g.grid, "", 5)
    ug = SymTensorField(g.grid, u.values[..., None, None] * g.values)
    expect = rough_laplacian(g, u).values[..., None, None] * g.values
    assert np.allclose(lichnerowicz(g, ug).values, expect, atol=1e-13, rtol=0)


@pytest.mark.parametrize("G0", [None, [[2.0, 0.5], [0.5, 1.0]]])
@pytest.mark.parametrize("seed", range(5))
def test_self_adjoint_and_positive_on_constant_metrics(G0, seed):
    g, _ = flat(2, 16, G0)
    grid = g.grid
    for sig, op in (("", rough_laplacian), ("l", hodge_laplacian), ("ll", lichnerowicz)):
        u, v = smooth_field(grid, sig, seed), smooth_field(grid, sig, seed + 100)
        a, b = l2_inner(g, op(g, u), v), l2_inner(g, u, op(g, v))
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))
        assert l2_inner(g, op(g, u), u) >= -1e-10 * l2_inner(g, u, u)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_killing_adjoint_to_divergence(seed):
    g, _ = flat(2, 16, [[1.5, 0.2], [0.2, 0.8]])
    w, u = smooth_field(g.grid, "l", seed), smooth_field(g.grid, "ll", seed + 1)
    a, b = l2_inner(g, killing(g, w), u), l2_inner(g, w, divergence(g, u))
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


def test_hodge_two_forms_agree_to_discretization_order():
    errs = []
    for N in (32, 64):
        g, x = conformal(2, N)
        w = OneFormField(g.grid, np.stack([np.sin(x[1]), np.cos(x[0])], -1))
        errs.append(np.max(np.abs(hodge_laplacian(g, w).values - hodge_laplacian_dd(g, w).values)))
    assert 2 ** 3.5 <= errs[0] / errs[1] <= 2 ** 4.5


def test_gauge_term_trivial_cases():
    g, _ = flat()
    bg = Background(g, 0.0, 1.0)
    zero = SymTensorField(g.grid, np.zeros(g.grid.shape + (2, 2)))
    assert gauge_term(bg, zero, SymTensorField(g.grid, g.values)).max_abs() == 0
    h = SymTensorField(g.grid, 1e-3 * g.values)
    assert gauge_term(bg, h, SymTensorField(g.grid, [[1.0, 0.2], [0.2, 3.0]])).max_abs() == 0


def test_gauge_term_degenerate_ein():
    g, _ = flat()
    bg = Background(g, 0.0, 0.0)
    zero = SymTensorField(g.grid, np.zeros(g.grid.shape + (2, 2)))
    with pytest.raises(ValueError):
        gauge_term(bg, zero, zero)


@pytest.mark.parametrize("kappa", [0.0, 0.2])
def test_gauge_term_closed_form(kappa):
    # n=3, Ein(g) = g, E = sin(x1) g: BB(E) = (3 c - 1) cos(x1) dx1, so L(BB E)_11 = -(3c - 1) sin(x1)
    errs = []
    for N in (16, 32):
        g, x = flat(3, N)
        bg = Background(g, kappa, 1.0)
        c = bianchi_coefficient(kappa, 3)
        zero = SymTensorField(g.grid, np.zeros(g.grid.shape + (3, 3)))
        E = SymTensorField(g.grid, np.sin(x[0])[..., None, None] * g.values)
        G = gauge_term(bg, zero, E).values
        exact = np.zeros_like(G)
        exact[..., 0, 0] = -(3 * c - 1) * np.sin(x[0])
        errs.append(np.max(np.abs(G - exact)))
    assert errs[1] <= 1e-4
    assert 2 ** 3.5 <= errs[0] / errs[1] <= 2 ** 4.5
