import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eininv.grid import (
    DegenerateMetricError,
    GridMismatchError,
    GridSpec,
    MetricError,
    OneFormField,
    RankMismatchError,
    ScalarField,
    SymTensorField,
    construct_metric,
    d1,
    d2,
    export_csv,
    kulkarni_nomizu,
    l2_inner,
    l2_norm,
    load_field,
    partial_derivative,
    perturbed_metric,
    pointwise_inner,
    save_field,
    sup_norm,
    trace_and_split,
)
from eininv.curvature import curvature_symmetry_defects


def _grid(n=2, N=16, L=2 * np.pi):
    return GridSpec.uniform(n, N, L)


def test_gridspec_spacing_and_shape():
    grid = GridSpec(2, (16, 32), (2 * np.pi, 1.0))
    assert grid.shape == (16, 32)
    assert grid.spacing == (2 * np.pi / 16, 1.0 / 32)
    assert grid.size == 512


@pytest.mark.parametrize("kw", [dict(n=4, points_per_axis=16, periods=1.0),
                                dict(n=2, points_per_axis=6, periods=1.0),
                                dict(n=2, points_per_axis=16, periods=0.0),
                                dict(n=3, points_per_axis=64, periods=1.0, point_budget=1000)])
def test_gridspec_rejects_invalid(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def test_fields_are_immutable_and_finite():
    grid = _grid()
    u = ScalarField(grid, np.ones(grid.shape))
    with pytest.raises(ValueError):
        u.values[0, 0] = 2.0
    with pytest.raises(ValueError):
        ScalarField(grid, np.full(grid.shape, np.nan))
    with pytest.raises(RankMismatchError):
        OneFormField(grid, np.ones(grid.shape + (3,)))


def test_symmetric_storage_by_construction():
    grid = _grid()
    a = np.random.default_rng(1).standard_normal(grid.shape + (2, 2))
    h = SymTensorField(grid, a)
    assert np.array_equal(h.values, np.swapaxes(h.values, -1, -2))


def test_construct_flat_identity():
    g = construct_metric(_grid())
    assert np.array_equal(g.values, np.broadcast_to(np.eye(2), g.values.shape))


def test_construct_flat_diag_det():
    g = construct_metric(_grid(), G0=np.diag([4.0, 1.0]))
    assert np.allclose(g.sqrt_det ** 2, 4.0, rtol=0, atol=1e-14)


def test_construct_conformal_unrolled():
    grid = _grid()
    x = grid.coordinates()
    g = construct_metric(grid, "conformal", f=ScalarField(grid, 0.1 * np.sin(x[0])))
    assert np.allclose(g.values[..., 0, 0], np.exp(0.2 * np.sin(x[0])), rtol=1e-15, atol=0)
    assert np.all(g.values[..., 0, 1] == 0)


def test_non_spd_rejected_with_eigenvalue():
    with pytest.raises(MetricError, match=r"eigenvalue -1"):
        construct_metric(_grid(), G0=np.diag([1.0, -1.0]))


def test_perturbed_metric_degenerate_names_point():
    grid = _grid()
    g = construct_metric(grid)
    h = np.zeros(grid.shape + (2, 2))
    h[3, 5] = -2 * np.eye(2)
    with pytest.raises(DegenerateMetricError, match=r"\(3, 5\)"):
        perturbed_metric(g, SymTensorField(grid, h))


def test_metric_inverse_identity():
    grid = _grid(3, 8)
    x = grid.coordinates()
    g = construct_metric(grid, "conformal", f=ScalarField(grid, 0.3 * np.sin(x[0]) * np.cos(x[2])))
    prod = np.einsum("...ij,...jk->...ik", g.values, g.inverse)
    assert np.max(np.abs(prod - np.eye(3))) <= 1e-13


def test_trace_and_split_examples():
    grid = _grid()
    g = construct_metric(grid)
    tr, conf, tf = trace_and_split(g, g)
    assert np.all(tr.values == 2) and np.array_equal(conf.values, g.values) and np.all(tf.values == 0)
    zero = SymTensorField(grid, np.zeros(grid.shape + (2, 2)))
    tr, conf, tf = trace_and_split(g, zero)
    assert tr.max_abs() == conf.max_abs() == tf.max_abs() == 0
    u = SymTensorField(grid, np.diag([1.0, -1.0]))
    tr, _, tf = trace_and_split(g, u)
    assert tr.max_abs() == 0 and np.array_equal(tf.values, u.values)


def test_trace_and_split_grid_mismatch():
    g = construct_metric(_grid(N=16))
    u = SymTensorField(_grid(N=8), np.eye(2))
    with pytest.raises(GridMismatchError):
        trace_and_split(g, u)


spd3 = st.lists(st.floats(-1, 1), min_size=9, max_size=9).map(
    lambda v: np.array(v).reshape(3, 3) @ np.array(v).reshape(3, 3).T + 0.5 * np.eye(3))


@settings(max_examples=25, deadline=None)
@given(G0=spd3, seed=st.integers(0, 10_000))
def test_trace_split_is_projection_pair(G0, seed):
    grid = _grid(3, 8)
    g = construct_metric(grid, G0=G0)
    u = SymTensorField(grid, np.random.default_rng(seed).standard_normal(grid.shape + (3, 3)))
    tr, conf, tf = trace_and_split(g, u)
    tr0 = np.einsum("...ij,...ij->...", g.inverse, tf.values)
    assert np.max(np.abs(tr0)) <= 1e-13 * max(1.0, u.max_abs()) * np.linalg.cond(G0)
    assert np.max(np.abs(conf.values + tf.values - u.values)) <= 1e-13 * max(1.0, u.max_abs())
    tr2, conf2, tf2 = trace_and_split(g, tf)
    assert tr2.max_abs() <= 1e-12 and conf2.max_abs() <= 1e-12
    assert np.max(np.abs(tf2.values - tf.values)) <= 1e-12


def test_kulkarni_nomizu_examples():
    grid = _grid()
    delta = SymTensorField(grid, np.eye(2))
    kn = kulkarni_nomizu(delta, delta)
    assert np.all(kn.values[..., 0, 1, 0, 1] == 2.0)
    rng = np.random.default_rng(2)
    u = SymTensorField(grid, rng.standard_normal(grid.shape + (2, 2)))
    v = SymTensorField(grid, rng.standard_normal(grid.shape + (2, 2)))
    assert np.array_equal(kulkarni_nomizu(u, v).values, kulkarni_nomizu(v, u).values)
    assert np.max(np.abs(kulkarni_nomizu(u, v).values[..., 0, 0, 0, 1])) <= 1e-15


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([2, 3]))
def test_kulkarni_nomizu_curvature_symmetries(seed, n):
    grid = _grid(n, 8)
    rng = np.random.default_rng(seed)
    u = SymTensorField(grid, rng.standard_normal(grid.shape + (n, n)))
    v = SymTensorField(grid, rng.standard_normal(grid.shape + (n, n)))
    defects = curvature_symmetry_defects(kulkarni_nomizu(u, v))
    assert max(defects.values()) <= 1e-13 * max(1.0, u.max_abs() * v.max_abs())


def test_l2_inner_volume_and_orthogonality():
    grid = _grid(N=32)
    g = construct_metric(grid)
    x = grid.coordinates()
    one = ScalarField(grid, np.ones(grid.shape))
    assert abs(l2_inner(g, one, one) - (2 * np.pi) ** 2) <= 1e-12
    s, c = ScalarField(grid, np.sin(x[0])), ScalarField(grid, np.cos(x[0]))
    assert abs(l2_inner(g, s, c)) <= 1e-13
    assert sup_norm(s * 0.1) == pytest.approx(0.1 * np.max(np.sin(x[0])), abs=0)


def test_l2_inner_matches_brute_force_loop():
    grid = _grid(2, 8)
    x = grid.coordinates()
    g = construct_metric(grid, "conformal", f=ScalarField(grid, 0.2 * np.cos(x[1])))
    rng = np.random.default_rng(3)
    u = SymTensorField(grid, rng.standard_normal(grid.shape + (2, 2)))
    v = SymTensorField(grid, rng.standard_normal(grid.shape + (2, 2)))
    total = 0.0
    for p in np.ndindex(grid.shape):
        gi = np.linalg.inv(g.values[p])
        for i, j, k, l in np.ndindex(2, 2, 2, 2):
            total += gi[i, k] * gi[j, l] * u.values[p][i, j] * v.values[p][k, l] * np.sqrt(np.linalg.det(g.values[p]))
    total *= grid.cell_volume
    assert l2_inner(g, u, v) == pytest.approx(total, rel=1e-12)
    assert l2_inner(g, u, v) == pytest.approx(l2_inner(g, v, u), rel=1e-14)
    assert l2_norm(g, u) >= 0


def test_pointwise_inner_rank_mismatch():
    grid = _grid()
    g = construct_metric(grid)
    with pytest.raises(RankMismatchError):
        pointwise_inner(g, ScalarField(grid, 1.0), OneFormField(grid, np.ones(grid.shape + (2,))))


def test_partial_derivative_trivial_cases():
    grid = _grid()
    x = grid.coordinates()
    c = ScalarField(grid, np.full(grid.shape, 3.7))
    assert np.all(partial_derivative(c, 0).values == 0)
    s = ScalarField(grid, np.sin(x[0]))
    assert np.all(partial_derivative(s, 1).values == 0)
    with pytest.raises(ValueError):
        partial_derivative(s, 2)


def test_stencil_symbols_are_exact_on_grid_modes():
    # discrete symbols of the two stencils, derived by hand from the shift operator
    N, k = 32, 3
    h = 2 * np.pi / N
    x = np.arange(N) * h
    th = k * h
    sym1 = (8 * np.sin(th) - np.sin(2 * th)) / (6 * h)
    sym2 = (32 * np.cos(th) - 2 * np.cos(2 * th) - 30) / (12 * h * h)
    assert np.max(np.abs(d1(np.sin(k * x), 0, h) - sym1 * np.cos(k * x))) <= 1e-12
    assert np.max(np.abs(d2(np.sin(k * x), 0, h) - sym2 * np.sin(k * x))) <= 1e-11


def test_partial_derivative_fourth_order():
    errs = []
    for N in (32, 64):
        grid = _grid(N=N)
        x = grid.coordinates()
        d = partial_derivative(ScalarField(grid, np.sin(x[0])), 0)
        errs.append(np.max(np.abs(d.values - np.cos(x[0]))))
    assert 14 <= errs[0] / errs[1] <= 18


@pytest.mark.parametrize("make", [
    lambda grid, rng: ScalarField(grid, rng.standard_normal(grid.shape)),
    lambda grid, rng: OneFormField(grid, rng.standard_normal(grid.shape + (3,))),
    lambda grid, rng: SymTensorField(grid, rng.standard_normal(grid.shape + (3, 3))),
    lambda grid, rng: construct_metric(grid, G0=np.diag([1.0, 2.0, 3.0])),
])
def test_binary_roundtrip_bitwise(tmp_path, make):
    grid = GridSpec(3, (8, 9, 10), (1.0, 2.0, 3.0))
    f = make(grid, np.random.default_rng(4))
    save_field(tmp_path / "f.bin", f)
    back = load_field(tmp_path / "f.bin")
    assert type(back) is type(f)
    assert back.grid == f.grid
    assert np.array_equal(back.values, f.values)


def test_binary_layout_upper_triangle(tmp_path):
    grid = _grid(2, 8)
    h = SymTensorField(grid, np.array([[1.0, 2.0], [2.0, 3.0]]))
    save_field(tmp_path / "h.bin", h)
    raw = (tmp_path / "h.bin").read_bytes()
    header = 8 + 8 + 8 + 4 * 2 + 8 * 2 + 4
    data = np.frombuffer(raw[header:], dtype="<f8").reshape(64, 3)
    assert np.all(data == [1.0, 2.0, 3.0])


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_bytes(b"not a field")
    with pytest.raises(ValueError):
        load_field(tmp_path / "x")


def test_export_csv(tmp_path):
    grid = _grid(2, 8)
    h = SymTensorField(grid, np.array([[1.0, 0.5], [0.5, 2.0]]))
    export_csv(tmp_path / "h.csv", h)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,u11,u12,u22"
    assert len(lines) == 65
    assert lines[2].split(",")[2:] == ["1.0", "0.5", "2.0"]


def test_roll_is_periodic_translation():
    grid = _grid(2, 8)
    x = grid.coordinates()
    u = ScalarField(grid, np.sin(x[0]) + 2 * np.cos(x[1]))
    r = u.roll((1, 2))
    h = grid.spacing
    assert np.allclose(r.values, np.sin(x[0] + h[0]) + 2 * np.cos(x[1] + 2 * h[1]), atol=1e-14)
