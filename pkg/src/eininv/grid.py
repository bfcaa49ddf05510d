"""Periodic structured grids and tensor fields on them.

Fields store their components *after* the spatial axes: a symmetric
2-tensor on an ``N1 x N2`` grid has ``values.shape == (N1, N2, n, n)``.
Index conventions for every component axis are recorded in a signature
string, one letter per index (``"l"`` covariant, ``"u"`` contravariant).

Only :func:`partial_derivative` (and the stencil helpers built on it)
introduces discretization error; every pointwise operation is exact up to
floating point rounding.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

SPD_TOL = 1e-10
DEFAULT_POINT_BUDGET = 1 << 22


class GridMismatchError(ValueError):
    """Two fields live on different grids."""


class RankMismatchError(ValueError):
    """Operation received fields of incompatible tensor type."""


class MetricError(ValueError):
    """A symmetric tensor failed the positive-definiteness check."""


class DegenerateMetricError(MetricError):
    """A perturbed metric ``g + h`` is not positive definite somewhere."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the torus ``prod_i [0, L_i)``."""

    n: int
    points_per_axis: tuple[int, ...]
    periods: tuple[float, ...]
    point_budget: int = field(default=DEFAULT_POINT_BUDGET, compare=False)

    def __post_init__(self):
        pts = tuple(int(p) for p in np.broadcast_to(self.points_per_axis, (self.n,)))
        per = tuple(float(p) for p in np.broadcast_to(self.periods, (self.n,)))
        object.__setattr__(self, "points_per_axis", pts)
        object.__setattr__(self, "periods", per)
        if self.n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.n}")
        if min(pts) < 8:
            raise ValueError(f"need at least 8 points per axis, got {pts}")
        if min(per) <= 0:
            raise ValueError(f"periods must be positive, got {per}")
        if int(np.prod(pts)) > self.point_budget:
            raise ValueError(
                f"{int(np.prod(pts))} grid points exceed the budget of {self.point_budget}"
            )

    @classmethod
    def uniform(cls, n: int, N: int, L: float = 2 * np.pi, **kw) -> "GridSpec":
        return cls(n, (N,) * n, (L,) * n, **kw)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_axis

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.periods, self.points_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    def coordinates(self) -> tuple[np.ndarray, ...]:
        axes = [np.arange(N) * h for N, h in zip(self.points_per_axis, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers ``2 pi m / L`` per axis, broadcast on the grid."""
        ks = [2 * np.pi * np.fft.fftfreq(N, d=1.0 / N) / L
              for N, L in zip(self.points_per_axis, self.periods)]
        return tuple(np.meshgrid(*ks, indexing="ij"))


# ---------------------------------------------------------------------------
# fields


def _component_shape(signature: str, n: int) -> tuple[int, ...]:
    return (n,) * len(signature)


class TensorField:
    """Immutable tensor field; ``values`` has shape ``grid.shape + (n,)*rank``."""

    signature: str = ""
    kind: str = "tensor"

    def __init__(self, grid: GridSpec, values, signature: str | None = None):
        if signature is not None:
            self.signature = signature
        values = np.array(values, dtype=float)
        expected = grid.shape + _component_shape(self.signature, grid.n)
        if values.shape != expected:
            try:
                values = np.broadcast_to(values, expected).copy()
            except ValueError:
                raise RankMismatchError(
                    f"{type(self).__name__}: expected shape {expected}, got {values.shape}") from None
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{type(self).__name__} has non-finite values")
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    @property
    def rank(self) -> int:
        return len(self.signature)

    @property
    def n(self) -> int:
        return self.grid.n

    def _new(self, values):
        cls = type(self)
        if cls is TensorField:
            return TensorField(self.grid, values, self.signature)
        return cls(self.grid, values)

    def _check_other(self, other: "TensorField"):
        if not isinstance(other, TensorField):
            return
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")
        if other.signature != self.signature:
            raise RankMismatchError(f"signature {self.signature!r} vs {other.signature!r}")

    def __add__(self, other):
        self._check_other(other)
        return self._arith(self.values + _vals(other))

    def __sub__(self, other):
        self._check_other(other)
        return self._arith(self.values - _vals(other))

    def __mul__(self, scalar):
        if isinstance(scalar, TensorField):
            raise TypeError("use pointwise helpers for field products")
        return self._arith(self.values * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._arith(self.values / scalar)

    def __neg__(self):
        return self._arith(-self.values)

    def _arith(self, values):
        return self._new(values)

    def roll(self, shift: Sequence[int]) -> "TensorField":
        """Grid translation ``x -> x + shift*h`` (pullback by the periodic shift)."""
        axes = tuple(range(self.n))
        return self._new(np.roll(self.values, tuple(-s for s in shift), axis=axes))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        return f"{type(self).__name__}(grid={self.grid.shape}, signature={self.signature!r})"


def _vals(x):
    return x.values if isinstance(x, TensorField) else x


class ScalarField(TensorField):
    signature = ""
    kind = "scalar"

    @classmethod
    def from_function(cls, grid: GridSpec, f: Callable[..., np.ndarray]) -> "ScalarField":
        return cls(grid, np.broadcast_to(f(*grid.coordinates()), grid.shape))


class OneFormField(TensorField):
    signature = "l"
    kind = "oneform"


class SymTensorField(TensorField):
    """Symmetric covariant 2-tensor; symmetry is enforced on construction."""

    signature = "ll"
    kind = "sym2"

    def __init__(self, grid: GridSpec, values):
        v = np.array(values, dtype=float)
        if v.ndim >= 2 and v.shape[-2:] == (grid.n, grid.n):
            v = 0.5 * (v + np.swapaxes(v, -1, -2))
        super().__init__(grid, v)

    @classmethod
    def from_scalar(cls, f: ScalarField, base: "SymTensorField | np.ndarray | None" = None):
        """``f * base`` with ``base`` a field or constant matrix (identity by default)."""
        n = f.grid.n
        b = np.eye(n) if base is None else _vals(base)
        return cls(f.grid, f.values[..., None, None] * b)


class Tensor12Field(TensorField):
    """(1,2)-tensor ``A^k_ij`` (Christoffel symbols, DeTurck tensor)."""

    signature = "ull"
    kind = "t12"


class FourTensorField(TensorField):
    signature = "llll"
    kind = "t04"


class Tensor13Field(TensorField):
    signature = "ulll"
    kind = "t13"


class MetricField(SymTensorField):
    """Pointwise SPD symmetric tensor with cached inverse and volume density."""

    kind = "metric"

    def __init__(self, grid: GridSpec, values, spd_tol: float = SPD_TOL,
                 error_cls: type[MetricError] = MetricError):
        super().__init__(grid, values)
        eig = np.linalg.eigvalsh(self.values)
        lo, hi = eig[..., 0], eig[..., -1]
        bad = lo <= spd_tol * np.max(np.abs(hi))
        if np.any(bad):
            flat = int(np.argmin(lo))
            point = np.unravel_index(flat, grid.shape)
            raise error_cls(
                f"metric not positive definite: eigenvalue {lo.flat[flat]:.6g} at grid point {tuple(int(p) for p in point)}"
            )
        inv = np.linalg.inv(self.values)
        inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
        inv.flags.writeable = False
        self.inverse = inv
        sd = np.sqrt(np.linalg.det(self.values))
        sd.flags.writeable = False
        self.sqrt_det = sd
        self.min_eigenvalue = float(lo.min())
        self._cache: dict = {}

    def _arith(self, values):
        return SymTensorField(self.grid, values)

    def _new(self, values):
        return MetricField(self.grid, values)

    @property
    def is_constant(self) -> bool:
        v = self.values.reshape(-1, self.n, self.n)
        return bool(np.all(v == v[0]))


def construct_metric(grid: GridSpec, kind: str = "flat", G0=None, f: ScalarField | None = None) -> MetricField:
    """Build a background metric.

    ``kind="flat"`` gives the constant metric ``G0`` (identity by default);
    ``kind="conformal"`` gives ``exp(2 f) delta``.
    """
    n = grid.n
    if kind == "flat":
        G0 = np.eye(n) if G0 is None else np.asarray(G0, dtype=float)
        if G0.shape != (n, n) or not np.allclose(G0, G0.T, rtol=0, atol=0):
            raise MetricError(f"G0 must be a symmetric {n}x{n} matrix")
        eig = np.linalg.eigvalsh(G0)
        if eig[0] <= SPD_TOL * abs(eig[-1]):
            raise MetricError(f"G0 is not positive definite: eigenvalue {eig[0]:.6g}")
        return MetricField(grid, np.broadcast_to(G0, grid.shape + (n, n)))
    if kind == "conformal":
        if f is None or f.grid != grid:
            raise ValueError("conformal metric needs a scalar field f on the same grid")
        return MetricField(grid, np.exp(2 * f.values)[..., None, None] * np.eye(n))
    raise ValueError(f"unknown metric kind {kind!r}")


def perturbed_metric(g: MetricField, h: SymTensorField) -> MetricField:
    """``g + h`` as a metric; raises :class:`DegenerateMetricError` if it is not SPD."""
    if h.grid != g.grid:
        raise GridMismatchError("h and g live on different grids")
    return MetricField(g.grid, g.values + h.values, error_cls=DegenerateMetricError)


# ---------------------------------------------------------------------------
# pointwise algebra


def _check_same_grid(*fields: TensorField):
    g0 = fields[0].grid
    for f in fields[1:]:
        if f.grid != g0:
            raise GridMismatchError("fields live on different grids")


def trace(g: MetricField, u: SymTensorField) -> ScalarField:
    _check_same_grid(g, u)
    return ScalarField(g.grid, np.einsum("...ij,...ij->...", g.inverse, u.values))


def trace_and_split(g: MetricField, u: SymTensorField):
    """Return ``(tr_g u, (tr/n) g, u - (tr/n) g)``."""
    tr = trace(g, u)
    conf = SymTensorField(g.grid, (tr.values / g.n)[..., None, None] * g.values)
    return tr, conf, SymTensorField(g.grid, u.values - conf.values)


def tracefree_part(g: MetricField, u: SymTensorField) -> SymTensorField:
    return trace_and_split(g, u)[2]


def kulkarni_nomizu(u: SymTensorField, v: SymTensorField) -> FourTensorField:
    """``(u o v)_ijkl = u_ik v_jl + u_jl v_ik - u_il v_jk - u_jk v_il``."""
    _check_same_grid(u, v)
    a, b = u.values, v.values
    # grouped so that swapping u and v permutes operands of commutative additions only
    t = ((np.einsum("...ik,...jl->...ijkl", a, b) + np.einsum("...jl,...ik->...ijkl", a, b))
         - (np.einsum("...il,...jk->...ijkl", a, b) + np.einsum("...jk,...il->...ijkl", a, b)))
    return FourTensorField(u.grid, t)


def _index_metrics(g: MetricField, signature: str):
    return [g.inverse if s == "l" else g.values for s in signature]


def pointwise_inner(g: MetricField, u: TensorField, v: TensorField) -> np.ndarray:
    """Full metric contraction ``<u, v>_g`` at every point."""
    _check_same_grid(g, u, v)
    if u.signature != v.signature:
        raise RankMismatchError(f"signature {u.signature!r} vs {v.signature!r}")
    k = u.rank
    if k == 0:
        return u.values * v.values
    left, right = "abcd"[:k], "efgh"[:k]
    terms = ",".join(f"...{a}{b}" for a, b in zip(left, right))
    spec = f"{terms},...{left},...{right}->..."
    return np.einsum(spec, *_index_metrics(g, u.signature), u.values, v.values, optimize=True)


def l2_inner(g: MetricField, u: TensorField, v: TensorField) -> float:
    """Riemannian ``L^2`` product: sum of ``<u,v>_g sqrt(det g)`` times the cell volume."""
    return float(np.sum(pointwise_inner(g, u, v) * g.sqrt_det) * g.grid.cell_volume)


def l2_norm(g: MetricField, u: TensorField) -> float:
    return float(np.sqrt(max(l2_inner(g, u, u), 0.0)))


def sup_norm(u: TensorField) -> float:
    return u.max_abs()


# ---------------------------------------------------------------------------
# finite differences


def d1(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order central first derivative along a periodic axis."""
    p1, m1 = np.roll(arr, -1, axis), np.roll(arr, 1, axis)
    p2, m2 = np.roll(arr, -2, axis), np.roll(arr, 2, axis)
    return (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)


def d2(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order compact second derivative (five-point) along a periodic axis."""
    p1, m1 = np.roll(arr, -1, axis), np.roll(arr, 1, axis)
    p2, m2 = np.roll(arr, -2, axis), np.roll(arr, 2, axis)
    return (16.0 * (p1 + m1) - (p2 + m2) - 30.0 * arr) / (12.0 * h * h)


def gradient_array(arr: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Stack ``d1`` over all axes; the derivative index becomes the first component axis."""
    return np.stack([d1(arr, a, h) for a, h in enumerate(grid.spacing)], axis=grid.n)


def second_partials_array(arr: np.ndarray, grid: GridSpec, compact: bool = True) -> np.ndarray:
    """Second partials ``d_a d_b`` as two leading component axes.

    With ``compact=True`` the diagonal uses the five-point stencil (no
    odd-even decoupling); otherwise every entry is a composition of ``d1``.
    Off-diagonal entries are computed once and mirrored, so the result is
    exactly symmetric in ``(a, b)``.
    """
    n = grid.n
    hs = grid.spacing
    firsts = [d1(arr, a, hs[a]) for a in range(n)]
    out = np.empty(arr.shape[:n] + (n, n) + arr.shape[n:])
    for a in range(n):
        for b in range(a, n):
            if a == b and compact:
                val = d2(arr, a, hs[a])
            else:
                val = d1(firsts[b], a, hs[a])
            out[(slice(None),) * n + (a, b)] = val
            out[(slice(None),) * n + (b, a)] = val
    return out


def partial_derivative(u: TensorField, axis: int) -> TensorField:
    """``d_axis u`` componentwise (fourth-order, periodic)."""
    if not 0 <= axis < u.n:
        raise ValueError(f"axis {axis} out of range for n={u.n}")
    vals = d1(u.values, axis, u.grid.spacing[axis])
    if isinstance(u, MetricField):
        return SymTensorField(u.grid, vals)
    return u._new(vals)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"EINVFLD1"
_KINDS = {
    "scalar": ScalarField, "oneform": OneFormField, "sym2": SymTensorField,
    "metric": MetricField, "t12": Tensor12Field, "t04": FourTensorField, "t13": Tensor13Field,
}


def _independent_indices(field: TensorField) -> list[tuple[int, ...]]:
    n = field.n
    if isinstance(field, SymTensorField):
        return [(i, j) for i in range(n) for j in range(i, n)]
    return list(product(range(n), repeat=field.rank))


def field_components(field: TensorField) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Independent component indices and a ``(points, components)`` array."""
    idx = _independent_indices(field)
    flat = field.values.reshape((field.grid.size,) + field.values.shape[field.n:])
    cols = np.stack([flat[(slice(None),) + i] for i in idx], axis=1) if idx != [()] else flat[:, None]
    return idx, cols


def save_field(path, field: TensorField) -> None:
    """Binary container: header then row-major float64 ``(points, components)``."""
    grid = field.grid
    idx, cols = field_components(field)
    header = _MAGIC + struct.pack("<8s", field.kind.encode().ljust(8))
    header += struct.pack("<II", field.rank, grid.n)
    header += struct.pack(f"<{grid.n}I", *grid.points_per_axis)
    header += struct.pack(f"<{grid.n}d", *grid.periods)
    header += struct.pack("<I", len(idx))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())


def load_field(path) -> TensorField:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a field container")
    off = len(_MAGIC)
    kind = struct.unpack_from("<8s", data, off)[0].decode().strip()
    off += 8
    rank, n = struct.unpack_from("<II", data, off)
    off += 8
    pts = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    per = struct.unpack_from(f"<{n}d", data, off)
    off += 8 * n
    (ncomp,) = struct.unpack_from("<I", data, off)
    off += 4
    grid = GridSpec(n, pts, per)
    cls = _KINDS[kind]
    cols = np.frombuffer(data, dtype="<f8", offset=off).reshape(grid.size, ncomp)
    probe = cls.__new__(cls)
    probe.grid = grid
    probe.signature = cls.signature
    idx = _independent_indices(probe)
    vals = np.zeros((grid.size,) + (n,) * rank)
    for c, i in enumerate(idx):
        vals[(slice(None),) + i] = cols[:, c]
        if len(i) == 2 and cls in (SymTensorField, MetricField):
            vals[:, i[1], i[0]] = cols[:, c]
    return cls(grid, vals.reshape(grid.shape + (n,) * rank))


def export_csv(path, field: TensorField) -> None:
    """One row per grid point: coordinates then independent components."""
    grid = field.grid
    idx, cols = field_components(field)
    coords = np.stack([c.ravel() for c in grid.coordinates()], axis=1)
    names = [f"x{a + 1}" for a in range(grid.n)]
    comp_names = ["u" + "".join(str(k + 1) for k in i) for i in idx] if idx != [()] else ["u"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + comp_names)
        for x, c in zip(coords, cols):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in c])
