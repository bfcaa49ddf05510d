"""Assembled linear operators, small eigenpairs, kernel projections.

Fields are mapped to vectors in *isometric* coordinates: components are
taken in a pointwise orthonormal frame of ``g`` and scaled by the square
root of the volume weight, so the L2 product of fields is the Euclidean
product of vectors and self-adjoint operators become symmetric matrices.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, lobpcg, minres

from .curvature import Background
from .grid import (
    MetricField,
    OneFormField,
    ScalarField,
    SymTensorField,
    TensorField,
    trace_and_split,
    tracefree_part,
)
from .operators import hodge_laplacian, lichnerowicz, rough_laplacian

KERNEL_TOL = 1e-7
GAP_RATIO = 10.0
COLLISION_TOL = 1e-3
DENSE_MAX_POINTS = 16


class ConvergenceError(RuntimeError):
    """An iterative solver or eigensolver missed its tolerance."""


class AmbiguousKernelError(ValueError):
    """No clear spectral gap separates kernel from the rest of the spectrum."""

    def __init__(self, message: str, window: tuple[float, float]):
        super().__init__(message)
        self.window = window


# ---------------------------------------------------------------------------
# bundles


def _sym_basis(n: int, tracefree: bool) -> np.ndarray:
    """Frobenius-orthonormal basis of (trace-free) symmetric n x n matrices."""
    mats = []
    for i in range(n):
        for j in range(i, n):
            m = np.zeros((n, n))
            if i == j:
                m[i, i] = 1.0
            else:
                m[i, j] = m[j, i] = 1.0 / np.sqrt(2.0)
            mats.append(m)
    if not tracefree:
        return np.array(mats)
    vecs = np.array([np.eye(n).ravel() / np.sqrt(n)] + [m.ravel() for m in mats]).T
    q, _ = np.linalg.qr(vecs)
    q = q[:, 1:len(mats)]
    out = q.T.reshape(-1, n, n)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


class Bundle:
    """Isometric vectorization of one of the field bundles over a metric."""

    KINDS = ("function", "oneform", "S2", "S2_0")

    def __init__(self, g: MetricField, kind: str):
        if kind not in self.KINDS:
            raise ValueError(f"unknown bundle {kind!r}")
        self.g = g
        self.kind = kind
        self.grid = g.grid
        n = g.n
        w, V = np.linalg.eigh(g.values)
        self._E = np.einsum("...ia,...a,...ja->...ij", V, w ** -0.5, V)  # g^{-1/2}
        self._F = np.einsum("...ia,...a,...ja->...ij", V, w ** 0.5, V)  # g^{1/2}
        self._w = np.sqrt(g.sqrt_det * g.grid.cell_volume)
        if kind in ("S2", "S2_0"):
            self._basis = _sym_basis(n, kind == "S2_0")
            self.ncomp = len(self._basis)
        else:
            self._basis = None
            self.ncomp = 1 if kind == "function" else n
        self.dim = self.ncomp * g.grid.size

    def to_vec(self, u: TensorField) -> np.ndarray:
        if self.kind == "function":
            a = (u.values * self._w)[None]
        elif self.kind == "oneform":
            a = np.einsum("...ai,...i->...a", self._E, u.values) * self._w[..., None]
            a = np.moveaxis(a, -1, 0)
        else:
            t = np.einsum("...ai,...ij,...bj->...ab", self._E, u.values, self._E)
            a = np.einsum("cab,...ab->c...", self._basis, t) * self._w
        return a.reshape(-1)

    def from_vec(self, x: np.ndarray) -> TensorField:
        shape = self.grid.shape
        a = np.asarray(x, dtype=float).reshape((self.ncomp,) + shape) / self._w
        if self.kind == "function":
            return ScalarField(self.grid, a[0])
        if self.kind == "oneform":
            return OneFormField(self.grid, np.einsum("...ia,a...->...i", self._F, a))
        t = np.einsum("cab,c...->...ab", self._basis, a)
        return SymTensorField(self.grid, np.einsum("...ia,...ab,...jb->...ij", self._F, t, self._F))

    def project(self, u: TensorField) -> TensorField:
        """Orthogonal projection of a field onto this bundle (trace removal for ``S2_0``)."""
        if self.kind == "S2_0":
            return tracefree_part(self.g, u)
        return u


# ---------------------------------------------------------------------------
# Fourier-diagonal inverse of translation-invariant operators


class FourierInverse:
    """Exact inverse, in the discrete Fourier basis, of a translation-invariant operator.

    The transfer matrices are obtained by probing ``matvec`` with one
    impulse per component, so the inverse is exact for the *discrete*
    operator on constant-coefficient backgrounds and an approximation
    elsewhere.  ``mode="abs"`` inverts ``|T(k)|`` (SPD, for CG/MINRES),
    ``mode="inverse"`` takes the pseudo-inverse of ``T(k)``.
    """

    def __init__(self, matvec: Callable[[np.ndarray], np.ndarray], ncomp: int, shape: tuple[int, ...],
                 mode: str = "inverse", rcond: float = 1e-12):
        self.ncomp = ncomp
        self.shape = shape
        nd = len(shape)
        axes = tuple(range(1, nd + 1))
        T = np.empty(shape + (ncomp, ncomp), dtype=complex)
        for c in range(ncomp):
            probe = np.zeros((ncomp,) + shape)
            probe[(c,) + (0,) * nd] = 1.0
            resp = np.asarray(matvec(probe.ravel())).reshape((ncomp,) + shape)
            T[..., :, c] = np.moveaxis(np.fft.fftn(resp, axes=axes), 0, -1)
        if mode == "abs":
            Th = 0.5 * (T + np.conj(np.swapaxes(T, -1, -2)))
            lam, V = np.linalg.eigh(Th)
            big = np.max(np.abs(lam))
            inv = 1.0 / np.maximum(np.abs(lam), rcond * big)
            self._Tinv = np.einsum("...ia,...a,...ja->...ij", V, inv, np.conj(V))
        elif mode == "inverse":
            self._Tinv = np.linalg.pinv(T, rcond=rcond)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        self.transfer = T
        self._axes = axes

    def __call__(self, x: np.ndarray) -> np.ndarray:
        a = np.asarray(x).reshape((self.ncomp,) + self.shape)
        ah = np.moveaxis(np.fft.fftn(a, axes=self._axes), 0, -1)
        yh = np.einsum("...ij,...j->...i", self._Tinv, ah)
        return np.fft.ifftn(np.moveaxis(yh, -1, 0), axes=self._axes).real.ravel()

    def as_operator(self) -> LinearOperator:
        n = self.ncomp * int(np.prod(self.shape))
        return LinearOperator((n, n), matvec=self, dtype=float)


# ---------------------------------------------------------------------------
# operator handles

TAGS = ("p", "P_ring", "P_H", "P", "Delta_L_shifted")
_ALIASES = {"P̊": "P_ring", "𝒫": "P", "Δ_L_shifted": "Delta_L_shifted", "PH": "P_H"}


@dataclass(eq=False)
class LinearOperatorHandle:
    """Self-adjoint discrete operator on one bundle over a background."""

    tag: str
    bundle: Bundle
    apply: Callable[[TensorField], TensorField]
    background: Background
    principal_sign: int = 1
    zeroth_order_bound: float = 0.0
    _matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.bundle.dim

    def matvec(self, x: np.ndarray) -> np.ndarray:
        b = self.bundle
        return b.to_vec(b.project(self.apply(b.from_vec(x))))

    def as_operator(self, shift: float = 0.0, scale: float = 1.0) -> LinearOperator:
        """``scale * A - shift * I`` as a scipy operator."""
        if shift == 0.0 and scale == 1.0:
            mv = self.matvec
        else:
            mv = lambda x: scale * self.matvec(x) - shift * x  # noqa: E731
        return LinearOperator((self.dim, self.dim), matvec=mv, rmatvec=mv, dtype=float)

    def matrix(self) -> np.ndarray:
        """Dense assembled matrix in isometric coordinates (small grids only)."""
        if self._matrix is None:
            if self.dim > 6000:
                raise ValueError(f"refusing to assemble a dense {self.dim}x{self.dim} matrix")
            eye = np.eye(self.dim)
            self._matrix = np.column_stack([self.matvec(eye[:, j]) for j in range(self.dim)])
        return self._matrix

    def norm_estimate(self, iters: int = 30) -> float:
        rng = np.random.default_rng(0)
        x = rng.standard_normal(self.dim)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(iters):
            y = self.matvec(x)
            lam = float(np.linalg.norm(y))
            if lam == 0.0:
                return 0.0
            x = y / lam
        return lam

    def low_scale(self) -> float:
        """Smallest nonzero symbol of the principal part: ``|c| (2 pi / L_max)^2``."""
        bg = self.background
        lead = abs(_principal_coefficient(self.tag, bg))
        return max(lead * (2 * np.pi / max(bg.grid.periods)) ** 2, 1e-300)


def _principal_coefficient(tag: str, bg: Background) -> float:
    n, k = bg.n, bg.kappa
    if tag == "p":
        return 1 + 2 * (n - 1) * k
    return 1.0


def _normalize_tag(tag: str) -> str:
    tag = _ALIASES.get(tag, tag)
    if tag not in TAGS:
        raise ValueError(f"unknown operator tag {tag!r}; expected one of {TAGS}")
    return tag


def p_operator(bg: Background, u: ScalarField) -> ScalarField:
    """``(1 + 2(n-1) kappa) Delta u + 2 Lambda u``."""
    c = 1 + 2 * (bg.n - 1) * bg.kappa
    return ScalarField(bg.grid, c * rough_laplacian(bg.g, u).values + 2 * bg.Lambda * u.values)


def _shift_field(bg: Background) -> np.ndarray:
    return 2 * bg.kappa * bg.R.values + 2 * bg.Lambda


def p_ring_operator(bg: Background, h: SymTensorField) -> SymTensorField:
    """``[Delta_L + 2 kappa R + 2 Lambda]`` restricted to trace-free tensors."""
    out = SymTensorField(bg.grid, lichnerowicz(bg.g, h).values + _shift_field(bg)[..., None, None] * h.values)
    return tracefree_part(bg.g, out)


def p_h_operator(bg: Background, w: OneFormField) -> OneFormField:
    """``Delta_H + 2 kappa R + 2 Lambda`` on 1-forms."""
    return OneFormField(bg.grid, hodge_laplacian(bg.g, w).values + _shift_field(bg)[..., None] * w.values)


def script_p_operator(bg: Background, h: SymTensorField) -> SymTensorField:
    """Full operator on S2 through the conformal / trace-free split.

    ``u g + h0  ->  p(u) g / (1 + kappa n) + P_ring(h0)``.
    """
    tr, _, h0 = trace_and_split(bg.g, h)
    u = ScalarField(bg.grid, tr.values / bg.n)
    pu = p_operator(bg, u).values / (1 + bg.kappa * bg.n)
    return SymTensorField(bg.grid, pu[..., None, None] * bg.g.values + p_ring_operator(bg, h0).values)


def delta_l_shifted(bg: Background, h: SymTensorField) -> SymTensorField:
    return SymTensorField(bg.grid, lichnerowicz(bg.g, h).values + _shift_field(bg)[..., None, None] * h.values)


def assemble(bg: Background, tag: str) -> LinearOperatorHandle:
    """Operator handle for ``tag`` in ``{p, P_ring, P_H, P, Delta_L_shifted}``."""
    tag = _normalize_tag(tag)
    g = bg.g
    n, k = bg.n, bg.kappa
    curv = (2 * float(np.max(np.abs(bg.ric.values))) + 2 * n * n * float(np.max(np.abs(bg.riem.values)))
            if not g.is_constant else 0.0)
    shift = float(np.max(np.abs(_shift_field(bg))))
    if tag == "p":
        bundle, fn = Bundle(g, "function"), lambda u: p_operator(bg, u)
        sign = 1 if 1 + 2 * (n - 1) * k > 0 else -1
        bound = 2 * abs(bg.Lambda)
    elif tag == "P_ring":
        bundle, fn, sign, bound = Bundle(g, "S2_0"), lambda h: p_ring_operator(bg, h), 1, shift + curv
    elif tag == "P_H":
        bundle, fn, sign, bound = Bundle(g, "oneform"), lambda w: p_h_operator(bg, w), 1, shift + curv
    elif tag == "Delta_L_shifted":
        bundle, fn, sign, bound = Bundle(g, "S2"), lambda h: delta_l_shifted(bg, h), 1, shift + curv
    else:
        ratio = (1 + 2 * (n - 1) * k) / (1 + k * n)
        sign = 1 if ratio > 0 else 0  # 0: principal part indefinite across the split
        bundle, fn = Bundle(g, "S2"), lambda h: script_p_operator(bg, h)
        bound = shift + curv + 2 * abs(bg.Lambda / (1 + k * n))
    return LinearOperatorHandle(tag, bundle, fn, bg, principal_sign=sign, zeroth_order_bound=bound)


# ---------------------------------------------------------------------------
# eigenpairs


@dataclass
class Eigenpair:
    value: float
    field: TensorField
    vector: np.ndarray = field(repr=False)
    residual: float = 0.0


def _lobpcg_lowest(handle: LinearOperatorHandle, k: int, sign: int):
    """Lowest eigenpairs of ``sign * A`` by block LOBPCG.

    A block method resolves degenerate clusters (torus spectra are highly
    degenerate) which single-vector Lanczos tends to under-count.  The
    preconditioner is the Fourier inverse of ``sign * A - sigma`` with
    ``sigma`` below the spectrum, exact on constant-coefficient backgrounds.
    """
    sigma = -handle.zeroth_order_bound - 1.0
    A = handle.as_operator(scale=sign)
    shifted = handle.as_operator(shift=sigma, scale=sign)
    pre = FourierInverse(shifted.matvec, handle.bundle.ncomp, handle.bundle.grid.shape, mode="abs")
    m = min(k + max(6, k // 2), handle.dim // 5)
    X = np.random.default_rng(0).standard_normal((handle.dim, m))
    tol = 1e-12 * max(handle.norm_estimate(iters=10), 1.0)
    with warnings.catch_warnings():
        # convergence is judged by the explicit residual check in eigen_small
        warnings.simplefilter("ignore", UserWarning)
        lam, V = lobpcg(A, X, M=pre.as_operator(), largest=False, tol=tol, maxiter=200)
    order = np.argsort(lam)[:k]
    return lam[order], V[:, order]


def eigen_small(handle: LinearOperatorHandle, k: int = 10) -> list[Eigenpair]:
    """The ``k`` lowest eigenpairs (ascending in ``principal_sign * lambda``).

    Dense ``eigh`` for grids with at most 16 points per axis, preconditioned
    block LOBPCG otherwise.
    """
    if handle.principal_sign == 0:
        raise ValueError(f"{handle.tag}: principal part is indefinite, no lowest eigenvalues")
    sign = handle.principal_sign
    k = min(k, handle.dim - 1)
    if max(handle.bundle.grid.shape) <= DENSE_MAX_POINTS:
        # the symmetric part: discrete operators are self-adjoint only up to
        # discretization error on non-constant backgrounds
        S = 0.5 * (handle.matrix() + handle.matrix().T)
        lam, V = np.linalg.eigh(sign * S)
        lam, V = lam[:k], V[:, :k]
        apply = lambda v: S @ v  # noqa: E731
    else:
        lam, V = _lobpcg_lowest(handle, k, sign)
        apply = handle.matvec
    scale = max(handle.norm_estimate(iters=10), 1.0)
    out = []
    for j in range(len(lam)):
        v = V[:, j] / np.linalg.norm(V[:, j])
        r = float(np.linalg.norm(sign * apply(v) - lam[j] * v))
        if r > 1e-8 * scale:
            raise ConvergenceError(f"{handle.tag}: eigenpair {j} residual {r:.2e} > {1e-8 * scale:.2e}")
        out.append(Eigenpair(float(sign * lam[j]), handle.bundle.from_vec(v), v, r))
    return out


# ---------------------------------------------------------------------------
# kernels and projections


@dataclass
class KernelBasis:
    """L2-orthonormal kernel fields of one operator."""

    bundle: Bundle
    vectors: np.ndarray  # (dim, k), orthonormal columns
    threshold: float
    eigenvalues: np.ndarray
    tag: str = ""
    spectrum: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def fields(self) -> list[TensorField]:
        return [self.bundle.from_vec(self.vectors[:, j]) for j in range(self.dim)]

    def project_vec(self, x: np.ndarray) -> np.ndarray:
        if self.dim == 0:
            return np.zeros_like(x)
        return self.vectors @ (self.vectors.T @ x)


def kernel_and_projection(handle: LinearOperatorHandle, tol: float | None = None, k: int | None = None,
                          max_k: int = 160) -> KernelBasis:
    """Numerical kernel of ``handle``: eigenvalues with ``|lambda| <= tol``.

    ``tol`` defaults to ``KERNEL_TOL`` times :meth:`~LinearOperatorHandle.low_scale`.
    Raises :class:`AmbiguousKernelError` if an eigenvalue falls in
    ``(tol, GAP_RATIO * tol]``.
    """
    if tol is None:
        tol = KERNEL_TOL * handle.low_scale()
    k = k or max(8, handle.bundle.ncomp * 2 + 2)
    while True:
        pairs = eigen_small(handle, k)
        vals = np.array([p.value for p in pairs])
        signed = handle.principal_sign * vals
        if signed[-1] > GAP_RATIO * tol or len(pairs) >= handle.dim - 1:
            break
        if k >= max_k:
            raise ConvergenceError(f"{handle.tag}: more than {max_k} eigenvalues below the kernel window")
        k = min(2 * k, max_k)
    absv = np.abs(vals)
    amb = (absv > tol) & (absv <= GAP_RATIO * tol)
    if np.any(amb):
        lo, hi = float(absv[amb].min()), float(absv[amb].max())
        raise AmbiguousKernelError(
            f"{handle.tag}: no spectral gap, eigenvalues {lo:.3e}..{hi:.3e} inside ({tol:.3e}, {GAP_RATIO * tol:.3e}]",
            (lo, hi))
    keep = absv <= tol
    V = np.column_stack([p.vector for p, kk in zip(pairs, keep) if kk]) if np.any(keep) \
        else np.zeros((handle.dim, 0))
    if V.shape[1]:
        V, _ = np.linalg.qr(V)
    return KernelBasis(handle.bundle, V, tol, vals[keep], handle.tag, vals)


def project(kb: KernelBasis, u: TensorField) -> TensorField:
    """``sum_i <u, h_i> h_i``."""
    x = kb.bundle.to_vec(kb.bundle.project(u))
    return kb.bundle.from_vec(kb.project_vec(x))


class SplitProjection:
    """Projection on ``ker P`` assembled across ``S2 = G + S2_0``.

    ``u g + h0  ->  pi(u) g + Pi_ring(h0)`` with ``pi`` the kernel projection
    of ``p`` and ``Pi_ring`` that of ``P_ring``.
    """

    def __init__(self, bg: Background, pi: KernelBasis, pi_ring: KernelBasis):
        self.bg = bg
        self.pi = pi
        self.pi_ring = pi_ring

    @classmethod
    def from_background(cls, bg: Background, tol: float | None = None) -> "SplitProjection":
        pi = kernel_and_projection(assemble(bg, "p"), tol)
        pi_ring = kernel_and_projection(assemble(bg, "P_ring"), tol)
        return cls(bg, pi, pi_ring)

    @property
    def is_zero(self) -> bool:
        return self.pi.dim == 0 and self.pi_ring.dim == 0

    @property
    def dim(self) -> int:
        return self.pi.dim + self.pi_ring.dim

    def scalar_part(self, u: ScalarField) -> ScalarField:
        return project(self.pi, u) if self.pi.dim else ScalarField(u.grid, np.zeros(u.grid.shape))

    def tracefree_part(self, h0: SymTensorField) -> SymTensorField:
        return project(self.pi_ring, h0) if self.pi_ring.dim else SymTensorField(h0.grid, np.zeros_like(h0.values))

    def __call__(self, h: SymTensorField) -> SymTensorField:
        g = self.bg.g
        if self.is_zero:
            return SymTensorField(h.grid, np.zeros_like(h.values))
        tr, _, h0 = trace_and_split(g, h)
        u = ScalarField(h.grid, tr.values / g.n)
        pu = self.scalar_part(u).values
        return SymTensorField(h.grid, pu[..., None, None] * g.values + self.tracefree_part(h0).values)


# ---------------------------------------------------------------------------
# shifted solve


@dataclass
class ShiftedSolveResult:
    x: TensorField
    residual: float
    iterations: int


def shifted_solve(handle: LinearOperatorHandle, c: float, kb: KernelBasis, y: TensorField,
                  x0: TensorField | None = None, rtol: float = 1e-12) -> ShiftedSolveResult:
    """Solve ``(P + c Pi) x = y`` by splitting ``y`` into kernel and orthogonal parts.

    The kernel part is divided by ``c``; the orthogonal part is solved with
    MINRES on ``P + Pi`` (which agrees with ``P`` on the orthogonal
    complement and is invertible), preconditioned by its Fourier inverse.
    """
    if c == 0:
        raise ValueError("shift c must be nonzero")
    b = handle.bundle
    yv = b.to_vec(b.project(y))
    yk = kb.project_vec(yv)
    yp = yv - yk

    def mv(x):
        return handle.matvec(x) + kb.project_vec(x)

    n = handle.dim
    A = LinearOperator((n, n), matvec=mv, rmatvec=mv, dtype=float)
    pre = FourierInverse(mv, b.ncomp, b.grid.shape, mode="abs")
    iters = [0]
    guess = None if x0 is None else b.to_vec(b.project(x0))
    if guess is not None:
        guess = guess - kb.project_vec(guess)
    xp = guess
    ynorm = max(np.linalg.norm(yv), 1e-300)
    if np.linalg.norm(yp) > 0:
        for _ in range(5):
            xp, info = minres(A, yp, x0=xp, rtol=rtol, maxiter=400, M=pre.as_operator(),
                              callback=lambda _x: iters.__setitem__(0, iters[0] + 1))
            if np.linalg.norm(mv(xp) - yp) <= 1e-10 * ynorm:
                break
        xp = xp - kb.project_vec(xp)
    else:
        xp = np.zeros_like(yv)
    x = xp + yk / c
    res = float(np.linalg.norm(handle.matvec(x) + c * kb.project_vec(x) - yv) / ynorm)
    if res > 1e-9:
        raise ConvergenceError(f"shifted solve residual {res:.2e} > 1e-9")
    return ShiftedSolveResult(b.from_vec(x), res, iters[0])


# ---------------------------------------------------------------------------
# hypothesis report


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    failure: str
    detail: str = ""


@dataclass
class OperatorSpectrum:
    tag: str
    eigenvalues: np.ndarray
    kernel_dim: int | None
    kernel_tol: float
    min_abs_nonkernel: float
    collision_tol: float
    note: str = ""


@dataclass
class HypothesisReport:
    checks: list[Check]
    spectra: dict[str, OperatorSpectrum]
    verdict: str
    licensed: bool
    pi_zero: bool
    projection: SplitProjection | None
    notes: list[str]

    @property
    def failures(self) -> list[str]:
        return [c.failure for c in self.checks if not c.passed]

    def to_text(self) -> str:
        lines = ["check                                   pass   value          tolerance"]
        for c in self.checks:
            lines.append(f"{c.name:<40}{'yes' if c.passed else 'NO':<7}{c.value:<15.6e}{c.tolerance:.3e}"
                         + (f"  {c.detail}" if c.detail else ""))
        lines.append("")
        for s in self.spectra.values():
            kd = "?" if s.kernel_dim is None else str(s.kernel_dim)
            ev = ", ".join(f"{v:.10g}" for v in s.eigenvalues[:12])
            lines.append(f"{s.tag}: kernel dim {kd} (tol {s.kernel_tol:.3e}); lowest eigenvalues: {ev}")
            if s.note:
                lines.append(f"  note: {s.note}")
        lines.append("")
        lines.extend(f"note: {n}" for n in self.notes)
        lines.append(f"Pi = 0: {self.pi_zero}")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["operator", "index", "eigenvalue", "kernel_tol"])
            for s in self.spectra.values():
                for i, v in enumerate(s.eigenvalues):
                    w.writerow([s.tag, i, repr(float(v)), repr(float(s.kernel_tol))])

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "licensed": self.licensed,
            "failures": self.failures,
            "pi_zero": self.pi_zero,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value, "tolerance": c.tolerance,
                 "failure": c.failure, "detail": c.detail} for c in self.checks
            ],
            "kernel_dims": {k: s.kernel_dim for k, s in self.spectra.items()},
        }


def _analyse(handle: LinearOperatorHandle, k: int, collision_tol: float):
    tol = KERNEL_TOL * handle.low_scale()
    coll = collision_tol * handle.low_scale()
    try:
        kb = kernel_and_projection(handle, tol, k=k)
        vals = kb.spectrum
        rest = np.abs(vals[np.abs(vals) > tol])
        spec = OperatorSpectrum(handle.tag, vals, kb.dim, tol, float(rest.min()) if rest.size else np.inf, coll)
        return kb, spec, None
    except AmbiguousKernelError as exc:
        pairs = eigen_small(handle, k)
        vals = np.array([p.value for p in pairs])
        spec = OperatorSpectrum(handle.tag, vals, None, tol, exc.window[0], coll, note=str(exc))
        return None, spec, exc
    except (ConvergenceError, ValueError) as exc:
        spec = OperatorSpectrum(handle.tag, np.zeros(0), None, tol, np.nan, coll, note=str(exc))
        return None, spec, exc


def hypothesis_report(bg: Background, k: int = 12, collision_tol: float = COLLISION_TOL) -> HypothesisReport:
    """Check the spectral and structural hypotheses licensing the Newton solve."""
    checks: list[Check] = []
    spectra: dict[str, OperatorSpectrum] = {}
    kbs: dict[str, KernelBasis | None] = {}
    for tag in ("p", "P_ring", "P_H"):
        kb, spec, _ = _analyse(assemble(bg, tag), k, collision_tol)
        spectra[tag] = spec
        kbs[tag] = kb

    # p: kernel trivial or constants
    sp = spectra["p"]
    ok = sp.kernel_dim == 0
    detail = ""
    if sp.kernel_dim == 1:
        u = kbs["p"].fields[0].values
        spread = float(np.max(u) - np.min(u)) / max(float(np.max(np.abs(u))), 1e-300)
        ok = spread <= 1e-8
        detail = f"kernel spread {spread:.2e}"
    checks.append(Check("ker p trivial or constants", bool(ok), float(sp.kernel_dim if sp.kernel_dim is not None else -1),
                        sp.kernel_tol, "ker p not trivial or constants", detail))
    sh = spectra["P_H"]
    checks.append(Check("ker P_H trivial", sh.kernel_dim == 0, float(sh.kernel_dim if sh.kernel_dim is not None else -1),
                        sh.kernel_tol, "ker P_H nontrivial"))
    sr = spectra["P_ring"]
    checks.append(Check("ker P_ring separated by a spectral gap", sr.kernel_dim is not None,
                        float(sr.kernel_dim if sr.kernel_dim is not None else -1), sr.kernel_tol, "ker P_ring ambiguous",
                        sr.note))
    for tag in ("p", "P_ring", "P_H"):
        s = spectra[tag]
        if s.eigenvalues.size == 0:
            checks.append(Check(f"spectrum of {tag} computed", False, np.nan, KERNEL_TOL,
                                f"spectral analysis of {tag} failed", s.note))
            continue
        near = s.min_abs_nonkernel
        checks.append(Check(f"no spectrum collision for {tag}", bool(near > s.collision_tol), float(near),
                            s.collision_tol, f"spectrum collision: {tag}",
                            "eigenvalue within discretization error of 0" if near <= s.collision_tol else ""))
    structure = "background Ricci-parallel" if bg.kappa == 0 else "background Einstein"
    checks.append(Check(structure, bg.flags["structure"],
                        bg.ricci_gradient if bg.kappa == 0 else bg.einstein_defect,
                        1e-10, "background not Ricci-parallel" if bg.kappa == 0 else "background not Einstein"))
    checks.append(Check("Ein(g) nondegenerate", bg.flags["nondegenerate"], bg.nondeg_margin, 1e-10,
                        "Ein(g) degenerate"))

    failures = [c.failure for c in checks if not c.passed]
    licensed = not failures
    verdict = "licensed" if licensed else "hypotheses fail: " + "; ".join(failures)
    proj = None
    if kbs["p"] is not None and kbs["P_ring"] is not None:
        proj = SplitProjection(bg, kbs["p"], kbs["P_ring"])
    pi_zero = bool(proj is not None and proj.is_zero)
    notes = ["on a compact periodic proxy all spectrum is discrete; the essential-spectrum alternative "
             "for the Lichnerowicz condition cannot be tested here"]
    if bg.kappa == 0:
        notes.append(f"-2*Lambda = {-2 * bg.Lambda:g}: distance to spec(Delta_L) and spec(Delta_H) is the smallest "
                     "|eigenvalue| of P_ring/p and P_H respectively")
    return HypothesisReport(checks, spectra, verdict, licensed, pi_zero, proj, notes)
