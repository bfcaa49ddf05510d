"""Gauged residual, its linearization at zero, and the Newton solve for ``h``.

For a background ``g`` and a small symmetric tensor ``e`` the solver looks
for ``h`` with ``Ein(g + h) = Ein(g) + e - 1/2 Pi(h)`` by driving the
DeTurck-gauged residual ``F(h, e)`` to zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .curvature import Background, ein_tensor, riemann_ricci_scalar, ricci_increment
from .grid import (
    DegenerateMetricError,
    MetricField,
    ScalarField,
    SymTensorField,
    perturbed_metric,
    trace,
    trace_and_split,
)
from .operators import divergence_and_bianchi, gauge_term, tracefree_hessian
from .spectral import (
    Bundle,
    FourierInverse,
    HypothesisReport,
    SplitProjection,
    hypothesis_report,
    p_operator,
    p_ring_operator,
)

TRACEFREE_TOL = 1e-10


class NotLicensedError(RuntimeError):
    """The hypotheses of the local inversion theorem fail for this background."""

    def __init__(self, verdict: str):
        super().__init__(verdict)
        self.verdict = verdict


class NewtonDivergenceError(RuntimeError):
    """The residual could not be decreased, even after damping."""


@dataclass(frozen=True)
class SolveOptions:
    newton_tol: float = 1e-10
    max_newton: int = 12
    linear_tol: float = 1e-11
    damping: str = "backtracking"
    jacobian_mode: str = "fd-preconditioned"
    smallness: float = 1e-2
    max_backtracks: int = 8
    gmres_restart: int = 60

    def __post_init__(self):
        for name in ("newton_tol", "linear_tol", "smallness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be >= 1")
        if self.damping not in ("none", "backtracking"):
            raise ValueError(f"unknown damping {self.damping!r}")
        if self.jacobian_mode != "fd-preconditioned":
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


def _zero(bg: Background) -> SymTensorField:
    return SymTensorField(bg.grid, np.zeros(bg.grid.shape + (bg.n, bg.n)))


def _apply_pi(Pi: SplitProjection | None, h: SymTensorField) -> np.ndarray:
    if Pi is None or Pi.is_zero:
        return np.zeros_like(h.values)
    return Pi(h).values


def build_E(bg: Background, h: SymTensorField, e: SymTensorField, Pi: SplitProjection | None) -> SymTensorField:
    """``E = Ein(g) + e - 1/2 Pi(h)``."""
    return SymTensorField(bg.grid, bg.ein_g.values + e.values - 0.5 * _apply_pi(Pi, h))


@dataclass
class ResidualParts:
    ricci: SymTensorField  # Ric(g+h) - Ric(g)
    Z: SymTensorField
    gauge: SymTensorField
    E: SymTensorField

    @property
    def total(self) -> SymTensorField:
        return SymTensorField(self.ricci.grid, self.ricci.values + self.Z.values - self.gauge.values)


def zero_order_term(bg: Background, G: MetricField, E: SymTensorField) -> SymTensorField:
    """``Z = (kappa Tr_G E + Lambda) / (1 + kappa n) G - E + Ric(g)``."""
    n, k = bg.n, bg.kappa
    s = (k * trace(G, E).values + bg.Lambda) / (1 + k * n)
    return SymTensorField(bg.grid, s[..., None, None] * G.values - E.values + bg.ric.values)


def residual_parts(bg: Background, h: SymTensorField, e: SymTensorField,
                   Pi: SplitProjection | None = None) -> ResidualParts:
    G = perturbed_metric(bg.g, h)
    E = build_E(bg, h, e, Pi)
    _, ric, _ = riemann_ricci_scalar(G)
    ricci = SymTensorField(bg.grid, ric.values - bg.ric.values)
    return ResidualParts(ricci, zero_order_term(bg, G, E), gauge_term(bg, h, E), E)


def residual_F(bg: Background, h: SymTensorField, e: SymTensorField,
               Pi: SplitProjection | None = None) -> SymTensorField:
    """``F(h, e) = Ric(g+h) - E + (kappa Tr_{g+h} E + Lambda)/(1 + kappa n) (g+h) - L_g Ein_g^{-1} B_{g+h}(E)``."""
    return residual_parts(bg, h, e, Pi).total


def linearized_F0(bg: Background, u: ScalarField, h0: SymTensorField,
                  Pi: SplitProjection | None = None) -> SymTensorField:
    """Derivative of ``F(., 0)`` at ``h = 0`` on ``u g + h0`` (``h0`` trace-free).

    Pure trace: ``[p(u) + pi(u)] / (2(1 + kappa n)) g - kappa n (n-2) / (2(1 + kappa n)) Hess0 u``.
    Trace-free: ``1/2 (P_ring + Pi_ring) h0``.  Exact derivative on Einstein
    backgrounds; on flat ones it is constant-coefficient.
    """
    g = bg.g
    n, k = bg.n, bg.kappa
    tr = trace(g, h0).values
    scale = max(1.0, h0.max_abs())
    if np.max(np.abs(tr)) > TRACEFREE_TOL * scale:
        raise ValueError(f"h0 is not trace-free (max |tr| = {np.max(np.abs(tr)):.2e})")
    pu = p_operator(bg, u).values
    if Pi is not None and Pi.pi.dim:
        pu = pu + Pi.scalar_part(u).values
    out = (pu / (2 * (1 + k * n)))[..., None, None] * g.values
    if k != 0 and n != 2:
        out = out - k * n * (n - 2) / (2 * (1 + k * n)) * tracefree_hessian(g, u).values
    t = p_ring_operator(bg, h0).values
    if Pi is not None and Pi.pi_ring.dim:
        t = t + Pi.tracefree_part(h0).values
    return SymTensorField(bg.grid, out + 0.5 * t)


def linearized_F0_full(bg: Background, h: SymTensorField, Pi: SplitProjection | None = None) -> SymTensorField:
    """:func:`linearized_F0` on an arbitrary symmetric ``h`` via the trace split."""
    tr, _, h0 = trace_and_split(bg.g, h)
    return linearized_F0(bg, ScalarField(bg.grid, tr.values / bg.n), h0, Pi)


# ---------------------------------------------------------------------------
# Newton iteration


@dataclass
class SolveReport:
    h: SymTensorField
    iterations: int
    residual_history: list[float]
    equation_residual: float
    gauge_residual: float
    pi_component: float
    converged: bool
    exploratory: bool = False
    step_lengths: list[float] = field(default_factory=list)
    linear_iterations: list[int] = field(default_factory=list)
    tolerance: float = 0.0
    options: SolveOptions = field(default_factory=SolveOptions)

    def summary_text(self) -> str:
        lines = [
            f"converged: {self.converged}" + ("  (exploratory, not acceptance-bearing)" if self.exploratory else ""),
            f"newton iterations: {self.iterations}",
            f"final residual |F|_inf: {self.residual_history[-1]:.6e}  (tolerance {self.tolerance:.3e})",
            f"equation residual |Ein(g+h) - Ein(g) - e + Pi(h)/2|_inf: {self.equation_residual:.6e}",
            f"gauge residual |B_(g+h)(E)|_inf: {self.gauge_residual:.6e}",
            f"|Pi(h)|_inf: {self.pi_component:.6e}",
            f"|h|_inf: {self.h.max_abs():.6e}",
        ]
        return "\n".join(lines) + "\n"

    def write_history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual_inf", "step_length", "linear_iterations", "tolerance"])
            for i, r in enumerate(self.residual_history):
                step = self.step_lengths[i - 1] if 0 < i <= len(self.step_lengths) else ""
                lin = self.linear_iterations[i - 1] if 0 < i <= len(self.linear_iterations) else ""
                w.writerow([i, repr(float(r)), step, lin, repr(float(self.tolerance))])


def _fd_step(h_vec: np.ndarray, v: np.ndarray) -> float:
    vn = np.max(np.abs(v))
    return 6e-6 * max(1.0, float(np.max(np.abs(h_vec)))) / vn if vn > 0 else 1.0


def equation_residual(bg: Background, h: SymTensorField, e: SymTensorField, Pi: SplitProjection | None) -> float:
    G = perturbed_metric(bg.g, h)
    res = ein_tensor(G, bg.kappa, bg.Lambda).values - bg.ein_g.values - e.values + 0.5 * _apply_pi(Pi, h)
    return float(np.max(np.abs(res)))


def gauge_residual(bg: Background, h: SymTensorField, e: SymTensorField, Pi: SplitProjection | None) -> float:
    G = perturbed_metric(bg.g, h)
    _, _, bb = divergence_and_bianchi(G, build_E(bg, h, e, Pi), bg.kappa)
    return bb.max_abs()


def newton_solve(bg: Background, e: SymTensorField, opts: SolveOptions | None = None,
                 report: HypothesisReport | None = None, h0: SymTensorField | None = None,
                 exploratory: bool = False) -> SolveReport:
    """Solve ``F(h, e) = 0`` by Newton's method from ``h0`` (default 0).

    Jacobian-vector products are central differences of ``F``; the linear
    systems are solved by GMRES preconditioned with the Fourier inverse of
    :func:`linearized_F0_full`.  ``Pi`` is taken from the hypothesis report
    and stays frozen at the background.
    """
    opts = opts or SolveOptions()
    if report is None:
        report = hypothesis_report(bg)
    if not report.licensed and not exploratory:
        raise NotLicensedError(report.verdict)
    if report.projection is None:
        raise NotLicensedError(report.verdict + " (no usable projection)")
    if bg.ein_endo_inverse is None:
        raise NotLicensedError("Ein(g) degenerate: the gauge term Ein_g^{-1} is undefined")
    if e.max_abs() > opts.smallness:
        raise ValueError(f"|e|_inf = {e.max_abs():.3e} exceeds the smallness bound {opts.smallness:.3e}")
    Pi = report.projection
    bundle = Bundle(bg.g, "S2")

    def F_vec(x):
        return bundle.to_vec(residual_F(bg, bundle.from_vec(x), e, Pi))

    def lin_vec(x):
        return bundle.to_vec(linearized_F0_full(bg, bundle.from_vec(x), Pi))

    pre = FourierInverse(lin_vec, bundle.ncomp, bg.grid.shape, mode="inverse").as_operator()
    x = bundle.to_vec(h0) if h0 is not None else np.zeros(bundle.dim)
    r = F_vec(x)

    def rnorm(rv):
        return bundle.from_vec(rv).max_abs()

    hist = [rnorm(r)]
    floor = 1e-13 * max(1.0, bg.ein_g.max_abs())
    tol = max(opts.newton_tol * hist[0], floor)
    steps, lin_its = [], []
    converged = hist[0] <= tol
    it = 0
    while not converged and it < opts.max_newton:
        it += 1

        def jv(v, x=x):
            eps = _fd_step(x, v)
            return (F_vec(x + eps * v) - F_vec(x - eps * v)) / (2 * eps)

        J = LinearOperator((bundle.dim, bundle.dim), matvec=jv, dtype=float)
        count = [0]
        dx, _ = gmres(J, -r, rtol=opts.linear_tol, atol=0.0, restart=opts.gmres_restart, maxiter=4, M=pre,
                      callback=lambda _r: count.__setitem__(0, count[0] + 1), callback_type="pr_norm")
        lin_its.append(count[0])
        alpha, accepted = 1.0, False
        for _ in range(opts.max_backtracks + 1):
            try:
                x_new = x + alpha * dx
                r_new = F_vec(x_new)
            except DegenerateMetricError:
                alpha *= 0.5
                continue
            if opts.damping == "none" or rnorm(r_new) < hist[-1]:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if hist[-1] <= 100 * floor:
                converged = True  # rounding floor of F reached
                break
            raise NewtonDivergenceError(f"residual {hist[-1]:.3e} could not be decreased at iteration {it}")
        x, r = x_new, r_new
        hist.append(rnorm(r))
        steps.append(alpha)
        converged = hist[-1] <= tol
    h = bundle.from_vec(x)
    h = SymTensorField(bg.grid, h.values)
    return SolveReport(
        h=h,
        iterations=it,
        residual_history=hist,
        equation_residual=equation_residual(bg, h, e, Pi),
        gauge_residual=gauge_residual(bg, h, e, Pi),
        pi_component=float(np.max(np.abs(_apply_pi(Pi, h)))) if not Pi.is_zero else 0.0,
        converged=bool(converged),
        exploratory=bool(exploratory and not report.licensed),
        step_lengths=steps,
        linear_iterations=lin_its,
        tolerance=tol,
        options=opts,
    )


# ---------------------------------------------------------------------------
# a posteriori verification


@dataclass
class VerificationRecord:
    equation_residual: float
    equation_residual_alt: float
    gauge_residual: float
    lipschitz: list[tuple[float, float]]
    lipschitz_spread: float
    equation_tol: float
    lipschitz_tol: float

    @property
    def lipschitz_stable(self) -> bool:
        return self.lipschitz_spread <= self.lipschitz_tol

    @property
    def passed(self) -> bool:
        return (max(self.equation_residual, self.equation_residual_alt) <= self.equation_tol
                and self.lipschitz_stable)

    def to_rows(self) -> list[tuple[str, float, float]]:
        rows = [("equation_residual", self.equation_residual, self.equation_tol),
                ("equation_residual_alt", self.equation_residual_alt, self.equation_tol),
                ("gauge_residual", self.gauge_residual, float("nan"))]
        rows += [(f"lipschitz_delta_{d:g}", c, float("nan")) for d, c in self.lipschitz]
        rows.append(("lipschitz_spread", self.lipschitz_spread, self.lipschitz_tol))
        return rows


def verify(bg: Background, report: SolveReport, e: SymTensorField, opts: SolveOptions | None = None,
           Pi: SplitProjection | None = None, hreport: HypothesisReport | None = None,
           deltas: tuple[float, ...] = (1e-4, 5e-5), equation_tol: float = 1e-9,
           lipschitz_tol: float = 1e-2) -> VerificationRecord:
    """Recheck a solve: both residuals, an independent Ricci path, and a Lipschitz probe of ``e -> h``.

    The alternative equation residual rebuilds ``Ric(g+h)`` from ``Ric(g)``
    plus the connection-difference increment.  The Lipschitz probe re-solves
    at ``(1 + delta) e`` for each ``delta`` and reports
    ``|h((1+delta)e) - h(e)| / |delta e|``; ``lipschitz_spread`` is the
    relative spread of these constants.
    """
    if hreport is None:
        hreport = hypothesis_report(bg)
    if Pi is None:
        Pi = hreport.projection
    h = report.h
    G = perturbed_metric(bg.g, h)
    eq = equation_residual(bg, h, e, Pi)
    ric_alt = bg.ric.values + ricci_increment(bg.g, h).values
    R_alt = np.einsum("...ij,...ij->...", G.inverse, ric_alt)
    ein_alt = ric_alt + (bg.kappa * R_alt)[..., None, None] * G.values + bg.Lambda * G.values
    eq_alt = float(np.max(np.abs(ein_alt - bg.ein_g.values - e.values + 0.5 * _apply_pi(Pi, h))))
    gauge = gauge_residual(bg, h, e, Pi)
    consts = []
    en = e.max_abs()
    if en > 0:
        for d in deltas:
            e2 = SymTensorField(bg.grid, (1 + d) * e.values)
            r2 = newton_solve(bg, e2, opts, report=hreport, h0=h, exploratory=report.exploratory)
            consts.append((d, (r2.h - h).max_abs() / (d * en)))
    cs = np.array([c for _, c in consts])
    spread = float((cs.max() - cs.min()) / max(cs.max(), 1e-300)) if cs.size > 1 else 0.0
    return VerificationRecord(eq, eq_alt, gauge, consts, spread, equation_tol, lipschitz_tol)
