"""Command-line entry point: ``eininv --config run.json --output out/``.

Commands: ``identities``, ``spectrum``, ``linearize-check``, ``solve``.
Exit codes: 0 success, 1 a check failed, 2 bad configuration,
3 solve refused (hypotheses fail), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_REFUSED, EXIT_NUMERICAL = 0, 1, 2, 3, 4
THREADS_ENV = "EININV_THREADS"
CSV_VERSION = "1"

FAMILIES = ("constant-conformal", "trig-conformal", "random-smooth")

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command", "grid"],
    "properties": {
        "command": {"enum": ["identities", "spectrum", "linearize-check", "solve"]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "N"],
            "properties": {
                "n": {"enum": [2, 3]},
                "N": {"type": "integer", "minimum": 8},
                "L": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "background": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["flat", "conformal"]},
                "kappa": {"type": "number"},
                "Lambda": {"type": "number"},
                "conformal_amplitude": {"type": "number"},
            },
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "amplitude": {"type": "number"},
                "seed": {"type": "integer"},
                "modes": {"type": "integer", "minimum": 1, "maximum": 8},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_newton": {"type": "integer", "minimum": 1},
                "linear_tol": {"type": "number", "exclusiveMinimum": 0},
                "smallness": {"type": "number", "exclusiveMinimum": 0},
                "damping": {"enum": ["none", "backtracking"]},
                "collision_tol": {"type": "number", "exclusiveMinimum": 0},
                "identity_tol": {"type": "number", "exclusiveMinimum": 0},
                "equation_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "steps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
        "verify_lipschitz": {"type": "boolean"},
        "output": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


def _apply_thread_env() -> None:
    threads = os.environ.get(THREADS_ENV)
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = threads


def load_config(path) -> dict:
    """Parse and validate a JSON run configuration.

    Errors carry the line/column of a JSON syntax error or the path of the
    offending key for schema violations.
    """
    import jsonschema

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: at {where}: {err.message}")
    if cfg["command"] == "solve":
        amp = cfg.get("perturbation", {}).get("amplitude", 1e-3)
        small = cfg.get("tolerances", {}).get("smallness", 1e-2)
        if abs(amp) > small:
            raise ConfigError(f"{path}: at perturbation/amplitude: {amp} exceeds the smallness bound {small}")
    return cfg


# ---------------------------------------------------------------------------
# builders


def build_background(cfg: dict):
    import numpy as np

    from .curvature import Background
    from .grid import GridSpec, ScalarField, construct_metric

    gc = cfg["grid"]
    grid = GridSpec.uniform(gc["n"], gc["N"], gc.get("L", 2 * np.pi))
    bc = cfg.get("background", {})
    if bc.get("kind", "flat") == "conformal":
        x = grid.coordinates()
        a = bc.get("conformal_amplitude", 0.1)
        f = ScalarField(grid, a * np.sin(2 * np.pi * x[0] / grid.periods[0]))
        g = construct_metric(grid, "conformal", f=f)
    else:
        g = construct_metric(grid)
    return Background(g, bc.get("kappa", 0.0), bc.get("Lambda", 1.0))


def build_perturbation(g, spec: dict):
    """Symmetric tensor ``e`` from a named analytic family."""
    import numpy as np

    from .grid import SymTensorField

    grid = g.grid
    n = grid.n
    family = spec.get("family", "constant-conformal")
    amp = float(spec.get("amplitude", 1e-3))
    modes = int(spec.get("modes", 1))
    x = grid.coordinates()
    if family == "constant-conformal":
        return SymTensorField(grid, amp * g.values)
    if family == "trig-conformal":
        s = np.sin(2 * np.pi * modes * x[0] / grid.periods[0])
        return SymTensorField(grid, amp * s[..., None, None] * g.values)
    rng = np.random.default_rng(spec.get("seed", 0))
    vals = np.zeros(grid.shape + (n, n))
    phase = [2 * np.pi * xi / L for xi, L in zip(x, grid.periods)]
    for i in range(n):
        for j in range(i, n):
            comp = np.zeros(grid.shape)
            for k in np.ndindex(*(2 * modes + 1,) * n):
                kk = np.array(k) - modes
                arg = sum(kk[a] * phase[a] for a in range(n))
                c, s = rng.standard_normal(2) / (1.0 + float(kk @ kk))
                comp += c * np.cos(arg) + s * np.sin(arg)
            vals[..., i, j] = vals[..., j, i] = comp
    vals *= amp / np.max(np.abs(vals))
    return SymTensorField(grid, vals)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


# ---------------------------------------------------------------------------
# identity suite


def identity_suite(bg, tol: float = 1e-12) -> list[tuple[str, float, float, bool]]:
    """Exact algebraic and naturality identities as ``(name, value, tolerance, passed)``."""
    import numpy as np

    from .curvature import (
        Background, curvature_symmetry_defects, kn_ein, kn_trace, r13_defects, riemann_christoffel,
        riemann_ricci_scalar,
    )
    from .grid import MetricField, SymTensorField, trace_and_split
    from .operators import lichnerowicz, rough_laplacian

    g = bg.g
    n = bg.n
    rows = []
    scale = max(1.0, bg.riem.max_abs(), bg.ein_g.max_abs())
    for name, v in curvature_symmetry_defects(bg.riem).items():
        rows.append((f"Riem {name}", v, tol * scale))
    for a in (0.0, 0.5, -0.3):
        E4, _, _ = kn_ein(bg, a)
        s = max(scale, E4.max_abs())
        tr = kn_trace(g, E4).values
        rows.append((f"KN trace a={a:g}", float(np.max(np.abs(tr - (a * (n - 2) + 1) * bg.ein_g.values))), tol * s))
        for name, v in r13_defects(riemann_christoffel(bg, a)).items():
            rows.append((f"R13 {name} a={a:g}", v, tol * s))
    x = g.grid.coordinates()
    h = SymTensorField(g.grid, np.stack([np.stack([np.sin(x[0] + i) * np.cos(x[-1] * (j + 1)) + (i == j)
                                                   for j in range(n)], -1) for i in range(n)], -2))
    trf, _, h0 = trace_and_split(g, h)
    recon = (trf.values / n)[..., None, None] * g.values + h0.values
    hs = max(1.0, h.max_abs())
    rows.append(("trace-free split reconstruction", float(np.max(np.abs(recon - h.values))), 1e-13 * hs))
    rows.append(("trace-free part traceless", float(np.max(np.abs(
        np.einsum("...ij,...ij->...", g.inverse, h0.values)))), 1e-13 * hs))
    shift = tuple(range(1, n + 1))
    gs = MetricField(g.grid, g.roll(shift).values)
    riem_s, ric_s, _ = riemann_ricci_scalar(gs)
    rows.append(("translation: Riem", float(np.max(np.abs(riem_s.values - bg.riem.roll(shift).values))),
                 1e-13 * scale))
    bgs = Background(gs, bg.kappa, bg.Lambda)
    rows.append(("translation: Ein", float(np.max(np.abs(bgs.ein_g.values - bg.ein_g.roll(shift).values))),
                 1e-13 * scale))
    lap = rough_laplacian(gs, h.roll(shift)).values - rough_laplacian(g, h).roll(shift).values
    lapl = lichnerowicz(gs, h.roll(shift)).values - lichnerowicz(g, h).roll(shift).values
    rows.append(("translation: rough Laplacian", float(np.max(np.abs(lap))), 1e-13 * scale * hs))
    rows.append(("translation: Lichnerowicz", float(np.max(np.abs(lapl))), 1e-13 * scale * hs))
    return [(nm, float(v), float(t), bool(v <= t)) for nm, v, t in rows]


# ---------------------------------------------------------------------------
# commands


def cmd_identities(cfg, out: Path, args) -> int:
    bg = build_background(cfg)
    rows = identity_suite(bg, cfg.get("tolerances", {}).get("identity_tol", 1e-12))
    _write_rows(out / "identities.csv", ["check", "value", "tolerance", "passed"], rows)
    for name, v, t, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<36} {v:.3e}  (tol {t:.3e})")
    return EXIT_OK if all(r[3] for r in rows) else EXIT_CHECK_FAILED


def _report(cfg):
    from .spectral import COLLISION_TOL, hypothesis_report

    bg = build_background(cfg)
    tol = cfg.get("tolerances", {}).get("collision_tol", COLLISION_TOL)
    return bg, hypothesis_report(bg, collision_tol=tol)


def _write_report(rep, out: Path) -> None:
    (out / "spectrum.txt").write_text(rep.to_text())
    rep.to_csv(out / "spectrum.csv")
    _write_rows(out / "checks.csv", ["check", "passed", "value", "tolerance", "failure"],
                [(c.name, c.passed, float(c.value), float(c.tolerance), c.failure) for c in rep.checks])
    (out / "verdict.json").write_text(json.dumps(rep.to_dict(), indent=2, default=float) + "\n")


def cmd_spectrum(cfg, out: Path, args) -> int:
    _, rep = _report(cfg)
    _write_report(rep, out)
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def linearization_table(bg, v, steps=(1e-4, 1e-5), floor_step: float = 1e-4):
    """Forward-difference errors of ``F`` against :func:`linearized_F0` along ``v``.

    The discretization floor (difference between the exact discrete
    derivative and the analytic formula) is estimated by a central
    difference at ``floor_step`` and subtracted, leaving the ``O(t)`` part.
    Returns rows ``(part, t, raw_error, corrected_error, ratio)``.
    """
    import numpy as np

    from .grid import ScalarField, SymTensorField, trace_and_split
    from .solver import linearized_F0, residual_F

    g = bg.g
    n = bg.n
    zero = SymTensorField(g.grid, np.zeros_like(v.values))
    trf, _, h0 = trace_and_split(g, v)
    u = ScalarField(g.grid, trf.values / n)
    parts = {
        "trace": (SymTensorField(g.grid, u.values[..., None, None] * g.values),
                  linearized_F0(bg, u, zero, None)),
        "tracefree": (h0, linearized_F0(bg, ScalarField(g.grid, np.zeros(g.grid.shape)), h0, None)),
    }
    F0 = residual_F(bg, zero, zero).values
    rows = []
    for name, (w, lin) in parts.items():
        if w.max_abs() == 0:
            continue
        s = floor_step
        central = (residual_F(bg, w * s, zero).values - residual_F(bg, w * (-s), zero).values) / (2 * s)
        prev = None
        for t in steps:
            fwd = (residual_F(bg, w * t, zero).values - F0) / t
            raw = float(np.max(np.abs(fwd - lin.values)))
            corr = float(np.max(np.abs(fwd - central)))
            ratio = prev / corr if prev is not None and corr > 0 else float("nan")
            rows.append((name, t, raw, corr, ratio))
            prev = corr
    return rows


def cmd_linearize(cfg, out: Path, args) -> int:
    import numpy as np

    bg = build_background(cfg)
    spec = dict(cfg.get("perturbation", {"family": "random-smooth", "seed": 0}))
    spec["amplitude"] = 1.0
    v = build_perturbation(bg.g, spec)
    steps = tuple(cfg.get("steps", (1e-4, 1e-5)))
    rows = linearization_table(bg, v, steps)
    lo, hi = 0.8 * steps[0] / steps[1], 1.2 * steps[0] / steps[1]
    table = []
    ok = True
    for name, t, raw, corr, ratio in rows:
        if np.isnan(ratio):
            passed = ""
        else:
            # an exactly linear direction leaves only rounding noise
            passed = bool(lo <= ratio <= hi) or corr <= 1e-9
            ok &= passed
        table.append((name, t, raw, corr, ratio, lo, hi, passed))
        print(f"{name:<10} t={t:.1e}  error={raw:.3e}  floor-corrected={corr:.3e}  ratio={ratio:.3f}  "
              f"(accepted ratio [{lo:g}, {hi:g}])")
    _write_rows(out / "linearize.csv",
                ["part", "t", "error", "corrected_error", "ratio", "ratio_low", "ratio_high", "passed"], table)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_solve(cfg, out: Path, args) -> int:
    from .grid import export_csv, save_field
    from .solver import NewtonDivergenceError, NotLicensedError, SolveOptions, newton_solve, verify

    bg, rep = _report(cfg)
    _write_report(rep, out)
    if not rep.licensed and not args.exploratory:
        msg = f"refused: {rep.verdict}"
        (out / "refusal.json").write_text(json.dumps({"refused": True, "verdict": rep.verdict,
                                                       "failures": rep.failures}, indent=2) + "\n")
        print(msg, file=sys.stderr)
        return EXIT_REFUSED
    tc = cfg.get("tolerances", {})
    opts = SolveOptions(**{k: tc[k] for k in ("newton_tol", "max_newton", "linear_tol", "smallness", "damping")
                           if k in tc})
    e = build_perturbation(bg.g, cfg.get("perturbation", {}))
    try:
        sol = newton_solve(bg, e, opts, report=rep, exploratory=args.exploratory)
        deltas = (1e-4, 5e-5) if cfg.get("verify_lipschitz", True) else ()
        rec = verify(bg, sol, e, opts, hreport=rep, deltas=deltas, equation_tol=tc.get("equation_tol", 1e-9))
    except (NotLicensedError, NewtonDivergenceError, ValueError) as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    (out / "solve_summary.txt").write_text(sol.summary_text())
    sol.write_history_csv(out / "residual_history.csv")
    _write_rows(out / "verification.csv", ["quantity", "value", "tolerance"], rec.to_rows())
    save_field(out / "h.eifld", sol.h)
    export_csv(out / "h.csv", sol.h)
    sys.stdout.write(sol.summary_text())
    print(f"verification: {'passed' if rec.passed else 'FAILED'}")
    return EXIT_OK if sol.converged and rec.passed else EXIT_CHECK_FAILED


COMMANDS = {
    "identities": cmd_identities,
    "spectrum": cmd_spectrum,
    "linearize-check": cmd_linearize,
    "solve": cmd_solve,
}


def run(cfg: dict, output, exploratory: bool = False) -> int:
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    args = argparse.Namespace(exploratory=exploratory)
    return COMMANDS[cfg["command"]](cfg, out, args)


def main(argv=None) -> int:
    _apply_thread_env()
    parser = argparse.ArgumentParser(prog="eininv", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--output", default=None, help="output directory (overrides config 'output')")
    parser.add_argument("--exploratory", action="store_true",
                        help="run a solve even when the hypothesis report does not license it")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    output = args.output or cfg.get("output") or "eininv-output"
    try:
        return run(cfg, output, args.exploratory)
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
