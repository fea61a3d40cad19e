"""Dispatch an :class:`~fnhom.config.ExperimentConfig` and assemble the report."""

from datetime import datetime, timezone
import hashlib
import json
import math
import os

import numpy as np

from . import __version__
from ._backend import BACKEND
from .cell import CellProblem, SolverConfig, solve_cell, uniqueness_probe
from .config import RUN_DEFAULTS
from .errors import (ConfigError, CriterionViolated, EllipticityViolation, GridError,
                     OperatorError, PropertyFailure, SolverError)
from .operators import LinearOperator, check_uniform_ellipticity, oscillation_norms
from .presets import make_datum, make_operator
from .torus import TorusGrid, save_field

EXIT_PASS, EXIT_PROPERTY, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4


def q(value, tol=None):
    """A numeric result together with the tolerance it was checked against."""
    return {"value": value, "tolerance": tol}


def _clean(obj):
    """JSON-safe copy: numpy to python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if obj is None or isinstance(obj, (int, str)):
        return obj
    return str(obj)


def results_hash(results, checks):
    blob = json.dumps(_clean({"results": results, "checks": checks}), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


class Context:
    """Objects shared by every subcommand."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.op = make_operator(cfg.op, cfg.op_params)
        self.n = self.op.dim
        self.grid = TorusGrid(self.n, cfg.res)
        self.f = make_datum(cfg.datum, self.grid, cfg.datum_params)
        self.solver = SolverConfig(**cfg.solver)
        self.results, self.checks, self.files = {}, [], []
        os.makedirs(cfg.out, exist_ok=True)

    def matrix(self, value, default="zero"):
        n = self.n
        if value is None:
            return np.eye(n) if default == "identity" else np.zeros((n, n))
        M = np.asarray(value, dtype=float)
        if M.size == 1:
            M = float(M.ravel()[0]) * np.eye(n)
        if M.shape != (n, n):
            raise ConfigError(f"matrix {value!r} is not {n}x{n}")
        if np.abs(M - M.T).max() > 1e-12 * max(1.0, np.abs(M).max()):
            raise ConfigError(f"matrix {value!r} is not symmetric")
        return M

    def vector(self, value):
        if value is None:
            return np.zeros(self.n)
        v = np.asarray(value, dtype=float).ravel()
        if v.shape != (self.n,):
            raise ConfigError(f"vector {value!r} does not have {self.n} entries")
        return v

    def check(self, name, value, tol, passed, detail=None):
        entry = {"name": name, "value": value, "tolerance": tol, "passed": bool(passed)}
        if detail:
            entry["detail"] = detail
        self.checks.append(entry)

    def path(self, name):
        p = os.path.join(self.cfg.out, name)
        self.files.append(p)
        return p

    def evaluator(self):
        from .homogenized import HbarEvaluator

        return HbarEvaluator(self.op, self.f, self.solver)


# ----------------------------------------------------------- subcommands

def _cell(ctx):
    run = ctx.cfg.run
    A = ctx.matrix(run["A"], "identity")
    prob = CellProblem(ctx.op, A, ctx.f)
    sol = solve_cell(prob, ctx.solver)
    tol = ctx.solver.tol
    ctx.results.update(alpha=q(sol.alpha, tol), residual_sup=q(sol.residual_sup, tol),
                       iterations=q(sol.iterations, 0),
                       sup_v=q(float(np.abs(sol.v.values).max()), None))
    ctx.check("cell residual", sol.residual_sup, tol, sol.converged)
    save_field(ctx.path("corrector.csv"), sol.v)
    if run["uniqueness"]:
        rep = uniqueness_probe(prob, ctx.solver, seeds=(ctx.cfg.seed, ctx.cfg.seed + 1))
        ctx.results["uniqueness"] = rep.to_dict()
        ctx.check("uniqueness", max(rep.alpha_spread, rep.v_spread), rep.tolerance, rep.passed)


def _homogenize(ctx):
    from .homogenized import hbar, hbar_linear_formula, invariant_measure

    A = ctx.matrix(ctx.cfg.run["A"], "identity")
    ev = ctx.evaluator()
    val = hbar(ev, A)
    ctx.results["hbar"] = q(val, ctx.solver.tol)
    if isinstance(ctx.op, LinearOperator):
        m = invariant_measure(ctx.op, ctx.grid, ctx.solver)
        lin, Q = hbar_linear_formula(ctx.op, ctx.f, A, m)
        rel = abs(val - lin) / max(1.0, abs(lin))
        ctx.results.update(hbar_linear_formula=q(lin, 1e-3), relative_gap=q(rel, 1e-3),
                           effective_coefficient=q(Q.tolist(), None),
                           measure_mean=q(m.normalization, 1e-12),
                           measure_min=q(m.positivity_min, 0.0))
        gap = abs(m.normalization - 1.0)
        ctx.check("linear formula", rel, 1e-3, rel <= 1e-3)
        ctx.check("measure mean", gap, 1e-12, gap <= 1e-12)
        ctx.check("measure positive", m.positivity_min, 0.0, m.positivity_min > 0)
        save_field(ctx.path("invariant_measure.csv"), m.m)


def _ellipticity(ctx):
    from .homogenized import check_hbar_ellipticity

    run, seed = ctx.cfg.run, ctx.cfg.seed
    pw = check_uniform_ellipticity(ctx.op, run["pointwise_samples"], seed)
    ctx.results["pointwise"] = pw.to_dict()
    ctx.check("pointwise sandwich", min(pw.lower_margin, pw.upper_margin), pw.slack, pw.passed)
    rep = check_hbar_ellipticity(ctx.evaluator(), run["samples"], seed, run["slack"], run["scale"])
    ctx.results["hbar"] = rep.to_dict()
    ctx.check("hbar sandwich", min(rep.lower_margin, rep.upper_margin), rep.slack, rep.passed,
              rep.witness)


def _concavity(ctx):
    from .homogenized import check_hbar_concavity

    run = ctx.cfg.run
    rep = check_hbar_concavity(ctx.evaluator(), run["samples"], ctx.cfg.seed, run["slack"],
                               run["scale"])
    ctx.results["concavity"] = rep.to_dict()
    ctx.check("hbar concavity", rep.margin, rep.slack, rep.passed, rep.witness)


def _recession(ctx):
    from .homogenized import recession_root, slope_profile

    run = ctx.cfg.run
    ev = ctx.evaluator()
    target = float(ctx.f.values.mean()) if run["target"] is None else float(run["target"])
    base = ctx.matrix(run["base"])
    t = recession_root(ev, target, tuple(run["bracket"]), base=base)
    ts = np.asarray(run["ts"], dtype=float)
    slopes = slope_profile(ev, ts)
    lo, hi = ctx.n * ctx.op.lam, ctx.n * ctx.op.Lam
    slack = 1e-6 + 10 * ctx.solver.tol
    ok = bool(np.all(slopes >= lo - slack) and np.all(slopes <= hi + slack))
    ctx.results.update(target=q(target, None), root=q(t, 1e-8),
                       slopes=q(slopes.tolist(), slack), slope_bounds=q([lo, hi], slack))
    ctx.check("slopes within [n lambda, n Lambda]", [float(slopes.min()), float(slopes.max())],
              slack, ok)
    with open(ctx.path("slopes.csv"), "w") as fh:
        fh.write("t_mid,slope\n")
        for a, b, s in zip(ts[:-1], ts[1:], slopes):
            fh.write(f"{0.5 * (a + b):.17g},{s:.17g}\n")


def _record_oscillation(ctx):
    # the smallness and Holder hypotheses cannot be certified; record the measured values
    rep = oscillation_norms(ctx.op, np.zeros(ctx.n), RUN_DEFAULTS["oscillation"]["radii"],
                            points_per_axis=8, field_res=8)
    d = rep.to_dict()
    d.pop("raw_integrals")
    ctx.results["oscillation"] = d


def _surface_matrix(ctx, ev, base, shift=0.0):
    from .homogenized import recession_root

    t = recession_root(ev, float(ctx.f.values.mean()), base=base)
    return base + (t + shift) * np.eye(ctx.n), t


def _liouville(ctx):
    from .lattice import LatticeDomain
    from .liouville import (BoxProblem, dirichlet_solve, entire_witness, fit_decomposition,
                            second_difference_bound)

    run = ctx.cfg.run
    _record_oscillation(ctx)
    ev = ctx.evaluator()
    A, t = _surface_matrix(ctx, ev, ctx.matrix(run["base"]), run["shift"])
    b = ctx.vector(run["b"])
    ctx.results.update(A=q(A.tolist(), 1e-8), root=q(t, 1e-8))
    dec = entire_witness(ctx.op, ctx.f, A, b, run["c"], ctx.grid, run["R"], ctx.solver,
                         run["tol_existence"], evaluator=ev)
    u = dec.extra["field"]
    ctx.results["witness_residual"] = q(dec.residual_sup, 1e-6)
    ctx.check("witness residual", dec.residual_sup, 1e-6, dec.residual_sup <= 1e-6)
    eps = run["pollution"]
    if eps:
        dom = LatticeDomain.box(run["R"], ctx.grid.res, ctx.n)
        x = dom.points()
        g = u.values.ravel() + eps * np.sin(7 * np.pi * x[:, 0] / run["R"])
        u = dirichlet_solve(BoxProblem(ctx.op, ctx.f, run["R"], g), ctx.solver)
    tol_fit = 1e-4 if eps else 1e-6
    tol_v = 1e-4 if eps else 1e-5
    fit = fit_decomposition(u, ctx.op, ctx.f, ctx.grid, run["margin"], cfg=ctx.solver)
    eA = float(np.linalg.norm(fit.A - A))
    eb = float(np.abs(fit.b - b).max())
    ev_ = float(np.abs(fit.v.values - dec.v.values).max())
    ctx.results.update(fit_A_error=q(eA, tol_fit), fit_b_error=q(eb, tol_fit),
                       fit_v_error=q(ev_, tol_v), fit_residual=q(fit.residual_sup, None))
    ctx.check("fit A", eA, tol_fit, eA <= tol_fit)
    ctx.check("fit b", eb, tol_fit, eb <= tol_fit)
    ctx.check("fit v", ev_, tol_v, ev_ <= tol_v)
    eye = np.eye(ctx.n, dtype=int)
    es = [eye[i] for i in range(ctx.n)] + ([eye[0] + eye[1]] if ctx.n >= 2 else [])
    for e in es:
        # the bound is a property of entire solutions; a polluted box solve
        # is not one, so there it is reported without being checked
        rep = second_difference_bound(u, A, e, margin=run["margin"] if eps else 0)
        key = f"second_difference_{','.join(map(str, e))}"
        ctx.results[key] = rep.to_dict()
        if not eps:
            ctx.check(f"second difference e={e.tolist()}", rep.sup, rep.bound + 1e-8,
                      rep.passed)


def _blowdown(ctx):
    from .liouville import blow_down, entire_witness

    run = ctx.cfg.run
    _record_oscillation(ctx)
    ev = ctx.evaluator()
    A, _ = _surface_matrix(ctx, ev, ctx.matrix(run["base"]))
    b = ctx.vector(run["b"])
    radii = [float(r) for r in run["radii"]]
    R = int(math.ceil(max(radii)))
    dec = entire_witness(ctx.op, ctx.f, A, b, run["c"], ctx.grid, R, ctx.solver, evaluator=ev)
    curve = blow_down(dec.extra["field"], radii, A)
    bound = -1.8 if not np.any(b) else -0.9
    ctx.results.update(curve=curve.to_dict(), order=q(curve.order, bound))
    ctx.check("blow-down order", curve.order, bound, curve.degenerate or curve.order <= bound)
    curve.to_csv(ctx.path("blowdown.csv"))


def _annulus(ctx, run):
    from .exterior import AnnulusProblem, exterior_solve
    from .liouville import Decomposition

    _record_oscillation(ctx)
    ev = ctx.evaluator()
    A, _ = _surface_matrix(ctx, ev, ctx.matrix(run["base"]))
    sol = ev.solve(A)
    far = Decomposition(A, np.zeros(ctx.n), 0.0, sol.v)
    phi_val = float(run["phi"])
    prob = AnnulusProblem(ctx.op, ctx.f, run["r_in"], run["R_out"],
                          lambda x: np.full(len(x), phi_val), far)
    u = exterior_solve(prob, ctx.solver, symmetry=run["symmetry"])
    ctx.results.update(solve_residual=q(u.residual_sup, ctx.solver.tol),
                       octant=q(int(u.octant), 0), nodes=q(int(u.domain.size), 0))
    return u, far


def _exterior(ctx):
    from .exterior import (_profile, barrier_data_bounds, barrier_params, check_barrier,
                           comparison_sandwich)

    run = ctx.cfg.run
    u, far = _annulus(ctx, run)
    sw = comparison_sandwich(u, far, None)
    ctx.results["sandwich"] = sw
    ctx.check("comparison sandwich", sw["max_violation"], sw["slack"], sw["passed"])
    r_in = run["r_in"]
    r0 = run["r0"] if run["r0"] is not None else r_in + 1.0
    rng = np.random.default_rng(ctx.cfg.seed)
    d = rng.standard_normal((512, ctx.n))
    sphere = r0 * d / np.linalg.norm(d, axis=1, keepdims=True)
    outer = float(np.abs(_profile(far, sphere, ctx.grid.res)).max()) + sw["Cbar"]
    data = barrier_data_bounds(ctx.op, ctx.f, abs(float(run["phi"])), run["delta"], outer,
                               res=ctx.grid.res)
    bp = barrier_params(ctx.n, ctx.op.lam, ctx.op.Lam, r_in, r0, data)
    chk = check_barrier(ctx.op, ctx.f, bp, data, r_in, h=1.0 / ctx.grid.res, seed=ctx.cfg.seed)
    ctx.results.update(barrier=bp.to_dict(), barrier_check=chk)
    ctx.check("barrier A_hat strict", bp.margin, 0.0, bp.margin > 0)
    ctx.check("barrier inequalities", min(chk["margin_plus"], chk["margin_minus"],
                                          chk["margin_outer"]), 0.0, chk["passed"])


def _decay(ctx):
    from .exterior import comparison_sandwich, decay_fit, farfield_values

    run = ctx.cfg.run
    u, far = _annulus(ctx, run)
    sw = comparison_sandwich(u, far, None)
    ctx.results["sandwich"] = sw
    ctx.check("comparison sandwich", sw["max_violation"], sw["slack"], sw["passed"])
    w = farfield_values(u, far)
    fit = decay_fit(u, w, run["radii"], slack=run["slack"])
    d = fit.to_dict()
    ctx.results["decay"] = d
    ctx.results["exponent"] = q(fit.exponent, fit.theory + fit.slack)
    ctx.check("decay exponent", fit.exponent, fit.theory + fit.slack, fit.passed)
    fit.to_csv(ctx.path("decay.csv"))


def _oscillation(ctx):
    run = ctx.cfg.run
    x0 = ctx.vector(run["x0"])
    rep = oscillation_norms(ctx.op, x0, run["radii"], run["points_per_axis"])
    ctx.results["oscillation"] = rep.to_dict()
    with open(ctx.path("oscillation.csv"), "w") as fh:
        fh.write("r,local_norm\n")
        for r in rep.radii:
            fh.write(f"{r:.17g},{rep.local_norms[r]:.17g}\n")


DISPATCH = {"cell": _cell, "homogenize": _homogenize, "ellipticity": _ellipticity,
            "concavity": _concavity, "recession": _recession, "liouville": _liouville,
            "blowdown": _blowdown, "exterior": _exterior, "decay": _decay,
            "oscillation": _oscillation}


def run(cfg, timestamp=None):
    """Execute ``cfg``; returns ``(report, exit_code)`` and writes ``report.json``."""
    failure = None
    code = EXIT_PASS
    ctx = None
    try:
        ctx = Context(cfg)
        DISPATCH[cfg.subcommand](ctx)
    except (ConfigError, OperatorError, GridError) as exc:
        failure, code = {"kind": "config", "message": str(exc)}, EXIT_CONFIG
    except PropertyFailure as exc:
        kind = "criterion violated" if isinstance(exc, CriterionViolated) else "property"
        failure = {"kind": kind, "message": str(exc), "witness": _clean(exc.witness)}
        code = EXIT_PROPERTY
    except (SolverError, EllipticityViolation) as exc:
        failure, code = {"kind": "solver", "message": str(exc)}, EXIT_SOLVER
    results = ctx.results if ctx else {}
    checks = ctx.checks if ctx else []
    if code == EXIT_PASS and not all(c["passed"] for c in checks):
        bad = [c for c in checks if not c["passed"]]
        failure = {"kind": "property", "message": f"{len(bad)} check(s) failed",
                   "checks": [c["name"] for c in bad]}
        code = EXIT_PROPERTY
    ts = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    report = _clean({
        "subcommand": cfg.subcommand,
        "passed": code == EXIT_PASS,
        "exit_code": code,
        "config": cfg.to_dict(),
        "results": results,
        "checks": checks,
        "failure": failure,
        "files": ctx.files if ctx else [],
        "provenance": {"version": __version__, "timestamp": ts, "config_hash": cfg.digest(),
                       "backend": BACKEND, "threads": os.environ.get("FNHOM_THREADS", "")},
        "results_hash": results_hash(results, checks),
    })
    if ctx is not None or os.path.isdir(cfg.out):
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return report, code
