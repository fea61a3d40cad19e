"""Entire solutions ``u = x^T A x/2 + b.x + c + v`` on large periodic boxes.

Boxes are ``[-R, R]^n`` with R a whole number of periods, sampled on the
cell-centred lattice of :mod:`fnhom.lattice`, so period shifts are exact
node shifts by ``res`` and every periodic quantity is read off the torus.
"""

from dataclasses import dataclass, field

import numpy as np

from .cell import SolverConfig
from .dirichlet import DomainScheme, solve_dirichlet
from .errors import CriterionViolated, GridError
from .homogenized import HbarEvaluator
from .lattice import LatticeDomain
from .torus import TorusField, TorusGrid


@dataclass
class BoxField:
    domain: LatticeDomain
    values: np.ndarray  # shape == domain.shape
    residual_sup: float = float("nan")

    @property
    def R(self):
        return -self.domain.kmin[0] / self.domain.res

    @property
    def flat(self):
        return self.values.ravel()


@dataclass
class BoxProblem:
    op: object
    f_periodic: TorusField
    R: float
    boundary: object  # callable(points) -> values, or array over the box nodes
    res_per_cell: int = None

    def __post_init__(self):
        if self.res_per_cell is None:
            self.res_per_cell = self.f_periodic.grid.res
        if self.res_per_cell != self.f_periodic.grid.res:
            raise GridError("datum grid does not match res_per_cell")
        if abs(self.R - round(self.R)) > 1e-12:
            raise GridError("box half-width must be a whole number of periods")


@dataclass
class Decomposition:
    A: np.ndarray
    b: np.ndarray
    c: float
    v: TorusField
    residual_sup: float = 0.0
    ok: bool = True
    message: str = ""
    extra: dict = field(default_factory=dict)

    def evaluate(self, domain):
        """The profile on the nodes of ``domain``, shape ``domain.shape``."""
        x = domain.points()
        quad = 0.5 * np.einsum("ki,ij,kj->k", x, self.A, x)
        vals = quad + x @ self.b + self.c + self.v.flat[domain.torus_index()]
        return vals.reshape(domain.shape)

    def to_dict(self):
        return {"A": np.asarray(self.A).tolist(), "b": np.asarray(self.b).tolist(),
                "c": float(self.c), "v_sup": float(np.abs(self.v.values).max()),
                "residual_sup": float(self.residual_sup), "ok": self.ok,
                "message": self.message, **self.extra}


def active_box(domain, width):
    """Mask of nodes at least ``width`` nodes away from every face."""
    mask = np.ones(domain.shape, dtype=bool)
    for a, s in enumerate(domain.shape):
        idx = [slice(None)] * domain.dim
        idx[a] = slice(0, width)
        mask[tuple(idx)] = False
        idx[a] = slice(s - width, None)
        mask[tuple(idx)] = False
    return mask


def box_scheme(op, domain, cfg=None, disc=None):
    cfg = cfg or SolverConfig()
    from .scheme import discretize
    from .torus import direction_set

    dirs = direction_set(cfg.directions, op.dim)
    disc = disc or discretize(op, TorusGrid(op.dim, domain.res), dirs)
    width = disc.directions.width
    return DomainScheme(op, domain, active_box(domain, width), disc=disc)


def dirichlet_solve(problem, cfg=None, scheme=None):
    """Monotone-scheme solution of ``F(D^2u, x) = f`` on ``[-R, R]^n``."""
    cfg = cfg or SolverConfig()
    dom = LatticeDomain.box(problem.R, problem.res_per_cell, problem.op.dim)
    sch = scheme or box_scheme(problem.op, dom, cfg)
    bnd = problem.boundary
    g = np.asarray(bnd(dom.points()) if callable(bnd) else bnd, dtype=float).ravel()
    if g.shape != (dom.size,) or not np.all(np.isfinite(g[~sch.active])):
        raise GridError("boundary data must be finite and match the box nodes")
    f_rows = problem.f_periodic.flat[sch.tidx[sch.rows]]
    out = solve_dirichlet(sch, g, f_rows, cfg)
    return BoxField(dom, out.u.reshape(dom.shape), out.residual_sup)


def entire_witness(op, f, A, b=None, c=0.0, grid=None, R=2, cfg=None, tol_existence=1e-6,
                   evaluator=None):
    """Build ``u = x^T A x/2 + b.x + c + v_A`` and verify it on a box of half-width R.

    Raises :class:`CriterionViolated` when ``|F̄(A) - <f>| > tol_existence``.
    The returned decomposition's ``residual_sup`` is the interior scheme
    residual of u; ``extra["field"]`` holds the sampled box field.
    """
    cfg = cfg or SolverConfig()
    grid = grid or f.grid
    n = op.dim
    A = np.asarray(A, dtype=float).reshape(n, n)
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float).reshape(n)
    ev = evaluator or HbarEvaluator(op, f, cfg)
    sol = ev.solve(A)
    mean_f = float(f.values.mean())
    gap = sol.alpha - mean_f
    if abs(gap) > tol_existence:
        raise CriterionViolated(
            f"criterion violated: F̄(A) = {sol.alpha:.10g} but <f> = {mean_f:.10g}",
            {"hbar": sol.alpha, "mean_f": mean_f, "gap": gap})
    dec = Decomposition(A, b, float(c), sol.v)
    dom = LatticeDomain.box(R, grid.res, n)
    u = dec.evaluate(dom)
    sch = box_scheme(op, dom, cfg, disc=ev.scheme.disc)
    f_rows = f.flat[sch.tidx[sch.rows]]
    dec.residual_sup = sch.residual(u, f_rows)
    dec.extra.update(hbar=sol.alpha, mean_f=mean_f, cell_residual=sol.residual_sup)
    dec.extra["field"] = BoxField(dom, u, dec.residual_sup)
    return dec


# ----------------------------------------------------------------- blow-down

@dataclass
class BlowDownCurve:
    radii: list
    errors: list
    order: float
    degenerate: bool

    def to_dict(self):
        return {"radii": list(self.radii), "errors": list(self.errors),
                "order": self.order, "degenerate": self.degenerate}

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("R,sup_error\n")
            for r, e in zip(self.radii, self.errors):
                fh.write(f"{r:.17g},{e:.17g}\n")


def loglog_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def blow_down(u, radii, A):
    """``e(R_i) = sup_{|x|<=1} |u(R_i x)/R_i^2 - x^T A x/2|`` on the box nodes."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    if radii[-1] > u.R + 1e-12:
        raise ValueError(f"radius {radii[-1]} exceeds box half-width {u.R}")
    x = u.domain.points()
    r = np.linalg.norm(x, axis=1)
    dev = np.abs(u.flat - 0.5 * np.einsum("ki,ij,kj->k", x, np.asarray(A, float), x))
    errs = [float(dev[r <= Ri].max() / Ri ** 2) for Ri in radii]
    if min(errs) <= 0.0:
        return BlowDownCurve(radii, errs, float("-inf"), True)
    return BlowDownCurve(radii, errs, loglog_slope(radii, errs), False)


# ------------------------------------------------------ difference quotients

def _shifted(vals, shift):
    """Views ``(u(x+s), u(x-s), u(x))`` on the region where both shifts fit."""
    lo = [max(0, abs(s)) for s in shift]
    n = vals.ndim
    def sl(off):
        return tuple(slice(lo[a] + off[a], vals.shape[a] - lo[a] + off[a]) for a in range(n))
    return vals[sl(shift)], vals[sl([-s for s in shift])], vals[sl([0] * n)]


def period_second_difference(u, e):
    """Δ²_e u on the nodes where ``x +- e`` stay in the box (e in periods)."""
    e = np.asarray(e, dtype=np.int64)
    if not e.any():
        raise GridError("degenerate direction")
    shift = list(e * u.domain.res)
    up, um, u0 = _shifted(u.values, shift)
    return (up + um - 2.0 * u0) / float(e @ e), shift


@dataclass
class SecondDifferenceReport:
    e: list
    bound: float
    sup: float
    passed: bool
    gap: float
    growth: list

    def to_dict(self):
        return dict(e=self.e, bound=self.bound, sup=self.sup, passed=self.passed,
                    gap=self.gap, growth=self.growth)


def second_difference_bound(u, A, e, tol=1e-8, margin=0):
    """Check ``sup Δ²_e u <= e^T A e/|e|^2 + tol`` over the box interior.

    ``margin`` (periods) trims that many periods off every face first.
    ``growth`` lists the sup over nested sub-boxes of increasing size.
    """
    e = np.asarray(e, dtype=np.int64)
    A = np.asarray(A, dtype=float)
    bound = float(e @ A @ e / (e @ e))
    d2, shift = period_second_difference(u, e)
    res = u.domain.res
    m = int(margin) * res
    if m:
        d2 = d2[tuple(slice(m, s - m) for s in d2.shape)]
    if d2.size == 0:
        raise GridError("box too small for this lattice vector and margin")
    sup = float(d2.max())
    growth = []
    c = [s // 2 for s in d2.shape]
    half = res
    while True:
        sub = d2[tuple(slice(max(0, ci - half), ci + half) for ci in c)]
        growth.append(float(sub.max()))
        if all(2 * half >= s for s in d2.shape):
            break
        half *= 2
    return SecondDifferenceReport(e.tolist(), bound, sup, bool(sup <= bound + tol),
                                  float(bound - sup), growth)


# ------------------------------------------------------------ decomposition

def fit_decomposition(u, op=None, f=None, grid=None, margin=2, threshold=1e-6, cfg=None):
    """Recover ``(A, b, c, v)`` from a box field.

    A comes from period-lattice second differences, b from period first
    differences, and v from folding ``u - x^T A x/2 - b.x`` over the
    interior periods; c is the mean of the fold. Only nodes at least
    ``margin`` periods inside the box are used. A residual above
    ``threshold`` sets ``ok=False`` (diagnostic, not an exception).
    """
    dom = u.domain
    n, res = dom.dim, dom.res
    R = int(round(u.R))
    if R - margin < 1:
        raise GridError("margin leaves no interior periods")
    grid = grid or TorusGrid(n, res)
    m = margin * res
    inner = tuple(slice(m, s - m) for s in dom.shape)

    def interior_mean(vals, shift):
        # vals is trimmed by |shift| per side; keep nodes >= max(m, |shift|) from each face
        sl = tuple(slice(max(m, abs(t)) - abs(t), sz - max(m, abs(t)) - abs(t))
                   for sz, t in zip(dom.shape, shift))
        sub = vals[sl]
        if sub.size == 0:
            raise GridError("interior too small for the fit")
        return float(sub.mean())

    A = np.zeros((n, n))
    eye = np.eye(n, dtype=np.int64)
    for i in range(n):
        d2, sh = period_second_difference(u, eye[i])
        A[i, i] = interior_mean(d2, sh)
    for i in range(n):
        for j in range(i + 1, n):
            d2, sh = period_second_difference(u, eye[i] + eye[j])
            A[i, j] = A[j, i] = (2.0 * interior_mean(d2, sh) - A[i, i] - A[j, j]) / 2.0
    x = dom.points()
    X = [x[:, a].reshape(dom.shape) for a in range(n)]
    b = np.zeros(n)
    for k in range(n):
        shift = [0] * n
        shift[k] = res
        up, _, u0 = _shifted(u.values, shift)
        Xs = [_shifted(X[a], shift)[2] for a in range(n)]
        Ax_k = sum(A[k, a] * Xs[a] for a in range(n))
        # u(x+e_k) - u(x) = (Ax)_k + A_kk/2 + b_k for quadratic plus periodic u
        b[k] = interior_mean(up - u0 - Ax_k - 0.5 * A[k, k], shift)
    quad = 0.5 * np.einsum("ki,ij,kj->k", x, A, x).reshape(dom.shape)
    lin = sum(b[a] * X[a] for a in range(n))
    rem = (u.values - quad - lin)[inner].ravel()
    tidx = dom.torus_index().reshape(dom.shape)[inner].ravel()
    counts = np.bincount(tidx, minlength=grid.size)
    if np.any(counts == 0):
        raise GridError("interior does not cover a full period")
    fold = np.bincount(tidx, weights=rem, minlength=grid.size) / counts
    c = float(fold.mean())
    vf = TorusField(grid, (fold - c).reshape(grid.shape) - (fold - c).mean(), zero_mean=True)
    dec = Decomposition(A, b, c, vf)
    prof = dec.evaluate(dom)
    dec.residual_sup = float(np.abs(u.values - prof)[inner].max())
    dec.ok = dec.residual_sup <= threshold
    dec.message = "" if dec.ok else (
        f"decomposition failed: residual {dec.residual_sup:.3e} > {threshold:.1e}")
    if op is not None and f is not None:
        small = LatticeDomain.box(2, res, n)
        sch = box_scheme(op, small, cfg)
        f_rows = f.flat[sch.tidx[sch.rows]]
        dec.extra["pde_residual"] = sch.residual(dec.evaluate(small), f_rows)
    return dec
