"""Exterior Dirichlet problems around a ball and far-field decay.

The computational domain is the Cartesian node set of ``{r_in < |x| < R_out}``
with the ball staircased: nodes with ``|x| <= r_in`` hold ``phi`` at their
radial projection, nodes with ``|x| >= R_out`` hold the far-field profile
``w``. When operator, datum and data are even in every axis the solve runs
on one octant with mirrored neighbours.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .cell import SolverConfig
from .dirichlet import DomainScheme, solve_dirichlet
from .errors import DecompositionFailed, GridError, OperatorError, SolverError
from .lattice import LatticeDomain
from .liouville import Decomposition, loglog_slope
from .operators import eval_pucci
from .scheme import discretize
from .torus import TorusGrid, direction_set


def decay_exponent(n, lam, Lam):
    """Fundamental-solution exponent ``1 - (n-1) lam/Lam``."""
    return 1.0 - (n - 1) * lam / Lam


# ------------------------------------------------------------------ barriers

@dataclass
class BarrierParams:
    A_hat: float
    B_hat: float
    rho: float
    r0: float
    center: tuple
    lower_bounds: dict = field(default_factory=dict)
    margin: float = 0.0

    def to_dict(self):
        return {"A_hat": self.A_hat, "B_hat": self.B_hat, "rho": self.rho, "r0": self.r0,
                "center": list(self.center), "lower_bounds": dict(self.lower_bounds),
                "A_hat_margin": self.margin}

    def value(self, x, sign=1):
        """``+-B(exp(-A rho^2) - exp(-A |x-z|^2))``."""
        d2 = np.sum((np.atleast_2d(x) - np.asarray(self.center)) ** 2, axis=1)
        return sign * self.B_hat * (np.exp(-self.A_hat * self.rho ** 2)
                                    - np.exp(-self.A_hat * d2))

    def hessian(self, x, sign=1):
        """Exact Hessian of the barrier, shape (N, n, n)."""
        y = np.atleast_2d(x) - np.asarray(self.center)
        n = y.shape[1]
        e = np.exp(-self.A_hat * np.sum(y * y, axis=1))
        H = 2 * self.A_hat * np.eye(n)[None] - 4 * self.A_hat ** 2 * y[:, :, None] * y[:, None, :]
        return sign * self.B_hat * e[:, None, None] * H


def barrier_params(n, lam, Lam, rho, r0, data_bounds, center=None, factor=1.1):
    """Barrier constants for the boundary-continuity argument at a ball.

    ``A_hat = factor * n Lam / (2 lam rho^2)``. ``B_hat`` is the least value
    meeting the three displayed constraints, with ``k = 2 exp(-4 A r0^2) A
    (2 A lam rho^2 - n Lam)``:

    * ``F(kappa I, x) - k B <= inf f`` for all x,
    * ``F(-kappa I, x) + k B >= sup f`` for all x,
    * ``B (exp(-A rho^2) - exp(-A (rho+1)^2)) >= sup_{|x|=r0} (|w| + C̄)``,

    where ``kappa = 4 sup|phi| / delta^2``. ``data_bounds`` supplies
    ``F_plus = sup_x F(kappa I, x)``, ``F_minus = inf_x F(-kappa I, x)``,
    ``inf_f``, ``sup_f`` and ``outer = sup(|w| + C̄)``.
    """
    if rho <= 0:
        raise OperatorError("rho must be positive")
    if lam > Lam:
        raise OperatorError("lambda exceeds Lambda")
    if factor <= 1:
        raise OperatorError("factor must exceed 1 for strict admissibility")
    A = factor * n * Lam / (2 * lam * rho ** 2)
    k = 2 * math.exp(-4 * A * r0 ** 2) * A * (2 * A * lam * rho ** 2 - n * Lam)
    gap = math.exp(-A * rho ** 2) - math.exp(-A * (rho + 1) ** 2)
    d = data_bounds
    need_pm = max(d["F_plus"] - d["inf_f"], d["sup_f"] - d["F_minus"], 0.0)
    if need_pm > 0 and not k > 0:
        raise SolverError(f"infeasible B_hat: residual constraint needs {need_pm:.3e} "
                          f"but the barrier gain underflows (k={k:.3e})")
    if d["outer"] > 0 and not gap > 0:
        raise SolverError("infeasible B_hat: outer-boundary constraint has zero gain")
    lb = {
        "residual_plus": (d["F_plus"] - d["inf_f"]) / k if k > 0 else 0.0,
        "residual_minus": (d["sup_f"] - d["F_minus"]) / k if k > 0 else 0.0,
        "outer": d["outer"] / gap if gap > 0 else 0.0,
    }
    B = max(0.0, *lb.values())
    if not math.isfinite(B):
        raise SolverError(f"infeasible B_hat (lower bounds {lb})")
    center = tuple(np.zeros(n) if center is None else np.asarray(center, float))
    return BarrierParams(A, B, float(rho), float(r0), center, lb,
                         A - n * Lam / (2 * lam * rho ** 2))


def barrier_data_bounds(op, f, phi_sup, delta, outer, res=16):
    """Evaluate the data terms of :func:`barrier_params` on torus nodes."""
    grid = TorusGrid(op.dim, res)
    x = grid.points()
    kappa = 4.0 * phi_sup / delta ** 2
    I = np.eye(op.dim)
    Fp = np.asarray(op(np.broadcast_to(kappa * I, (len(x), op.dim, op.dim)), x))
    Fm = np.asarray(op(np.broadcast_to(-kappa * I, (len(x), op.dim, op.dim)), x))
    fv = f.values
    return {"F_plus": float(Fp.max()), "F_minus": float(Fm.min()), "inf_f": float(fv.min()),
            "sup_f": float(fv.max()), "outer": float(outer), "kappa": kappa}


def check_barrier(op, f, params, data, r_in, h=1 / 16, contacts=8, seed=0):
    """Evaluate both residual inequalities and the outer domination at nodes.

    Collar nodes are lattice points with ``r_in <= |x| <= r0``. Contact
    points are spread over the inner sphere; for a ball of radius ``rho``
    touching at ``x0`` the centre is ``x0 (r_in - rho)/r_in``.
    """
    n = op.dim
    if params.r0 < r_in + 1:
        raise GridError("r0 must be at least r_in + 1")
    k = int(math.ceil(params.r0 / h))
    ax = (np.arange(-k, k) + 0.5) * h
    X = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    r = np.linalg.norm(X, axis=1)
    collar = X[(r >= r_in) & (r <= params.r0)]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((contacts, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    kappa = data["kappa"]
    I = np.eye(n)
    Fp = np.asarray(op(np.broadcast_to(kappa * I, (len(collar), n, n)), collar))
    Fm = np.asarray(op(np.broadcast_to(-kappa * I, (len(collar), n, n)), collar))
    inf_f, sup_f = data["inf_f"], data["sup_f"]
    worst_plus = worst_minus = worst_outer = np.inf
    shell = np.linalg.norm(X, axis=1)
    outer_nodes = X[np.abs(shell - params.r0) <= h]
    for d in dirs:
        z = d * r_in * (r_in - params.rho) / r_in
        p = BarrierParams(params.A_hat, params.B_hat, params.rho, params.r0, tuple(z))
        H = p.hessian(collar)
        plus = Fp + eval_pucci(1, H, op.lam, op.Lam)
        minus = Fm + eval_pucci(-1, -H, op.lam, op.Lam)
        worst_plus = min(worst_plus, float((inf_f - plus).min()))
        worst_minus = min(worst_minus, float((minus - sup_f).min()))
        if len(outer_nodes):
            worst_outer = min(worst_outer, float((p.value(outer_nodes) - data["outer"]).min()))
    # roundoff allowance relative to the size of the compared terms
    scale = 1e-10 * max(1.0, abs(kappa) * n * op.Lam, abs(inf_f), abs(sup_f), data["outer"])
    ok = worst_plus >= -scale and worst_minus >= -scale and worst_outer >= -scale
    return {"passed": bool(ok), "collar_nodes": int(len(collar)),
            "outer_nodes": int(len(outer_nodes)), "margin_plus": worst_plus,
            "margin_minus": worst_minus, "margin_outer": worst_outer,
            "A_hat_margin": params.margin}


# ------------------------------------------------------------ annulus solve

@dataclass
class AnnulusProblem:
    op: object
    f_periodic: object  # TorusField on the solve lattice (res = 1/h)
    r_in: float
    R_out: float
    phi: object  # callable(points) -> values on the inner sphere
    farfield: Decomposition
    rho: float = None

    def __post_init__(self):
        if self.rho is None:
            self.rho = self.r_in
        if not self.r_in >= self.rho > 0:
            raise GridError("need r_in >= rho > 0")
        if self.R_out < 4 * self.r_in:
            raise GridError("need R_out >= 4 r_in")


@dataclass
class AnnulusField:
    domain: LatticeDomain
    values: np.ndarray  # flat over domain nodes
    active: np.ndarray
    radius: np.ndarray
    r_in: float
    R_out: float
    residual_sup: float = float("nan")
    iterations: int = 0
    octant: bool = False
    scheme: object = field(default=None, repr=False)

    @property
    def h(self):
        return self.domain.h

    def points(self):
        return self.domain.points()


def _reflection_perm(offsets, axis):
    refl = offsets.copy()
    refl[:, axis] *= -1
    perm = np.empty(len(offsets), dtype=np.int64)
    for k, xi in enumerate(refl):
        hit = np.flatnonzero(np.all(offsets == xi, axis=1) | np.all(offsets == -xi, axis=1))
        if not len(hit):
            return None
        perm[k] = hit[0]
    return perm


def scheme_is_even(disc, f, tol=1e-13):
    """True when weights and datum are invariant under every axis reflection."""
    grid = f.grid
    n = grid.dim
    idx = np.arange(grid.size).reshape(grid.shape)
    for a in range(n):
        ridx = np.flip(idx, axis=a).ravel()
        perm = _reflection_perm(disc.directions.offsets, a)
        if perm is None:
            return False
        W = disc.W
        if np.abs(W[:, ridx][:, :, perm] - W).max() > tol * max(1.0, np.abs(W).max()):
            return False
        if np.abs(f.flat[ridx] - f.flat).max() > tol * max(1.0, np.abs(f.flat).max()):
            return False
    return True


def _even_data(fn, dom, samples=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(samples, dom.dim)) * dom.kmax[0] * dom.h
    base = fn(x)
    for a in range(dom.dim):
        y = x.copy()
        y[:, a] *= -1
        if np.abs(fn(y) - base).max() > 1e-12 * max(1.0, np.abs(base).max()):
            return False
    return True


def exterior_solve(problem, cfg=None, symmetry="auto"):
    """Monotone-scheme solution on the staircased annulus ``r_in < |x| < R_out``."""
    cfg = cfg or SolverConfig()
    op, f = problem.op, problem.f_periodic
    res = f.grid.res
    n = op.dim
    h = 1.0 / res
    if problem.r_in < 2 * h:
        raise GridError("inner boundary too thin for the grid")
    dirs = direction_set(cfg.directions, n)
    disc = discretize(op, f.grid, dirs)
    width = disc.directions.width
    K = int(math.ceil(problem.R_out * res)) + width
    w = problem.farfield
    wfun = lambda x: _profile(w, x, res)  # noqa: E731
    octant = False
    if symmetry in ("auto", "octant"):
        probe = LatticeDomain(res, (-K,) * n, (K - 1,) * n)
        octant = (scheme_is_even(disc, f) and _even_data(problem.phi, probe)
                  and _even_data(wfun, probe))
        if symmetry == "octant" and not octant:
            raise GridError("octant symmetry requested but the problem is not even")
    if octant:
        dom = LatticeDomain(res, (0,) * n, (K - 1,) * n, mirror=(True,) * n)
    else:
        dom = LatticeDomain(res, (-K,) * n, (K - 1,) * n)
    x = dom.points()
    r = np.linalg.norm(x, axis=1)
    active = (r > problem.r_in) & (r < problem.R_out)
    sch = DomainScheme(op, dom, active, disc=disc)
    g = np.empty(dom.size)
    inner = r <= problem.r_in
    outer = ~inner & ~active
    proj = x[inner] * (problem.r_in / np.maximum(r[inner], 1e-300))[:, None]
    g[inner] = problem.phi(proj)
    g[outer] = wfun(x[outer])
    g[active] = wfun(x[active])
    f_rows = f.flat[sch.tidx[sch.rows]]
    sch.f_rows = f_rows
    out = solve_dirichlet(sch, g, f_rows, cfg)
    return AnnulusField(dom, out.u, active, r, problem.r_in, problem.R_out, out.residual_sup,
                        out.iterations, octant, sch)


def _profile(dec, x, res):
    """Far-field profile at lattice points ``x`` (torus lookup for v)."""
    x = np.atleast_2d(x)
    quad = 0.5 * np.einsum("ki,ij,kj->k", x, dec.A, x)
    i = np.floor((x + 0.5) * res + 1e-9).astype(np.int64) % res
    flat = np.ravel_multi_index(tuple(i.T), (res,) * x.shape[1])
    return quad + x @ dec.b + dec.c + dec.v.flat[flat]


def farfield_values(u, dec):
    return _profile(dec, u.points(), u.domain.res)


def comparison_sandwich(u, dec, phi):
    """Check ``w - C̄ <= u <= w + C̄`` on all annulus nodes.

    ``C̄`` is the largest ``|phi - w|`` over the staircase nodes that feed
    an active equation. The slack covers the scheme residual of w itself
    through the quadratic comparison function.
    """
    sch = u.scheme
    w = farfield_values(u, dec)
    used = np.unique(np.concatenate([sch.plus[:, sch.rows].ravel(), sch.minus[:, sch.rows].ravel()]))
    inner_used = used[u.radius[used] <= u.r_in]
    Cbar = float(np.abs(u.values[inner_used] - w[inner_used]).max()) if len(inner_used) else 0.0
    eps_w = sch.residual(w, sch.f_rows)
    slack = 1e-9 + eps_w * u.R_out ** 2 / (2 * u.domain.dim * sch.op.lam)
    d = (u.values - w)[u.active]
    viol = float(max(d.max() - Cbar, -Cbar - d.min(), 0.0)) if d.size else 0.0
    return {"passed": bool(viol <= slack), "Cbar": Cbar, "max_violation": viol,
            "slack": slack, "w_residual": eps_w}


# ------------------------------------------------------------------- decay

@dataclass
class DecayFit:
    exponent: float
    constant: float
    offset: float
    theory: float
    slack: float
    passed: bool
    radii: list
    g: list
    shells_used: list
    degenerate: bool = False
    bounded_only: bool = False
    sup_abs: float = 0.0

    def to_dict(self):
        return {"exponent": self.exponent, "constant": self.constant, "offset": self.offset,
                "theory_exponent": self.theory, "slack": self.slack, "passed": self.passed,
                "radii": self.radii, "g": self.g, "shells_used": self.shells_used,
                "degenerate": self.degenerate, "bounded_only": self.bounded_only,
                "sup_abs": self.sup_abs}

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("r,max_abs_error\n")
            for r, g in zip(self.radii, self.g):
                fh.write(f"{r:.17g},{g:.17g}\n")


def default_shells(r_in, R_out, count=8):
    return list(np.geomspace(1.5 * r_in, 0.85 * R_out, count))


def _fit_offset(rs, means, n):
    """Best ``c`` in ``mean(r) ~ c + C r^p`` (p profiled over [-n, 0))."""
    from scipy.optimize import minimize_scalar

    rs, means = np.asarray(rs), np.asarray(means)

    def sse(p):
        X = np.stack([np.ones_like(rs), rs ** p], 1)
        coef, *_ = np.linalg.lstsq(X, means, rcond=None)
        return float(np.sum((X @ coef - means) ** 2)), coef

    best = minimize_scalar(lambda p: sse(p)[0], bounds=(-float(n), -0.05), method="bounded")
    return float(sse(best.x)[1][0])


def decay_fit(u, w, radii=None, lam=None, Lam=None, slack=0.2, fit_offset=True,
              rel_width=None):
    """Fit the decay of ``u - w`` over radial shells.

    ``g(r) = max |u - w - c|`` over nodes with ``|x|`` in ``[r(1-h), r(1+h)]``;
    the slope of ``log g`` against ``log r`` over the shells (dropping one at
    each end) is the fitted exponent. ``c`` is the far-field constant, fitted
    from shell means when ``fit_offset`` is set. When ``Lam/lam >= n-1`` only
    the sup of ``|u - w|`` is reported.
    """
    n = u.domain.dim
    lam = lam if lam is not None else u.scheme.op.lam
    Lam = Lam if Lam is not None else u.scheme.op.Lam
    radii = list(radii) if radii is not None else default_shells(u.r_in, u.R_out)
    rel = u.h if rel_width is None else rel_width
    theory = decay_exponent(n, lam, Lam)
    mask = (u.radius > u.r_in) & (u.radius <= u.R_out)
    diff = (u.values - np.asarray(w, dtype=float).ravel())[mask]
    rad = u.radius[mask]
    sup_abs = float(np.abs(diff).max()) if diff.size else 0.0
    if Lam / lam >= n - 1:
        return DecayFit(float("nan"), float("nan"), 0.0, theory, slack, True, radii, [],
                        [], bounded_only=True, sup_abs=sup_abs)
    centers = np.asarray(radii, dtype=float)
    g0, counts = kernels.shell_max(rad, np.abs(diff), centers, rel)
    usable = counts > 0
    if usable.sum() < 4:
        raise GridError(f"only {int(usable.sum())} usable shells (need 4)")
    c = 0.0
    if fit_offset and sup_abs > 0:
        means = [diff[(rad >= r * (1 - rel)) & (rad <= r * (1 + rel))].mean()
                 for r in centers[usable]]
        c = _fit_offset(centers[usable], means, n)
    g, _ = kernels.shell_max(rad, np.abs(diff - c), centers, rel)
    rs, gs = centers[usable], g[usable]
    mid = slice(1, len(rs) - 1)
    if np.all(gs <= 1e-14 * max(1.0, sup_abs)):
        return DecayFit(float("-inf"), 0.0, c, theory, slack, True, rs.tolist(), gs.tolist(),
                        rs[mid].tolist(), degenerate=True, sup_abs=sup_abs)
    p = loglog_slope(rs[mid], gs[mid])
    C = float(np.exp(np.mean(np.log(gs[mid]) - p * np.log(rs[mid]))))
    return DecayFit(p, C, c, theory, slack, bool(p <= theory + slack), rs.tolist(),
                    gs.tolist(), rs[mid].tolist(), sup_abs=sup_abs)


# ---------------------------------------------------- asymptotic extraction

def unfold(u):
    """Full-grid values of an octant-reduced annulus field, shape per axis 2K."""
    vals = u.values.reshape(u.domain.shape)
    if not u.octant:
        return vals, u.domain
    for a in range(vals.ndim):
        vals = np.concatenate([np.flip(vals, axis=a), vals], axis=a)
    K = u.domain.shape[0]
    return vals, LatticeDomain(u.domain.res, (-K,) * u.domain.dim, (K - 1,) * u.domain.dim)


def fit_outer_profile(u, r_fit, p=None, grid=None, sweeps=2):
    """Fit ``1/2 x.Ax + b.x + c + v(x) + C |x|^p`` on nodes with ``|x| >= r_fit``.

    The polynomial part and the decaying monopole come from a least-squares
    solve; ``v`` is the period fold of what remains. A few sweeps alternate
    the two. ``p`` defaults to the fundamental-solution exponent.
    """
    from .torus import TorusField

    vals, dom = unfold(u)
    n, res = dom.dim, dom.res
    grid = grid or TorusGrid(n, res)
    if p is None:
        p = decay_exponent(n, u.scheme.op.lam, u.scheme.op.Lam)
    x = dom.points()
    r = np.linalg.norm(x, axis=1)
    region = (r >= r_fit) & (r <= u.R_out)
    xr, yr = x[region], vals.ravel()[region]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    cols = [xr[:, i] * xr[:, j] * (0.5 if i == j else 1.0) for i, j in pairs]
    cols += [xr[:, i] for i in range(n)] + [np.ones(len(xr)), r[region] ** p]
    X = np.stack(cols, 1)
    tidx = dom.torus_index()[region]
    counts = np.bincount(tidx, minlength=grid.size)
    if np.any(counts == 0):
        raise GridError("outer region does not cover a full period")
    vfold = np.zeros(grid.size)
    for _ in range(sweeps):
        coef, *_ = np.linalg.lstsq(X, yr - vfold[tidx], rcond=None)
        rem = yr - X @ coef
        vfold = vfold + np.bincount(tidx, weights=rem, minlength=grid.size) / counts
        vfold -= vfold.mean()
    coef, *_ = np.linalg.lstsq(X, yr - vfold[tidx], rcond=None)
    A = np.zeros((n, n))
    for (i, j), a in zip(pairs, coef):
        A[i, j] = A[j, i] = a
    b = coef[len(pairs):len(pairs) + n]
    c = float(coef[len(pairs) + n])
    v = TorusField(grid, vfold.reshape(grid.shape), zero_mean=True)
    dec = Decomposition(A, np.asarray(b), c, v)
    dev = yr - X[:, :-1] @ coef[:-1] - vfold[tidx]
    dec.residual_sup = float(np.abs(dev).max())
    dec.extra["monopole"] = float(coef[-1])
    dec.extra["monopole_exponent"] = float(p)
    return dec


def envelope(x_norm, Cbar, n, lam, Lam):
    """``C̄ |x|^{(1 - (lam/Lam)(n-1))/2}``."""
    return Cbar * np.asarray(x_norm, dtype=float) ** (0.5 * decay_exponent(n, lam, Lam))


def asymptotic_extraction(u, op, f=None, grid=None, r_fit=None, radii=None, threshold=None,
                          slack=0.2):
    """Recover the far-field profile of an annulus field and certify its decay.

    Raises :class:`DecompositionFailed` ("no admissible asymptotic profile
    found") when the deviation from the fitted profile does not decay at
    the fundamental-solution rate, breaks the envelope, or (if given) the
    outer fit residual exceeds ``threshold``.
    """
    n = op.dim
    if op.Lam / op.lam >= n - 1:
        raise OperatorError("asymptotic extraction needs Lambda/lambda < n - 1")
    r_fit = r_fit if r_fit is not None else 0.4 * u.R_out
    dec = fit_outer_profile(u, r_fit, grid=grid)
    w = farfield_values(u, dec)
    fit = decay_fit(u, w, radii=radii, lam=op.lam, Lam=op.Lam, slack=slack)
    diff = np.abs(u.values - w - fit.offset)
    mask = (u.radius > u.r_in) & (u.radius <= u.R_out)
    shells = np.asarray(fit.shells_used or fit.radii)
    env_ok = True
    Cbar = 0.0
    if len(shells):
        rel = u.h
        g, counts = kernels.shell_max(u.radius[mask], diff[mask], shells, rel)
        keep = counts > 0
        shells, g = shells[keep], g[keep]
        Cbar = float(np.max(g / envelope(shells, 1.0, n, op.lam, op.Lam)))
        # envelope pinned at the innermost tested shell, then checked outward
        C0 = float(g[0] / envelope(shells[0], 1.0, n, op.lam, op.Lam))
        env_ok = bool(np.all(g <= envelope(shells, C0, n, op.lam, op.Lam) * (1 + 1e-9) + 1e-14))
    dec.extra.update(decay=fit.to_dict(), envelope_Cbar=Cbar, envelope_ok=env_ok,
                     r_fit=r_fit)
    dec.ok = bool(fit.passed and env_ok
                  and (threshold is None or dec.residual_sup <= threshold))
    if not dec.ok:
        dec.message = "no admissible asymptotic profile found"
        raise DecompositionFailed(
            f"no admissible asymptotic profile found (fit residual {dec.residual_sup:.3e}, "
            f"decay exponent {fit.exponent:.3f} vs bound {fit.theory + slack:.3f}, "
            f"envelope {'ok' if env_ok else 'violated'})",
            {"decomposition": dec.to_dict()})
    return dec
