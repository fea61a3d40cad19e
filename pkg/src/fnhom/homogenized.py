"""The homogenized operator A -> F̄(A) and its checks.

F̄ depends on the datum f as well as on F, so an evaluator binds
``(op, f, grid)`` and caches alpha per quantized A.
"""

from dataclasses import dataclass
import threading

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components

from .cell import CellProblem, SolverConfig, TorusScheme, solve_cell
from .errors import OperatorError, PropertyFailure, SolverError
from .linalg import solve
from .operators import (LinearOperator, SandwichReport, eval_pucci, random_psd,
                        random_symmetric)
from .torus import TorusField

CACHE_QUANTUM = 1e-12


class HbarEvaluator:
    def __init__(self, op, f, cfg=None):
        self.op, self.f = op, f
        self.grid = f.grid
        self.cfg = cfg or SolverConfig()
        self.scheme = TorusScheme(op, self.grid, self.cfg.directions)
        self.cache = {}
        self._lock = threading.Lock()
        self.solves = 0

    def _key(self, A):
        return tuple(np.round(np.asarray(A, dtype=float).ravel() / CACHE_QUANTUM)
                     .astype(np.int64).tolist())

    def solve(self, A):
        """Full cell solution at A (not cached)."""
        self.solves += 1
        return solve_cell(CellProblem(self.op, A, self.f, self.grid), self.cfg,
                          scheme=self.scheme)

    def __call__(self, A):
        return hbar(self, A)


def hbar(ev, A):
    A = np.asarray(A, dtype=float).reshape(ev.op.dim, ev.op.dim)
    if np.abs(A - A.T).max() > 1e-12 * max(1.0, np.abs(A).max()):
        raise OperatorError("A must be symmetric")
    key = ev._key(A)
    with ev._lock:
        if key in ev.cache:
            return ev.cache[key]
    alpha = ev.solve(A).alpha
    with ev._lock:
        ev.cache.setdefault(key, alpha)
        return ev.cache[key]


# ------------------------------------------------------------- linear case

@dataclass
class InvariantMeasure:
    m: TorusField
    normalization: float
    positivity_min: float

    def to_dict(self):
        return {"mean": self.normalization, "min": self.positivity_min,
                "max": float(self.m.values.max())}


def _closed_classes(L):
    """Number of closed communicating classes of the stencil graph of L."""
    A = sp.csr_matrix(L, copy=True)
    A.setdiag(0)
    A.eliminate_zeros()
    ncomp, labels = connected_components(A, directed=True, connection="strong")
    if ncomp == 1:
        return 1
    coo = A.tocoo()
    leaves = labels[coo.row] != labels[coo.col]
    has_exit = np.zeros(ncomp, dtype=bool)
    has_exit[labels[coo.row[leaves]]] = True
    return int((~has_exit).sum())


def invariant_measure(op, grid, cfg=None):
    """Positive periodic m with mean 1 spanning the kernel of the transposed scheme.

    The kernel of ``L^T`` is simple exactly when the stencil graph has a
    single closed class; that is checked combinatorially before the
    bordered solve ``[L^T 1; 1^T/N 0][m; s] = [0; 1]``.
    """
    if not isinstance(op, LinearOperator):
        raise OperatorError("invariant measure is defined for linear operators")
    cfg = cfg or SolverConfig()
    sch = TorusScheme(op, grid, cfg.directions)
    N = grid.size
    L = sch.matrix(np.zeros(N, dtype=np.int64))
    if _closed_classes(L) != 1:
        raise SolverError("non-simple kernel")
    K = sp.bmat([[L.T, sp.csr_matrix(np.ones((N, 1)))],
                 [sp.csr_matrix(np.ones((1, N)) / N), None]], format="csr")
    rhs = np.zeros(N + 1)
    rhs[N] = 1.0
    x = solve(K, rhs, method=cfg.linear_solver, saddle=True, dim=grid.dim)
    m = x[:N]
    m = m / m.mean()
    if m.min() <= 0:
        raise SolverError(f"invariant measure not positive (min {m.min():.3e})")
    mf = TorusField(grid, m.reshape(grid.shape))
    return InvariantMeasure(mf, float(m.mean()), float(m.min()))


def hbar_linear_formula(op, f, A, m):
    """``A:<a m> - <f m> + <f>`` and the effective matrix ``Q = <a m>``."""
    pts = f.grid.points()
    a = op.coeff(pts)
    w = m.m.flat
    Q = np.einsum("kij,k->ij", a, w) / len(w)
    fv = f.flat
    val = float(np.sum(np.asarray(A) * Q) - np.mean(fv * w) + fv.mean())
    return val, Q


# ------------------------------------------------------------------ checks

def default_slack(cfg):
    return 1e-6 + 10 * cfg.tol


def check_hbar_ellipticity(ev, samples=20, seed=0, slack=None, scale=1.0):
    """Pucci sandwich ``M^-(N) <= F̄(M+N) - F̄(M) <= M^+(N)`` up to ``slack``."""
    if samples < 1:
        raise OperatorError("samples must be >= 1")
    slack = default_slack(ev.cfg) if slack is None else slack
    rng = np.random.default_rng(seed)
    n = ev.op.dim
    lo = hi = np.inf
    wit = None
    for _ in range(samples):
        M = random_symmetric(rng, n, scale)
        N = random_psd(rng, n, scale)
        d = hbar(ev, M + N) - hbar(ev, M)
        ml = d - eval_pucci(-1, N, ev.op.lam, ev.op.Lam)
        mu = eval_pucci(1, N, ev.op.lam, ev.op.Lam) - d
        if min(ml, mu) < -slack and wit is None:
            wit = {"M": M.tolist(), "N": N.tolist(), "diff": d,
                   "lower_margin": ml, "upper_margin": mu}
        lo, hi = min(lo, ml), min(hi, mu)
    return SandwichReport(bool(lo >= -slack and hi >= -slack), samples, float(lo), float(hi),
                          float(slack), wit)


@dataclass
class ConcavityReport:
    passed: bool
    samples: int
    margin: float
    slack: float
    witness: dict = None

    def to_dict(self):
        return {"passed": self.passed, "samples": self.samples, "margin": self.margin,
                "slack": self.slack, "witness": self.witness}

    def require(self):
        if not self.passed:
            raise PropertyFailure("concavity of F̄ violated", self.witness)
        return self


def check_hbar_concavity(ev, samples=20, seed=0, slack=None, scale=1.0):
    """``F̄((M+N)/2) - (F̄(M) + F̄(N))/2 >= -slack`` on random pairs."""
    if ev.op.combine == "max":
        raise OperatorError("concavity check needs a concave (linear or min-type) operator")
    slack = default_slack(ev.cfg) if slack is None else slack
    rng = np.random.default_rng(seed)
    n = ev.op.dim
    worst, wit = np.inf, None
    for _ in range(samples):
        M = random_symmetric(rng, n, scale)
        N = random_symmetric(rng, n, scale)
        gap = hbar(ev, (M + N) / 2) - 0.5 * (hbar(ev, M) + hbar(ev, N))
        if gap < -slack and wit is None:
            wit = {"M": M.tolist(), "N": N.tolist(), "gap": gap}
        worst = min(worst, gap)
    return ConcavityReport(bool(worst >= -slack), samples, float(worst), float(slack), wit)


def recession_root(ev, target, bracket=(-1.0, 1.0), tol=1e-8, bound=1e6, base=None):
    """Solve ``F̄(base + tI) = target`` for t (``base`` defaults to 0).

    The bracket is widened using the lower growth bound ``n*lambda`` of
    ``t -> F̄(tI)``; the root is then found by Brent's method and polished
    by bisection until ``|F̄(tI) - target| <= tol``.
    """
    n = ev.op.dim
    I = np.eye(n)
    B = np.zeros((n, n)) if base is None else np.asarray(base, dtype=float).reshape(n, n)
    g = lambda t: hbar(ev, B + t * I) - target  # noqa: E731
    lo, hi = map(float, bracket)
    glo, ghi = g(lo), g(hi)
    rate = n * ev.op.lam
    while glo > 0:
        lo = lo - glo / rate - 1e-3 * (1 + abs(lo))
        if abs(lo) > bound:
            raise SolverError(f"bracket expansion exceeded {bound}")
        glo = g(lo)
    while ghi < 0:
        hi = hi - ghi / rate + 1e-3 * (1 + abs(hi))
        if abs(hi) > bound:
            raise SolverError(f"bracket expansion exceeded {bound}")
        ghi = g(hi)
    if abs(glo) <= tol:
        return lo
    if abs(ghi) <= tol:
        return hi
    t = brentq(g, lo, hi, xtol=tol / (n * ev.op.Lam) / 10, rtol=4 * np.finfo(float).eps)
    gt = g(t)
    for _ in range(200):
        if abs(gt) <= tol:
            return float(t)
        if gt > 0:
            hi = t
        else:
            lo = t
        t = 0.5 * (lo + hi)
        gt = g(t)
    raise SolverError(f"recession root did not reach tolerance (|g|={abs(gt):.2e})")


def slope_profile(ev, ts):
    """Finite-difference slopes of ``t -> F̄(tI)`` between consecutive ``ts``."""
    n = ev.op.dim
    vals = np.array([hbar(ev, t * np.eye(n)) for t in ts])
    return np.diff(vals) / np.diff(ts)
