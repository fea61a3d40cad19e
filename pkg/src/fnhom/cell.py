"""Periodic cell problem ``F(A + D^2 v, x) - alpha = f - <f>`` on the torus.

Unknowns are the corrector ``v`` (zero mean) and the ergodic constant
``alpha``. Each policy is solved as one bordered sparse system

    [ L_p   -1 ] [ v     ]   [ f - <f> - c_p ]
    [ 1^T/N  0 ] [ alpha ] = [ 0             ]

and Bellman / Pucci operators wrap that in Howard's policy iteration.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import EllipticityViolation, GridError, NotConverged
from .linalg import solve
from .scheme import discretize
from .torus import TorusField, TorusGrid, direction_set

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iters: int = 200
    directions: str = "default"
    linear_solver: str = "auto"
    tie: float = 1e-14


@dataclass
class CellProblem:
    op: object
    A: np.ndarray
    f: TorusField
    grid: TorusGrid = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(self.op.dim, self.op.dim)
        if self.grid is None:
            self.grid = self.f.grid
        if self.f.grid != self.grid:
            raise GridError("datum grid differs from problem grid")
        if self.grid.dim != self.op.dim:
            raise GridError("operator and grid dimensions differ")


@dataclass
class CellSolution:
    v: TorusField
    alpha: float
    residual_sup: float
    iterations: int
    converged: bool
    policy: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {"alpha": self.alpha, "residual_sup": self.residual_sup,
                "iterations": self.iterations, "converged": self.converged,
                "v_sup": float(np.abs(self.v.values).max())}


class TorusScheme:
    """Discretised operator plus neighbour tables for one torus grid."""

    def __init__(self, op, grid, directions="default"):
        if grid.res < 8:
            raise GridError("cell solves need res >= 8")
        dirs = direction_set(directions, op.dim) if isinstance(directions, str) else directions
        if dirs.width >= grid.res / 2:
            raise GridError("stencil too wide")
        self.op, self.grid = op, grid
        self.disc = discretize(op, grid, dirs)
        self.Wh = self.disc.W / grid.spacing ** 2
        self.plus, self.minus = grid.neighbours(self.disc.directions.offsets)
        self.rows = np.arange(grid.size, dtype=np.int64)
        self.maximize = self.disc.combine == "max"

    def values(self, v, c):
        return kernels.branch_values(v, self.Wh, c, self.plus, self.minus, self.rows)

    def matrix(self, policy):
        ii, jj, dd = kernels.assemble(policy, self.rows, self.Wh, self.plus, self.minus)
        N = self.grid.size
        L = sp.csr_matrix((dd, (ii, jj)), shape=(N, N))
        if np.any(L.diagonal() >= 0):
            raise EllipticityViolation("policy matrix lost strict diagonal dominance")
        return L


def _bordered(L):
    N = L.shape[0]
    col = sp.csr_matrix(-np.ones((N, 1)))
    row = sp.csr_matrix(np.ones((1, N)) / N)
    return sp.bmat([[L, col], [row, None]], format="csr")


def solve_cell(problem, cfg=None, v0=None, scheme=None):
    """Solve the discrete cell problem; returns a :class:`CellSolution`.

    Raises :class:`NotConverged` (with ``best``) when the policy iteration
    exhausts ``cfg.max_iters`` without meeting ``cfg.tol``.
    """
    cfg = cfg or SolverConfig()
    grid = problem.grid
    sch = scheme or TorusScheme(problem.op, grid, cfg.directions)
    N = grid.size
    fv = problem.f.flat
    g = fv - fv.mean()
    c = sch.disc.constants(problem.A)
    v = np.zeros(N) if v0 is None else np.asarray(v0, dtype=float).ravel().copy()
    vals = sch.values(v, c)
    policy, best = kernels.improve_policy(vals, np.zeros(N, dtype=np.int64), sch.maximize, cfg.tie)
    alpha = float(np.mean(best - g))
    seen = set()
    best_sol = None
    for it in range(1, cfg.max_iters + 1):
        L = sch.matrix(policy)
        rhs = np.append(g - c[policy, sch.rows], 0.0)
        x = solve(_bordered(L), rhs, method=cfg.linear_solver, saddle=True,
                  dim=sch.grid.dim)
        v, alpha = x[:N], float(x[N])
        vals = sch.values(v, c)
        new_policy, best = kernels.improve_policy(vals, policy, sch.maximize, cfg.tie)
        resid = float(np.abs(best - alpha - g).max())
        if best_sol is None or resid < best_sol[2]:
            best_sol = (v.copy(), alpha, resid, it, new_policy)
        log.debug("cell iter %d alpha=%.15g resid=%.3e", it, alpha, resid)
        stable = np.array_equal(new_policy, policy)
        if resid <= cfg.tol and stable:
            return _finish(grid, v, alpha, resid, it, True, new_policy)
        key = new_policy.tobytes()
        if stable or key in seen:
            break
        seen.add(policy.tobytes())
        policy = new_policy
    v, alpha, resid, it, pol = best_sol
    sol = _finish(grid, v, alpha, resid, it, resid <= cfg.tol, pol)
    if sol.converged:
        return sol
    raise NotConverged(f"cell problem residual {resid:.3e} > tol {cfg.tol:.1e} "
                       f"after {it} policy iterations", best=sol)


def _finish(grid, v, alpha, resid, it, ok, policy):
    v = v - v.mean()
    vf = TorusField(grid, v.reshape(grid.shape) - v.mean(), zero_mean=True)
    return CellSolution(vf, float(alpha), float(resid), int(it), bool(ok), policy)


@dataclass
class UniquenessReport:
    passed: bool
    alphas: list
    alpha_spread: float
    v_spread: float
    tolerance: float

    def to_dict(self):
        return dict(passed=self.passed, alphas=self.alphas, alpha_spread=self.alpha_spread,
                    v_spread=self.v_spread, tolerance=self.tolerance)


def uniqueness_probe(problem, cfg=None, seeds=(0, 1)):
    """Solve from several random initial iterates and compare the results."""
    cfg = cfg or SolverConfig()
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    sch = TorusScheme(problem.op, problem.grid, cfg.directions)
    sols = []
    for s in seeds:
        rng = np.random.default_rng(s)
        v0 = rng.standard_normal(problem.grid.size)
        sols.append(solve_cell(problem, cfg, v0=v0, scheme=sch))
    alphas = [s.alpha for s in sols]
    a_spread = float(max(alphas) - min(alphas))
    v_spread = float(max(np.abs(s.v.values - sols[0].v.values).max() for s in sols))
    tol = 10 * cfg.tol
    return UniquenessReport(bool(a_spread <= tol and v_spread <= tol), alphas, a_spread,
                            v_spread, tol)
