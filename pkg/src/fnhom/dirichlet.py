"""Dirichlet problems ``F(D^2u, x) = f`` on lattice domains (boxes, annuli).

Nodes outside ``active`` carry prescribed values; every active node gets
the monotone scheme equation. Min/max operators use Howard's policy
iteration, which is monotone for the Dirichlet problem.
"""

from dataclasses import dataclass
import logging

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import EllipticityViolation, GridError, NotConverged
from .linalg import solve
from .scheme import discretize
from .torus import TorusGrid, direction_set

log = logging.getLogger(__name__)


class DomainScheme:
    """Operator discretised on the active nodes of a :class:`LatticeDomain`."""

    def __init__(self, op, domain, active, directions="default", disc=None):
        dirs = direction_set(directions, op.dim) if isinstance(directions, str) else directions
        self.op, self.domain = op, domain
        self.disc = disc or discretize(op, TorusGrid(op.dim, domain.res), dirs)
        self.tidx = domain.torus_index()
        self.active = np.asarray(active, dtype=bool).ravel()
        self.rows = np.flatnonzero(self.active).astype(np.int64)
        self.plus, self.minus = domain.neighbours(self.disc.directions.offsets)
        if np.any(self.plus[:, self.rows] < 0) or np.any(self.minus[:, self.rows] < 0):
            raise GridError("boundary layer too thin for the stencil")
        self.Wh = self.disc.weights(self.tidx[self.rows]) / domain.h ** 2
        self.maximize = self.disc.combine == "max"
        unk = -np.ones(domain.size, dtype=np.int64)
        unk[self.rows] = np.arange(len(self.rows))
        self.unknown = unk

    def constants(self, A=None):
        A = np.zeros((self.op.dim, self.op.dim)) if A is None else A
        return self.disc.constants(A, self.tidx[self.rows])

    def values(self, u, c):
        return kernels.branch_values(u, self.Wh, c, self.plus, self.minus, self.rows)

    def residual(self, u, f_rows, A=None):
        """sup over active nodes of |F_h[u] - f|."""
        vals = self.values(np.asarray(u, dtype=float).ravel(), self.constants(A))
        best = vals.max(axis=0) if self.maximize else vals.min(axis=0)
        return float(np.abs(best - f_rows).max()) if len(best) else 0.0

    def system(self, policy, c, f_rows, u_fixed):
        ii, jj, dd = kernels.assemble(policy, self.rows, self.Wh, self.plus, self.minus)
        cols = self.unknown[jj]
        inside = cols >= 0
        R = len(self.rows)
        L = sp.csr_matrix((dd[inside], (ii[inside], cols[inside])), shape=(R, R))
        if np.any(L.diagonal() >= 0):
            raise EllipticityViolation("policy matrix lost strict diagonal dominance")
        bnd = np.bincount(ii[~inside], weights=dd[~inside] * u_fixed[jj[~inside]], minlength=R)
        rhs = f_rows - c[policy, np.arange(R)] - bnd
        return L, rhs


@dataclass
class DirichletResult:
    u: np.ndarray
    residual_sup: float
    iterations: int
    converged: bool


def solve_dirichlet(scheme, boundary, f_rows, cfg, u0=None):
    """Solve with ``u = boundary`` off the active set.

    ``boundary`` is a length-N vector (values at active nodes are ignored
    except as the initial iterate when ``u0`` is not given).
    """
    u = np.array(boundary if u0 is None else u0, dtype=float).ravel()
    u[~scheme.active] = np.asarray(boundary, dtype=float).ravel()[~scheme.active]
    c = scheme.constants()
    R = len(scheme.rows)
    vals = scheme.values(u, c)
    policy, _ = kernels.improve_policy(vals, np.zeros(R, dtype=np.int64), scheme.maximize, cfg.tie)
    best = None
    for it in range(1, cfg.max_iters + 1):
        L, rhs = scheme.system(policy, c, f_rows, u)
        u[scheme.rows] = solve(L, rhs, method=cfg.linear_solver,
                               dim=scheme.op.dim)
        vals = scheme.values(u, c)
        new_policy, bv = kernels.improve_policy(vals, policy, scheme.maximize, cfg.tie)
        resid = float(np.abs(bv - f_rows).max()) if R else 0.0
        log.debug("dirichlet iter %d resid=%.3e", it, resid)
        if best is None or resid < best[1]:
            best = (u.copy(), resid, it)
        if np.array_equal(new_policy, policy):
            if resid <= cfg.tol:
                return DirichletResult(u, resid, it, True)
            break
        policy = new_policy
    res = DirichletResult(best[0], best[1], best[2], best[1] <= cfg.tol)
    if res.converged:
        return res
    raise NotConverged(f"Dirichlet residual {best[1]:.3e} > tol {cfg.tol:.1e}", best=res)
