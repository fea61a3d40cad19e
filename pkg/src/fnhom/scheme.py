"""Monotone wide-stencil discretisation of the operator classes.

Each linear branch ``tr(a(x) M)`` is written as ``sum_k w_k(x) xi_k^T M xi_k``
with ``w_k >= 0`` over a fixed integer direction set, and ``xi^T D^2u xi`` is
replaced by the central difference ``(u(x+h xi) + u(x-h xi) - 2u(x))/h^2``.
Non-negative weights make every discrete equation degenerate elliptic, and
the decomposition is exact so the scheme reproduces quadratics exactly.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import nnls

from .errors import EllipticityViolation
from .operators import PucciOperator, ShiftedOperator
from .torus import DirectionSet, default_directions

_DECOMP_TOL = 1e-11


def _sym_design(offsets):
    n = offsets.shape[1]
    iu = np.triu_indices(n)
    D = np.stack([np.outer(xi, xi)[iu] for xi in offsets.astype(float)], axis=1)
    return D, iu


def _closed_form(a, dirs):
    """Diagonally dominant split onto axes and face diagonals, or None."""
    n = a.shape[-1]
    K = len(dirs)
    w = np.zeros(a.shape[:-2] + (K,))
    for i in range(n):
        e = np.zeros(n, dtype=np.int64)
        e[i] = 1
        k = dirs.index(e)
        if k < 0:
            return None, None
        w[..., k] += a[..., i, i]
    for i, j in combinations(range(n), 2):
        aij = a[..., i, j]
        if not np.any(aij):
            continue
        p = np.zeros(n, dtype=np.int64)
        p[i], p[j] = 1, 1
        m = p.copy()
        m[j] = -1
        kp, km = dirs.index(p), dirs.index(m)
        if kp < 0 or km < 0:
            return None, None
        w[..., kp] += np.maximum(aij, 0.0)
        w[..., km] += np.maximum(-aij, 0.0)
        ki, kj = dirs.index(np.eye(n, dtype=np.int64)[i]), dirs.index(np.eye(n, dtype=np.int64)[j])
        w[..., ki] -= np.abs(aij)
        w[..., kj] -= np.abs(aij)
    bad = np.any(w < -_DECOMP_TOL * np.maximum(1.0, np.abs(a).max(axis=(-2, -1)))[..., None],
                 axis=-1)
    return w, bad


def decompose(a, directions):
    """Non-negative weights ``w`` with ``sum_k w_k xi_k xi_k^T = a``.

    ``a`` has shape ``(..., n, n)``; returns ``(..., K)``. Diagonally
    dominant matrices use the closed-form axis/diagonal split; the rest go
    through NNLS over the whole direction set (deduplicated). Raises
    :class:`EllipticityViolation` if some matrix has no exact monotone split.
    """
    dirs = directions if isinstance(directions, DirectionSet) else DirectionSet(directions)
    a = np.asarray(a, dtype=float)
    lead = a.shape[:-2]
    n = a.shape[-1]
    flat = a.reshape(-1, n, n)
    w, bad = _closed_form(flat, dirs)
    if w is None:
        w = np.zeros((len(flat), len(dirs)))
        bad = np.ones(len(flat), dtype=bool)
    if np.any(bad):
        D, iu = _sym_design(dirs.offsets)
        sub = flat[bad]
        keys, inv = np.unique(np.round(sub[:, iu[0], iu[1]], 14), axis=0, return_inverse=True)
        sol = np.empty((len(keys), len(dirs)))
        for u, key in enumerate(keys):
            x, rnorm = nnls(D, key)
            if rnorm > _DECOMP_TOL * max(1.0, np.abs(key).max()):
                raise EllipticityViolation(
                    "coefficient matrix has no monotone split on direction set "
                    f"{dirs.name!r}: {key.tolist()} (residual {rnorm:.2e})")
            sol[u] = x
        w[bad] = sol[np.ravel(inv)]
    w = np.where(w < 0, 0.0, w)
    return w.reshape(lead + (len(dirs),))


@dataclass
class Discretization:
    """Branch weights for an operator on the torus nodes.

    ``W`` has shape (B, N_torus, K) in node-offset units (not divided by
    h^2); ``combine`` is "linear", "min" or "max".
    """

    directions: DirectionSet
    W: np.ndarray
    combine: str
    offset: float

    @property
    def n_branches(self):
        return self.W.shape[0]

    def quad_terms(self, A):
        """``xi_k^T A xi_k`` for every direction."""
        off = self.directions.offsets.astype(float)
        return np.einsum("ki,ij,kj->k", off, np.asarray(A, dtype=float), off)

    def constants(self, A, index=None):
        """Per-branch constant ``tr(a_b A) + offset``, shape (B, N)."""
        W = self.W if index is None else self.W[:, index, :]
        return W @ self.quad_terms(A) + self.offset

    def weights(self, index=None):
        return self.W if index is None else np.ascontiguousarray(self.W[:, index, :])


def discretize(op, grid, directions=None):
    """Sample ``op`` on the torus ``grid`` and split every branch monotonically."""
    dirs = directions or default_directions(op.dim)
    base = op.base if isinstance(op, ShiftedOperator) else op
    pts = grid.points()
    if isinstance(base, PucciOperator):
        a = base.branches(pts[:1], directions=dirs.offsets)
        w = decompose(a[:, 0], dirs)[:, None, :]
        W = np.ascontiguousarray(np.broadcast_to(w, (w.shape[0], len(pts), w.shape[2])))
    elif not op.x_dependent:
        a = op.branches(pts[:1])
        w = decompose(a[:, 0], dirs)[:, None, :]
        W = np.ascontiguousarray(np.broadcast_to(w, (w.shape[0], len(pts), w.shape[2])))
    else:
        W = decompose(op.branches(pts), dirs)
    used = np.any(W > 0, axis=(0, 1))
    if not np.all(used):
        dirs = DirectionSet(dirs.offsets[used], name=dirs.name + "-pruned")
        W = np.ascontiguousarray(W[:, :, used])
    if np.any(W.sum(axis=2) <= 0):
        raise EllipticityViolation("a discrete equation has no positive stencil weight")
    return Discretization(dirs, W, op.combine, float(op.offset))
