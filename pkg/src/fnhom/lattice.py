"""Cartesian node sets aligned with the periodic cell.

Nodes are ``x = (k + 1/2) h`` for integer multi-indices ``k`` with
``h = 1/res`` and ``res`` even, so every node maps onto a node of the
cell-centred :class:`~fnhom.torus.TorusGrid` via ``i = (k + res/2) mod res``.
That keeps periodic coefficients and correctors bit-identical between the
torus and any box or annulus built here.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GridError


@dataclass(frozen=True)
class LatticeDomain:
    res: int
    kmin: tuple
    kmax: tuple  # inclusive
    mirror: tuple = None  # per axis: reflect k < 0 onto -k-1 (requires kmin == 0)

    def __post_init__(self):
        if self.res % 2:
            raise GridError("lattice domains need an even res")
        n = len(self.kmin)
        if len(self.kmax) != n:
            raise GridError("kmin/kmax length mismatch")
        mirror = tuple(bool(m) for m in (self.mirror or (False,) * n))
        object.__setattr__(self, "mirror", mirror)
        object.__setattr__(self, "kmin", tuple(int(k) for k in self.kmin))
        object.__setattr__(self, "kmax", tuple(int(k) for k in self.kmax))
        for a in range(n):
            if mirror[a] and self.kmin[a] != 0:
                raise GridError("mirrored axes must start at k = 0")

    @classmethod
    def box(cls, R, res, dim):
        """Nodes covering ``[-R, R]^dim`` (R a whole number of periods)."""
        if abs(R - round(R)) > 1e-12:
            raise GridError(f"box half-width {R} is not a whole number of periods")
        K = int(round(R)) * res
        return cls(res, (-K,) * dim, (K - 1,) * dim)

    @property
    def dim(self):
        return len(self.kmin)

    @property
    def h(self):
        return 1.0 / self.res

    @property
    def shape(self):
        return tuple(b - a + 1 for a, b in zip(self.kmin, self.kmax))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axis(self, a):
        return (np.arange(self.kmin[a], self.kmax[a] + 1) + 0.5) * self.h

    def points(self):
        axes = np.meshgrid(*[self.axis(a) for a in range(self.dim)], indexing="ij")
        return np.stack([g.ravel() for g in axes], axis=-1)

    def radius(self):
        r2 = np.zeros(self.shape)
        for a in range(self.dim):
            sh = [1] * self.dim
            sh[a] = -1
            r2 = r2 + self.axis(a).reshape(sh) ** 2
        return np.sqrt(r2).ravel()

    def torus_index(self):
        """Flat index of the matching torus node, shape (N,)."""
        res = self.res
        idx = np.zeros(self.shape, dtype=np.int64)
        for a in range(self.dim):
            sh = [1] * self.dim
            sh[a] = -1
            k = np.arange(self.kmin[a], self.kmax[a] + 1)
            idx = idx * res + ((k + res // 2) % res).reshape(sh)
        return idx.ravel()

    def neighbours(self, offsets):
        """Indices of ``x +- h*xi``; -1 where the neighbour leaves the domain."""
        offsets = np.atleast_2d(np.asarray(offsets, dtype=np.int64))
        shape = self.shape
        grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
        plus = np.empty((len(offsets), self.size), dtype=np.int64)
        minus = np.empty_like(plus)
        for k, xi in enumerate(offsets):
            for sgn, out in ((1, plus), (-1, minus)):
                flat = np.zeros(shape, dtype=np.int64)
                ok = np.ones(shape, dtype=bool)
                for a in range(self.dim):
                    j = grids[a] + sgn * xi[a]
                    if self.mirror[a]:
                        j = np.where(j < 0, -j - 1, j)
                    ok &= (j >= 0) & (j < shape[a])
                    flat = flat * shape[a] + np.clip(j, 0, shape[a] - 1)
                out[k] = np.where(ok, flat, -1).ravel()
        return plus, minus
