"""Uniform periodic grids on the unit cell [-1/2, 1/2]^n and fields on them.

Nodes sit at cell centres, ``x_i = -1/2 + (i + 1/2) h`` with ``h = 1/res``,
so the node average is the midpoint rule and needs no boundary weights.

On-disk layout (both formats store values in C / row-major order with the
first axis slowest):

* ``.csv``: first line ``dim,res,zero_mean`` (``zero_mean`` is 0 or 1),
  then one value per line written with ``%.17g``.
* anything else: binary, ``b"FNHF"``, then little-endian int32 ``dim``,
  ``res``, ``zero_mean``, then ``res**dim`` little-endian float64 values.
"""

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
import struct

import numpy as np

from .errors import GridError

_MAGIC = b"FNHF"


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    res: int

    def __post_init__(self):
        if self.dim < 1:
            raise GridError(f"dim must be >= 1, got {self.dim}")
        if self.res < 4:
            raise GridError(f"res must be >= 4, got {self.res}")

    @property
    def spacing(self):
        return 1.0 / self.res

    @property
    def shape(self):
        return (self.res,) * self.dim

    @property
    def size(self):
        return self.res ** self.dim

    def axis(self):
        return -0.5 + (np.arange(self.res) + 0.5) / self.res

    def points(self):
        """Node coordinates, shape ``(N, dim)`` in row-major node order."""
        axes = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def sample(self, fn):
        """Evaluate ``fn(points) -> (N,)`` on the nodes as a field."""
        vals = np.asarray(fn(self.points()), dtype=float)
        return TorusField(self, vals.reshape(self.shape))

    def neighbours(self, offsets):
        """Periodic node indices of ``x +- h*xi`` for each row ``xi`` of offsets.

        Returns ``(plus, minus)`` of shape ``(K, N)``.
        """
        offsets = np.atleast_2d(np.asarray(offsets, dtype=np.int64))
        idx = np.arange(self.size).reshape(self.shape)
        plus = np.empty((len(offsets), self.size), dtype=np.int64)
        minus = np.empty_like(plus)
        axes = tuple(range(self.dim))
        for k, xi in enumerate(offsets):
            plus[k] = np.roll(idx, tuple(-xi), axis=axes).ravel()
            minus[k] = np.roll(idx, tuple(xi), axis=axes).ravel()
        return plus, minus


@dataclass(frozen=True, eq=False)
class TorusField:
    grid: TorusGrid
    values: np.ndarray
    zero_mean: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.zero_mean:
            m = float(vals.mean())
            if abs(m) > 1e-12 * max(1.0, float(np.abs(vals).max(initial=0.0))):
                raise GridError(f"field flagged zero-mean has mean {m:.3e}")

    @property
    def flat(self):
        return self.values.ravel()

    def __add__(self, other):
        o = other.values if isinstance(other, TorusField) else other
        return TorusField(self.grid, self.values + o)

    def __sub__(self, other):
        o = other.values if isinstance(other, TorusField) else other
        return TorusField(self.grid, self.values - o)

    def __mul__(self, other):
        o = other.values if isinstance(other, TorusField) else other
        return TorusField(self.grid, self.values * o)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DirectionSet:
    """Integer stencil offsets (in node units) used for directional differences."""

    offsets: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offsets, dtype=np.int64))
        if np.any(np.all(off == 0, axis=1)):
            raise GridError("degenerate direction")
        object.__setattr__(self, "offsets", off)

    @property
    def dim(self):
        return self.offsets.shape[1]

    @property
    def width(self):
        return int(np.abs(self.offsets).max())

    def __len__(self):
        return len(self.offsets)

    def index(self, xi):
        """Row of ``xi`` or ``-xi`` in the set, or -1."""
        xi = np.asarray(xi)
        for k, o in enumerate(self.offsets):
            if np.array_equal(o, xi) or np.array_equal(o, -xi):
                return k
        return -1


def axis_directions(n):
    return DirectionSet(np.eye(n, dtype=np.int64), name="axes")


def compact_directions(n):
    """Axes plus the face diagonals ``e_i +- e_j`` (the 9-point stencil in 2-D)."""
    dirs = [tuple(r) for r in np.eye(n, dtype=int)]
    for i, j in combinations(range(n), 2):
        for s in (1, -1):
            xi = [0] * n
            xi[i], xi[j] = 1, s
            dirs.append(tuple(xi))
    return DirectionSet(np.array(dirs), name="compact")


def default_directions(n):
    """8 directions in 2-D (adds the knight moves), 13 in 3-D (adds body diagonals)."""
    if n == 1:
        return DirectionSet(np.array([[1]]), name="axes")
    base = compact_directions(n).offsets.tolist()
    if n == 2:
        base += [[2, 1], [1, 2], [2, -1], [1, -2]]
        return DirectionSet(np.array(base), name="wide8")
    if n == 3:
        base += [[1, 1, 1], [1, 1, -1], [1, -1, 1], [-1, 1, 1]]
        return DirectionSet(np.array(base), name="full13")
    return DirectionSet(np.array(base), name="compact")


DIRECTION_SETS = {
    "axes": axis_directions,
    "compact": compact_directions,
    "default": default_directions,
}


def direction_set(name, n):
    try:
        return DIRECTION_SETS[name](n)
    except KeyError:
        raise GridError(f"unknown direction set {name!r}") from None


# ------------------------------------------------------------------ operations

def mean(field):
    return float(field.values.mean())


def project_zero_mean(field):
    vals = field.values - field.values.mean()
    # second pass removes the residual roundoff of the first subtraction
    vals = vals - vals.mean()
    return TorusField(field.grid, vals, zero_mean=True)


def second_difference(field, e, mode="nodes"):
    """Second difference quotient ``(u(x+e) + u(x-e) - 2u(x)) / |e|^2``.

    ``mode="nodes"`` reads ``e`` as a node offset (physical shift ``h*e``);
    ``mode="periods"`` reads it as a lattice vector of whole periods, which on
    the torus is the identity shift and yields the zero field.
    """
    e = np.asarray(e, dtype=np.int64).ravel()
    if e.shape != (field.grid.dim,):
        raise GridError(f"direction {e.tolist()} does not match dim {field.grid.dim}")
    if not np.any(e):
        raise GridError("degenerate direction")
    if mode == "nodes":
        shift, length2 = e, float(e @ e) * field.grid.spacing ** 2
    elif mode == "periods":
        shift, length2 = e * field.grid.res, float(e @ e)
    else:
        raise GridError(f"unknown mode {mode!r}")
    u = field.values
    axes = tuple(range(u.ndim))
    d2 = np.roll(u, tuple(-shift), axis=axes) + np.roll(u, tuple(shift), axis=axes) - 2.0 * u
    return TorusField(field.grid, d2 / length2)


def _directional(u, xi, h, periodic):
    axes = tuple(range(u.ndim))
    d2 = np.roll(u, tuple(-xi), axis=axes) + np.roll(u, tuple(xi), axis=axes) - 2.0 * u
    d2 = d2 / h ** 2
    if not periodic:
        w = np.abs(xi)
        for a in axes:
            if w[a]:
                idx = [slice(None)] * u.ndim
                idx[a] = slice(0, w[a])
                d2[tuple(idx)] = np.nan
                idx[a] = slice(u.shape[a] - w[a], None)
                d2[tuple(idx)] = np.nan
    return d2


def discrete_hessian(values, stencil, h=None, periodic=True):
    """Per-node symmetric Hessian from central second differences.

    Diagonal entries use the axis directions; ``D_ij`` uses the pair
    ``e_i +- e_j``, both of which must be in ``stencil``. Accepts a
    :class:`TorusField` or a raw array (then ``h`` is required). With
    ``periodic=False`` nodes whose stencil leaves the array get NaN.
    Returns an array of shape ``values.shape + (n, n)``.
    """
    if isinstance(values, TorusField):
        h = values.grid.spacing
        res = values.grid.res
        u = values.values
    else:
        u = np.asarray(values, dtype=float)
        res = min(u.shape)
    n = u.ndim
    if stencil.dim != n:
        raise GridError("stencil dimension mismatch")
    if stencil.width >= res / 2:
        raise GridError("stencil too wide")
    H = np.empty(u.shape + (n, n))
    for i in range(n):
        ei = np.zeros(n, dtype=np.int64)
        ei[i] = 1
        if stencil.index(ei) < 0:
            raise GridError(f"stencil lacks axis direction {i}")
        H[..., i, i] = _directional(u, ei, h, periodic)
    for i, j in combinations(range(n), 2):
        p = np.zeros(n, dtype=np.int64)
        p[i], p[j] = 1, 1
        m = p.copy()
        m[j] = -1
        if stencil.index(p) < 0 or stencil.index(m) < 0:
            raise GridError(f"stencil lacks diagonals for entry ({i},{j})")
        Hij = (_directional(u, p, h, periodic) - _directional(u, m, h, periodic)) / 4.0
        H[..., i, j] = Hij
        H[..., j, i] = Hij
    return H


# ------------------------------------------------------------------------ I/O

def save_field(path, field):
    path = Path(path)
    zm = int(bool(field.zero_mean))
    if path.suffix.lower() == ".csv":
        with open(path, "w") as fh:
            fh.write(f"{field.grid.dim},{field.grid.res},{zm}\n")
            np.savetxt(fh, field.values.ravel(), fmt="%.17g")
    else:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<iii", field.grid.dim, field.grid.res, zm))
            fh.write(field.values.astype("<f8").tobytes(order="C"))


def load_field(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path) as fh:
            head = [int(t) for t in fh.readline().strip().split(",")]
            vals = np.loadtxt(fh, ndmin=1)
        dim, res = head[0], head[1]
        zm = bool(head[2]) if len(head) > 2 else False
    else:
        raw = path.read_bytes()
        if raw[:4] != _MAGIC:
            raise GridError(f"{path}: not a field file")
        dim, res, zm = struct.unpack("<iii", raw[4:16])
        vals = np.frombuffer(raw[16:], dtype="<f8")
    grid = TorusGrid(dim, res)
    if vals.size != grid.size:
        raise GridError(f"{path}: expected {grid.size} values, found {vals.size}")
    return TorusField(grid, vals.reshape(grid.shape), zero_mean=bool(zm))
