"""Representations of F(M, x), Pucci extremal operators and the oscillation beta.

Every operator exposes the same vectorised interface:

* ``op(M, x)`` evaluates F for matrices ``M`` of shape ``(..., n, n)`` at
  points ``x`` of shape ``(..., n)``;
* ``op.branches(points)`` returns the linear branches ``a_b(x)`` of shape
  ``(B, N, n, n)`` together with ``op.combine`` ("linear", "min" or "max"),
  which is all the monotone discretisation needs.

Matrix norms are Frobenius throughout.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import OperatorError, PropertyFailure

_SYM_TOL = 1e-10


def _wrap(x):
    x = np.asarray(x, dtype=float)
    return x - np.round(x)


def _check_symmetric(M):
    M = np.asarray(M, dtype=float)
    if M.shape[-1] != M.shape[-2]:
        raise OperatorError(f"matrix must be square, got shape {M.shape}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - np.swapaxes(M, -1, -2)).max(initial=0.0) > _SYM_TOL * scale:
        raise OperatorError("matrix is not symmetric")
    return M


def eval_pucci(sign, M, lam, Lam):
    """Pucci extremal operator M^+ (``sign=+1``) or M^- (``sign=-1``)."""
    if lam > Lam:
        raise OperatorError(f"lambda={lam} exceeds Lambda={Lam}")
    M = _check_symmetric(M)
    k = np.linalg.eigvalsh(M)
    pos = np.where(k > 0, k, 0.0).sum(axis=-1)
    neg = np.where(k < 0, k, 0.0).sum(axis=-1)
    if sign > 0:
        out = Lam * pos + lam * neg
    else:
        out = lam * pos + Lam * neg
    return out if np.ndim(out) else float(out)


class EllipticOperator:
    """Common interface. Subclasses set ``dim``, ``lam``, ``Lam``, ``combine``."""

    combine = "linear"
    offset = 0.0
    x_dependent = True

    def __call__(self, M, x):
        M = _check_symmetric(M)
        x = _wrap(x)
        return self._eval(M, x)

    def _eval(self, M, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def branches(self, points, directions=None):
        """Branch coefficient matrices, shape ``(B, N, n, n)``."""
        raise NotImplementedError  # pragma: no cover

    def describe(self):
        return {"variant": type(self).__name__, "dim": self.dim,
                "lambda": self.lam, "Lambda": self.Lam}


class LinearOperator(EllipticOperator):
    """``F(M, x) = tr(a(x) M)`` with a periodic coefficient callable.

    ``coeff`` maps points ``(N, n)`` to matrices ``(N, n, n)``; a constant
    matrix is accepted as well.
    """

    def __init__(self, coeff, lam, Lam, dim=None, name="linear"):
        if callable(coeff):
            self._coeff = coeff
            if dim is None:
                raise OperatorError("dim is required for callable coefficients")
            self.x_dependent = True
        else:
            a = np.asarray(coeff, dtype=float)
            _check_symmetric(a)
            dim = a.shape[0]
            self._coeff = lambda p, a=a: np.broadcast_to(a, (len(p),) + a.shape)
            self.x_dependent = False
        if not 0 < lam <= Lam:
            raise OperatorError(f"need 0 < lambda <= Lambda, got {lam}, {Lam}")
        self.dim, self.lam, self.Lam, self.name = int(dim), float(lam), float(Lam), name

    def coeff(self, points):
        p = _wrap(np.atleast_2d(points))
        return np.asarray(self._coeff(p), dtype=float).reshape(len(p), self.dim, self.dim)

    def _eval(self, M, x):
        shape = np.broadcast_shapes(M.shape[:-2], x.shape[:-1])
        xs = np.broadcast_to(x, shape + (self.dim,)).reshape(-1, self.dim)
        Ms = np.broadcast_to(M, shape + (self.dim, self.dim)).reshape(-1, self.dim, self.dim)
        out = np.einsum("kij,kij->k", self.coeff(xs), Ms).reshape(shape)
        return out if out.ndim else float(out)

    def branches(self, points, directions=None):
        return self.coeff(points)[None]

    def validate(self, points, probes=64, seed=0):
        """Check symmetry and the declared eigenvalue bounds at ``points``.

        Uses exact eigenvalues; ``probes`` random unit vectors are also
        tested against the quadratic-form bound.
        """
        a = self.coeff(points)
        if np.abs(a - np.swapaxes(a, -1, -2)).max() > _SYM_TOL * max(1.0, np.abs(a).max()):
            raise OperatorError(f"{self.name}: coefficients are not symmetric")
        ev = np.linalg.eigvalsh(a)
        tol = 1e-12 * self.Lam
        if ev.min() < self.lam - tol or ev.max() > self.Lam + tol:
            raise OperatorError(
                f"{self.name}: eigenvalues in [{ev.min():.6g}, {ev.max():.6g}] "
                f"outside declared [{self.lam}, {self.Lam}]")
        xi = np.random.default_rng(seed).standard_normal((probes, self.dim))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        q = np.einsum("pi,nij,pj->np", xi, a, xi)
        if q.min() < self.lam - tol or q.max() > self.Lam + tol:
            raise OperatorError(f"{self.name}: quadratic form leaves [lambda, Lambda]")
        return ev.min(), ev.max()

    def describe(self):
        d = super().describe()
        d["name"] = self.name
        return d


class BellmanOperator(EllipticOperator):
    """Pointwise minimum of finitely many linear operators (concave in M)."""

    combine = "min"

    def __init__(self, branches, lam=None, Lam=None, name="bellman"):
        branches = list(branches)
        if not branches:
            raise OperatorError("Bellman operator needs at least one branch")
        dims = {b.dim for b in branches}
        if len(dims) != 1:
            raise OperatorError("branch dimensions differ")
        self.dim = dims.pop()
        self.lam = float(lam if lam is not None else min(b.lam for b in branches))
        self.Lam = float(Lam if Lam is not None else max(b.Lam for b in branches))
        for b in branches:
            if b.lam < self.lam - 1e-15 or b.Lam > self.Lam + 1e-15:
                raise OperatorError(f"branch {b.name} constants exceed the operator's")
        self._branches = branches
        self.name = name
        self.x_dependent = any(b.x_dependent for b in branches)

    @property
    def linear_branches(self):
        return list(self._branches)

    def _eval(self, M, x):
        vals = np.stack([np.asarray(b._eval(M, x)) for b in self._branches])
        out = vals.min(axis=0)
        return out if out.ndim else float(out)

    def branches(self, points, directions=None):
        return np.stack([b.coeff(points) for b in self._branches])

    def validate(self, points):
        for b in self._branches:
            b.validate(points)

    def describe(self):
        d = super().describe()
        d.update(name=self.name, n_branches=len(self._branches))
        return d


class PucciOperator(EllipticOperator):
    """Pucci extremal operator, evaluated exactly through eigenvalues.

    For discretisation it is written as ``lam*tr M + (Lam-lam)*opt_P tr(PM)``
    over a finite family of orthogonal projectors built from ``directions``
    (rank one ``xi xi^T/|xi|^2``, their complements in 3-D, 0 and I); the
    optimum is a max for M^+ and a min for M^-.
    """

    x_dependent = False

    def __init__(self, sign, lam, Lam, dim):
        if sign not in (1, -1):
            raise OperatorError("sign must be +1 or -1")
        if not 0 < lam <= Lam:
            raise OperatorError(f"need 0 < lambda <= Lambda, got {lam}, {Lam}")
        self.sign, self.lam, self.Lam, self.dim = sign, float(lam), float(Lam), int(dim)
        self.combine = "max" if sign > 0 else "min"
        self.directions = None

    def _eval(self, M, x):
        out = eval_pucci(self.sign, M, self.lam, self.Lam)
        shape = np.broadcast_shapes(np.shape(out), x.shape[:-1])
        out = np.broadcast_to(out, shape)
        return out.copy() if out.ndim else float(out)

    def projector_family(self, directions):
        n = self.dim
        I = np.eye(n)
        fam = [np.zeros((n, n)), I]
        for xi in np.asarray(directions, dtype=float):
            P = np.outer(xi, xi) / (xi @ xi)
            fam.append(P)
            if n >= 3:
                fam.append(I - P)
        return np.array(fam)

    def branches(self, points, directions=None):
        from .torus import default_directions

        dirs = default_directions(self.dim).offsets if directions is None else directions
        P = self.projector_family(dirs)
        a = self.lam * np.eye(self.dim) + (self.Lam - self.lam) * P
        return np.broadcast_to(a[:, None], (len(a), len(points), self.dim, self.dim))

    def describe(self):
        d = super().describe()
        d["sign"] = self.sign
        return d


class ShiftedOperator(EllipticOperator):
    """``F(M, x) + offset`` for a constant offset."""

    def __init__(self, base, offset):
        self.base = base
        self.offset = float(offset) + base.offset
        self.dim, self.lam, self.Lam = base.dim, base.lam, base.Lam
        self.combine = base.combine
        self.x_dependent = base.x_dependent

    def _eval(self, M, x):
        return self.base._eval(M, x) + (self.offset - self.base.offset)

    def branches(self, points, directions=None):
        return self.base.branches(points, directions=directions)

    def describe(self):
        d = self.base.describe()
        d.update(variant="ShiftedOperator", offset=self.offset)
        return d


def eval_operator(op, M, x):
    return op(M, x)


# ---------------------------------------------------------------- oscillation

def default_probes(n, count=64, seed=0):
    """Unit-Frobenius symmetric probe matrices: the E_ij basis plus random ones."""
    basis = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        basis.append(E)
    for i, j in combinations(range(n), 2):
        E = np.zeros((n, n))
        E[i, j] = E[j, i] = 1.0
        basis.append(E)
    G = np.random.default_rng(seed).standard_normal((count, n, n))
    basis.extend(G + np.swapaxes(G, -1, -2))
    P = np.array(basis)
    return P / np.linalg.norm(P, axis=(-2, -1), keepdims=True)


def beta_is_exact(op):
    return isinstance(op, LinearOperator) or not op.x_dependent


def beta_values(op, xs, x0, probes=None):
    """beta(x, x0) for a batch of points ``xs`` of shape (N, n)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if not op.x_dependent:
        return np.zeros(len(xs))
    if isinstance(op, LinearOperator):
        d = op.coeff(xs) - op.coeff(x0)
        return np.linalg.norm(d, axis=(-2, -1))
    if isinstance(op, ShiftedOperator):
        return beta_values(op.base, xs, x0, probes)
    if probes is None or len(probes) == 0:
        raise OperatorError("probe set required for non-linear operators")
    P = np.asarray(probes, dtype=float)
    P = P / np.linalg.norm(P, axis=(-2, -1), keepdims=True)
    fx = np.stack([np.asarray(op(np.broadcast_to(p, (len(xs),) + p.shape), xs)) for p in P])
    f0 = np.array([op(p, x0[0]) for p in P])
    return np.abs(fx - f0[:, None]).max(axis=0)


def oscillation_beta(op, x, x0, probes=None):
    """Scalar beta(x, x0); exact for linear operators, a probe lower bound otherwise."""
    return float(beta_values(op, np.asarray(x, dtype=float)[None], x0, probes)[0])


@dataclass
class OscillationReport:
    x0: tuple
    radii: list
    local_norms: dict
    raw_integrals: dict
    exact: bool
    beta_field: object = None
    holder_fit: tuple = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "x0": list(self.x0),
            "radii": list(self.radii),
            "local_norms": {str(r): v for r, v in self.local_norms.items()},
            "raw_integrals": {str(r): v for r, v in self.raw_integrals.items()},
            "beta_exact": self.exact,
            "holder_fit": None if self.holder_fit is None
            else {"C": self.holder_fit[0], "alpha": self.holder_fit[1]},
            "notes": list(self.notes),
        }


def oscillation_norms(op, x0, radii, points_per_axis=32, probes=None, field_res=32):
    """Local L^n averages of beta(., x0) over cubes Q_r(x0).

    Quadrature is the midpoint rule with a common spacing
    ``min(radii)/points_per_axis``, so dyadic radii give nested node sets and
    the raw integrals are monotone in r.
    """
    from .torus import TorusGrid

    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise OperatorError("radii must be positive")
    n = op.dim
    x0 = np.asarray(x0, dtype=float).reshape(n)
    if probes is None and not beta_is_exact(op):
        probes = default_probes(n)
    s = min(radii) / points_per_axis
    norms, raw = {}, {}
    for r in radii:
        k = max(1, int(round(r / s)))
        ax = -r / 2 + (np.arange(k) + 0.5) * (r / k)
        pts = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n) + x0
        b = beta_values(op, pts, x0, probes)
        integral = float(np.sum(np.abs(b) ** n) * (r / k) ** n)
        raw[r] = integral
        norms[r] = (integral / r ** n) ** (1.0 / n)
    grid = TorusGrid(n, field_res)
    bf = grid.sample(lambda p: beta_values(op, p, x0, probes))
    rep = OscillationReport(tuple(x0.tolist()), radii, norms, raw, beta_is_exact(op), bf)
    if not rep.exact:
        rep.notes.append("beta is a probe-set lower bound")
    vals = np.array([norms[r] for r in radii])
    if len(radii) >= 2 and np.all(vals > 0):
        slope, icpt = np.polyfit(np.log(radii), np.log(vals), 1)
        rep.holder_fit = (float(np.exp(icpt)), float(slope))
    elif len(radii) >= 2:
        rep.notes.append("holder fit degenerate (zero norms)")
    return rep


# -------------------------------------------------------------- ellipticity

def random_symmetric(rng, n, scale=1.0):
    G = rng.standard_normal((n, n))
    return scale * (G + G.T) / 2.0


def random_psd(rng, n, scale=1.0):
    r = int(rng.integers(1, n + 1))
    G = rng.standard_normal((n, r))
    return scale * (G @ G.T) / r


@dataclass
class SandwichReport:
    passed: bool
    samples: int
    lower_margin: float
    upper_margin: float
    slack: float
    witness: dict = None

    def to_dict(self):
        return {"passed": self.passed, "samples": self.samples,
                "lower_margin": self.lower_margin, "upper_margin": self.upper_margin,
                "slack": self.slack, "witness": self.witness}

    def require(self):
        if not self.passed:
            raise PropertyFailure("Pucci sandwich violated", self.witness)
        return self


def check_uniform_ellipticity(op, samples=200, seed=0, slack=1e-10):
    """Sample ``M^-(N) <= F(M+N,x) - F(M,x) <= M^+(N)`` with N >= 0.

    Margins are ``min(diff - M^-(N))`` and ``min(M^+(N) - diff)``; both are
    non-negative on success.
    """
    if samples < 1:
        raise OperatorError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    n = op.dim
    lo, hi, wit = np.inf, np.inf, None
    for _ in range(samples):
        M = random_symmetric(rng, n, 2.0)
        N = random_psd(rng, n, 2.0)
        x = rng.random(n) - 0.5
        d = op(M + N, x) - op(M, x)
        ml = d - eval_pucci(-1, N, op.lam, op.Lam)
        mu = eval_pucci(1, N, op.lam, op.Lam) - d
        if ml < lo:
            lo = ml
            if ml < -slack:
                wit = {"M": M.tolist(), "N": N.tolist(), "x": x.tolist(), "side": "lower"}
        if mu < hi:
            hi = mu
            if mu < -slack:
                wit = {"M": M.tolist(), "N": N.tolist(), "x": x.tolist(), "side": "upper"}
    return SandwichReport(bool(lo >= -slack and hi >= -slack), samples, float(lo), float(hi),
                          slack, wit)
