"""Named analytic operator and datum families.

A preset is referenced as ``name`` plus a parameter dict; every preset
is a deterministic function of its parameters (random families take an
integer ``seed``).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .operators import BellmanOperator, LinearOperator, PucciOperator, ShiftedOperator
from .torus import load_field

TWO_PI = 2.0 * np.pi


@dataclass
class Preset:
    name: str
    kind: str  # "operator" or "datum"
    doc: str
    params: dict = field(default_factory=dict)
    factory: object = None

    def listing(self):
        return {"name": self.name, "kind": self.kind, "doc": self.doc,
                "params": dict(self.params)}


def _laplace(dim):
    return lambda: LinearOperator(np.eye(dim), 1.0, 1.0, name=f"laplace{dim}d")


def _osc1d(eps=1.0, mean=2.0):
    return LinearOperator(lambda p: (mean + eps * np.sin(TWO_PI * p[:, 0]))[:, None, None],
                          mean - abs(eps), mean + abs(eps), dim=1, name="osc1d")


def _smooth2d(amp=0.5):
    I = np.eye(2)
    return LinearOperator(lambda p: (1.0 + amp * np.sin(TWO_PI * p[:, 0]))[:, None, None] * I,
                          1.0 - abs(amp), 1.0 + abs(amp), dim=2, name="smooth2d")


def _diagcos(dim=3, lam=1.0, Lam=1.5):
    mid, half = 0.5 * (lam + Lam), 0.5 * (Lam - lam)

    def coeff(p):
        a = np.zeros((len(p), dim, dim))
        for i in range(dim):
            a[:, i, i] = mid + half * np.cos(TWO_PI * p[:, i])
        return a

    return LinearOperator(coeff, lam, Lam, dim=dim, name="diagcos")


def _constdiag(diag=(1.0, 2.0)):
    d = np.asarray(diag, dtype=float)
    return LinearOperator(np.diag(d), float(d.min()), float(d.max()), name="constdiag")


def random_branch(rng, dim, lam, Lam, name="branch"):
    """Diagonally dominant periodic coefficient with spectrum inside [lam, Lam]."""
    span = Lam - lam
    kv = rng.integers(-1, 2, size=(dim, dim))
    kv[np.all(kv == 0, axis=1), 0] = 1
    phase = rng.random(dim) * TWO_PI
    ratio = rng.random(dim)
    lo_off = 0.1 * span / max(dim - 1, 1)
    off0 = rng.uniform(-1, 1, size=(dim, dim)) * lo_off * 0.5
    off1 = rng.uniform(-1, 1, size=(dim, dim)) * lo_off * 0.5
    offk = rng.integers(1, 3, size=dim)

    def coeff(p):
        a = np.zeros((len(p), dim, dim))
        for i in range(dim):
            arg = TWO_PI * (p @ kv[i]) + phase[i]
            u = ratio[i] * np.sin(arg) + (1 - ratio[i]) * np.cos(2 * arg)
            a[:, i, i] = lam + 0.1 * span + 0.8 * span * (0.5 + 0.5 * u)
        for i in range(dim):
            for j in range(i + 1, dim):
                o = off0[i, j] + off1[i, j] * np.sin(TWO_PI * offk[i] * p[:, j])
                a[:, i, j] = a[:, j, i] = o
        return a

    return LinearOperator(coeff, lam, Lam, dim=dim, name=name)


def _bellman_random(k=3, dim=2, seed=7, lam=1.0, Lam=2.0):
    rng = np.random.default_rng(seed)
    branches = [random_branch(rng, dim, lam, Lam, name=f"branch{b}") for b in range(k)]
    return BellmanOperator(branches, lam, Lam, name=f"bellman{k}")


def _pucci(sign=1, lam=1.0, Lam=2.0, dim=2):
    return PucciOperator(int(sign), lam, Lam, dim)


_OPERATORS = {
    "laplace1d": Preset("laplace1d", "operator", "a = 1 in 1-D", {}, _laplace(1)),
    "laplace2d": Preset("laplace2d", "operator", "a = I in 2-D", {}, _laplace(2)),
    "laplace3d": Preset("laplace3d", "operator", "a = I in 3-D", {}, _laplace(3)),
    "osc1d": Preset("osc1d", "operator", "1-D a(x) = mean + eps*sin(2 pi x)",
                    {"eps": 1.0, "mean": 2.0}, _osc1d),
    "smooth2d": Preset("smooth2d", "operator", "2-D a(x) = (1 + amp*sin(2 pi x1)) I",
                       {"amp": 0.5}, _smooth2d),
    "diagcos": Preset("diagcos", "operator",
                      "a(x) = diag(mid + half*cos(2 pi x_i)), spectrum [lam, Lam]",
                      {"dim": 3, "lam": 1.0, "Lam": 1.5}, _diagcos),
    "constdiag": Preset("constdiag", "operator", "constant diagonal coefficient",
                        {"diag": [1.0, 2.0]}, _constdiag),
    "bellman": Preset("bellman", "operator",
                      "min of k random periodic diagonally dominant branches",
                      {"k": 3, "dim": 2, "seed": 7, "lam": 1.0, "Lam": 2.0}, _bellman_random),
    "pucci": Preset("pucci", "operator", "Pucci extremal operator (sign +1 or -1)",
                    {"sign": 1, "lam": 1.0, "Lam": 2.0, "dim": 2}, _pucci),
}


def _datum_zero():
    return lambda p: np.zeros(len(p))


def _datum_const(c=1.0):
    return lambda p: np.full(len(p), float(c))


def _datum_sin(amp=1.0, axis=0):
    return lambda p: amp * np.sin(TWO_PI * p[:, axis])


def _datum_cos(amp=1.0, axis=1):
    return lambda p: amp * np.cos(TWO_PI * p[:, axis])


def _datum_sinsum(amp=1.0, offset=0.0):
    return lambda p: offset + amp * np.sin(TWO_PI * p).sum(axis=1)


_DATUMS = {
    "zero": Preset("zero", "datum", "f = 0", {}, _datum_zero),
    "const": Preset("const", "datum", "f = c", {"c": 1.0}, _datum_const),
    "sin": Preset("sin", "datum", "f = amp*sin(2 pi x_axis)", {"amp": 1.0, "axis": 0},
                  _datum_sin),
    "cos": Preset("cos", "datum", "f = amp*cos(2 pi x_axis)", {"amp": 1.0, "axis": 1},
                  _datum_cos),
    "sinsum": Preset("sinsum", "datum", "f = offset + amp*sum_i sin(2 pi x_i)",
                     {"amp": 1.0, "offset": 0.0}, _datum_sinsum),
    "file": Preset("file", "datum", "field file (csv or binary) on the solve grid",
                   {"path": ""}, None),
}


def preset_catalog():
    return [p.listing() for p in list(_OPERATORS.values()) + list(_DATUMS.values())]


def _merge(preset, params):
    params = dict(params or {})
    allowed = set(preset.params) | ({"offset"} if preset.kind == "operator" else set())
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"preset {preset.name!r}: unknown parameters {sorted(unknown)}")
    merged = dict(preset.params)
    merged.update(params)
    return merged


def make_operator(name, params=None):
    try:
        preset = _OPERATORS[name]
    except KeyError:
        raise ConfigError(f"unknown operator preset {name!r}") from None
    p = _merge(preset, params)
    offset = p.pop("offset", 0.0)
    op = preset.factory(**p)
    return ShiftedOperator(op, offset) if offset else op


def make_datum(name, grid, params=None):
    if name == "file":
        path = (params or {}).get("path")
        if not path:
            raise ConfigError("datum 'file' needs a path")
        fld = load_field(path)
        if fld.grid != grid:
            raise ConfigError(f"datum file grid {fld.grid} differs from solve grid {grid}")
        return fld
    try:
        preset = _DATUMS[name]
    except KeyError:
        raise ConfigError(f"unknown datum preset {name!r}") from None
    p = _merge(preset, params)
    return grid.sample(preset.factory(**p))


def datum_function(name, params=None):
    """Analytic datum as a callable on points (file data is not analytic)."""
    preset = _DATUMS.get(name)
    if preset is None or preset.factory is None:
        raise ConfigError(f"datum {name!r} has no analytic form")
    return preset.factory(**_merge(preset, params))
