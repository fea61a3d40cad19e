"""Experiment configuration: a key = value text file plus ``--set`` overrides.

Example::

    subcommand = cell
    op = laplace2d
    datum = zero
    grid.res = 64
    run.A = 1,0; 0,1
    seed = 0

Keys are ``subcommand``, ``seed``, ``out``, ``op`` / ``op.<param>``,
``datum`` / ``datum.<param>``, ``grid.res``, ``solver.<field>`` and
``run.<param>`` (per subcommand, see :data:`RUN_DEFAULTS`). Matrices are
written row-wise with ``;`` between rows; lists use commas.
"""

from dataclasses import dataclass, field
import hashlib
import json
import os

from .errors import ConfigError

SUBCOMMANDS = ("cell", "homogenize", "ellipticity", "concavity", "recession", "liouville",
               "blowdown", "exterior", "decay", "oscillation")

SOLVER_DEFAULTS = {"tol": 1e-10, "max_iters": 200, "directions": "default",
                   "linear_solver": "auto", "tie": 1e-14}

# None marks "derived at run time" (identity, <f>, zeros, ...)
RUN_DEFAULTS = {
    "cell": {"A": None, "uniqueness": False},
    "homogenize": {"A": None},
    "ellipticity": {"samples": 10, "slack": None, "scale": 1.0, "pointwise_samples": 200},
    "concavity": {"samples": 10, "slack": None, "scale": 1.0},
    "recession": {"target": None, "base": None, "bracket": [-1.0, 1.0],
                  "ts": [-1.0, -0.5, 0.0, 0.5, 1.0]},
    "liouville": {"base": None, "b": None, "c": 0.0, "R": 8, "margin": 2, "shift": 0.0,
                  "pollution": 0.0, "tol_existence": 1e-6},
    "blowdown": {"base": None, "b": None, "c": 0.0, "radii": [2.0, 4.0, 8.0, 16.0]},
    "exterior": {"base": None, "r_in": 1.0, "R_out": 8.0, "phi": 1.0, "delta": 0.5,
                 "r0": None, "symmetry": "auto"},
    "decay": {"base": None, "r_in": 1.0, "R_out": 16.0, "phi": 1.0, "radii": None,
              "slack": 0.2, "symmetry": "auto"},
    "oscillation": {"x0": None, "radii": [0.5, 0.25, 0.125], "points_per_axis": 16},
}

DEFAULT_OPERATORS = {"exterior": "laplace3d", "decay": "laplace3d", "liouville": "smooth2d",
                     "blowdown": "smooth2d"}
DEFAULT_DATUMS = {"liouville": "cos", "blowdown": "cos"}
DEFAULT_RES = {"exterior": 8, "decay": 8, "blowdown": 32, "liouville": 32}


def parse_value(text):
    """Best-effort literal: bool, int, float, list, matrix (rows split by ``;``) or str."""
    t = text.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    if t.lower() in ("none", "null", ""):
        return None
    if ";" in t:
        return [[_number(c) for c in row.split(",") if c.strip()] for row in t.split(";")
                if row.strip()]
    if "," in t:
        items = [c for c in t.split(",") if c.strip()]
        try:
            return [_number(c) for c in items]
        except ValueError:
            return [c.strip() for c in items]
    try:
        return _number(t)
    except ValueError:
        return t


def _number(t):
    t = t.strip()
    try:
        return int(t)
    except ValueError:
        return float(t)


def _coerce(value, default, where):
    """Match ``value`` to the type of ``default`` (None default accepts anything)."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            return str(value)
        return value
    if isinstance(default, (list, tuple)):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return [value]
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    return value


@dataclass
class ExperimentConfig:
    subcommand: str
    op: str = None
    op_params: dict = field(default_factory=dict)
    datum: str = None
    datum_params: dict = field(default_factory=dict)
    res: int = None
    solver: dict = field(default_factory=lambda: dict(SOLVER_DEFAULTS))
    run: dict = field(default_factory=dict)
    out: str = "results"
    seed: int = 0

    def to_dict(self):
        return {"subcommand": self.subcommand, "op": self.op, "op_params": self.op_params,
                "datum": self.datum, "datum_params": self.datum_params, "res": self.res,
                "solver": self.solver, "run": self.run, "out": self.out, "seed": self.seed}

    def to_text(self):
        """Serialize back to the key = value format (round-trips through :func:`parse`)."""
        lines = [f"subcommand = {self.subcommand}", f"seed = {self.seed}", f"out = {self.out}",
                 f"op = {self.op}", f"datum = {self.datum}", f"grid.res = {self.res}"]
        lines += [f"op.{k} = {_fmt(v)}" for k, v in sorted(self.op_params.items())]
        lines += [f"datum.{k} = {_fmt(v)}" for k, v in sorted(self.datum_params.items())]
        lines += [f"solver.{k} = {_fmt(v)}" for k, v in sorted(self.solver.items())]
        lines += [f"run.{k} = {_fmt(v)}" for k, v in sorted(self.run.items())]
        return "\n".join(lines) + "\n"

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], (list, tuple)):
            text = "; ".join(",".join(_fmt(c) for c in row) for row in v)
            return text + (";" if len(v) == 1 else "")
        return ",".join(_fmt(c) for c in v) + ("," if len(v) == 1 else "")
    return str(v)


def _read_pairs(text, source):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        pairs.append((key, val, f"{source}:{lineno}"))
    return pairs


def parse(text, overrides=(), source="<config>", subcommand=None):
    """Build an :class:`ExperimentConfig` from config text and ``key=value`` overrides.

    ``subcommand`` (from the command line) must agree with the file's
    ``subcommand`` key when both are present.
    """
    pairs = _read_pairs(text, source)
    for i, ov in enumerate(overrides, 1):
        if "=" not in ov:
            raise ConfigError(f"--set #{i}: expected key=value, got {ov!r}")
        k, v = ov.split("=", 1)
        pairs.append((k.strip(), v.strip(), f"--set #{i}"))
    raw = {}
    for key, val, where in pairs:
        raw[key] = (val, where)
    if "subcommand" in raw:
        sub, where = raw.pop("subcommand")
        if subcommand is not None and sub != subcommand:
            raise ConfigError(f"{where}: field 'subcommand' is {sub!r} but {subcommand!r} "
                              "was requested")
    elif subcommand is not None:
        sub = subcommand
    else:
        raise ConfigError(f"{source}: missing field 'subcommand'")
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"field 'subcommand': unknown value {sub!r} (choose from "
                          f"{', '.join(SUBCOMMANDS)})")
    cfg = ExperimentConfig(sub)
    defaults = RUN_DEFAULTS[sub]
    cfg.run = dict(defaults)
    for key, (val, where) in raw.items():
        loc = f"{where}: field '{key}'"
        v = parse_value(val)
        if key == "seed":
            cfg.seed = _coerce(v, 0, loc)
        elif key == "out":
            cfg.out = val
        elif key == "op":
            cfg.op = val
        elif key == "datum":
            cfg.datum = val
        elif key == "grid.res":
            cfg.res = _coerce(v, 0, loc)
            if cfg.res < 4 or cfg.res % 2:
                raise ConfigError(f"{loc}: resolution must be an even integer >= 4")
        elif key.startswith("op."):
            cfg.op_params[key[3:]] = v
        elif key.startswith("datum."):
            cfg.datum_params[key[6:]] = val if key == "datum.path" else v
        elif key.startswith("solver."):
            name = key[7:]
            if name not in SOLVER_DEFAULTS:
                raise ConfigError(f"{loc}: unknown solver setting")
            cfg.solver[name] = _coerce(v, SOLVER_DEFAULTS[name], loc)
        elif key.startswith("run."):
            name = key[4:]
            if name not in defaults:
                raise ConfigError(f"{loc}: not a parameter of '{sub}' "
                                  f"(known: {', '.join(sorted(defaults))})")
            cfg.run[name] = _coerce(v, defaults[name], loc)
        else:
            raise ConfigError(f"{loc}: unknown key")
    cfg.op = cfg.op or DEFAULT_OPERATORS.get(sub, "laplace2d")
    cfg.datum = cfg.datum or DEFAULT_DATUMS.get(sub, "zero")
    cfg.res = cfg.res or DEFAULT_RES.get(sub, 64)
    path = cfg.datum_params.get("path")
    if cfg.datum == "file" and (not path or not os.path.exists(path)):
        raise ConfigError(f"field 'datum.path': file {path!r} does not exist")
    return cfg


def load(path, overrides=(), subcommand=None):
    if path is None:
        return parse("", overrides, subcommand=subcommand)
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path) as fh:
        return parse(fh.read(), overrides, source=path, subcommand=subcommand)
