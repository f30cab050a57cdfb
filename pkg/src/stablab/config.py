"""Experiment configuration: a TOML file with fixed sections and strict keys.

Every section is optional and falls back to the defaults below.  Unknown
sections or keys, wrong value types and violated constraints raise
``ConfigError`` naming the field and, when it can be located, the line.

Schema (defaults shown)::

    seed = 0
    label = ""

    [grid]       n_axis = 24, extent = 1.0
    [chain]      widths = [6, 4, 3, 2], min_width = 2, transition = 2, min_transition = 2
    [patches]    gd = {face = "x0"}, gn = {face = "x1"}        # or "full"
    [potentials] q1 = {...}, dq = {...}                          # profile tables, see potentials
    [solver]     ks = [2.0], max_kh = 0.6, gap_constant = 0.01, override = false
    [schedule]   c_a = 0.1, c_k = 1.0, C0 = 2.0, mu = 2.0
    [cgo]        k = 2.0, xi = [1.0, 0.0, 0.0], a = [4, 8, 16, 32], tol = 1e-10, lattice = false
    [runge]      k = 2.0, lambdas = [...], mode = "auto", xi = [1.0, 0.0, 0.0], a = 2.0
    [carleman]   gamma = 1.0, h0 = 0.5, n_h = 4, E = 0.5, n_test = 20, forms = ["lemma31", "lemma32"]
    [ucp]        k = 2.0, h0 = 0.5, n_h = 6, amplitude = 1.0, gamma = 1.0
    [probe]      k = 4.0, a = 6.0, xi = [[0, 0, 0]], lam = 1e-8
    [sweep]      the fields of recon.SweepSettings
"""
from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

_NUM = (int, float)

DEFAULTS: dict = {
    "seed": 0,
    "label": "",
    "grid": {"n_axis": 24, "extent": 1.0},
    "chain": {"widths": [6, 4, 3, 2], "min_width": 2, "transition": 2, "min_transition": 2},
    "patches": {"gd": {"face": "x0"}, "gn": {"face": "x1"}},
    "potentials": {
        "q1": {"type": "bump", "center": [0.5, 0.5, 0.5], "radius": 0.2, "amplitude": 0.5},
        "dq": {"type": "bump", "center": [0.5, 0.5, 0.5], "radius": 0.15, "amplitude": 1.0},
    },
    "solver": {"ks": [2.0], "max_kh": 0.6, "gap_constant": 0.01, "override": False},
    "schedule": {"c_a": 0.1, "c_k": 1.0, "C0": 2.0, "mu": 2.0},
    "cgo": {"k": 2.0, "xi": [1.0, 0.0, 0.0], "a": [4.0, 8.0, 16.0, 32.0], "tol": 1e-10, "lattice": False},
    "runge": {"k": 2.0, "lambdas": [1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12], "mode": "auto",
              "xi": [1.0, 0.0, 0.0], "a": 2.0},
    "carleman": {"gamma": 1.0, "h0": 0.5, "n_h": 4, "E": 0.5, "n_test": 20,
                 "forms": ["lemma31", "lemma32"]},
    "ucp": {"k": 2.0, "h0": 0.5, "n_h": 6, "amplitude": 1.0, "gamma": 1.0},
    "probe": {"k": 4.0, "a": 6.0, "xi": [[0.0, 0.0, 0.0]], "lam": 1e-8},
    "sweep": {"n_axis": 32, "extent": 1.0, "widths": [5, 4, 3, 2],
              "q1": {"type": "bump", "center": [0.5, 0.5, 0.5], "radius": 0.24, "amplitude": 0.5},
              "dq": {"type": "plateau", "center": [0.5, 0.5, 0.5], "half_width": 0.25, "ramp": 0.08,
                     "amplitude": 0.02},
              "ks": [2.0, 4.0, 6.0, 8.0], "pad": 6, "lattice_cgo": True, "gap_c": 0.01, "max_kh": 0.6,
              "r3_a": [4.0, 8.0, 16.0, 32.0], "r3_k": 2.0, "r3_tau": 2.0, "delta_tol": 1e-10},
}

# keys whose values are free-form tables (validated by their consumers)
_FREEFORM = {("patches", "gd"), ("patches", "gn"), ("potentials", "q1"), ("potentials", "dq"),
             ("sweep", "q1"), ("sweep", "dq")}


def _line_of(text: str, section: str | None, key: str) -> int | None:
    current = None
    pat = re.compile(r"^\s*(" + re.escape(key) + r'|"' + re.escape(key) + r'")\s*=')
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"^\s*\[\s*([^\]]+?)\s*\]", line)
        if m:
            current = m.group(1)
            if section is not None and current == section and key == "":
                return i
            continue
        if current == section and pat.match(line):
            return i
    return None


def _where(text, section, key):
    name = f"{section}.{key}" if section else key
    line = _line_of(text, section, key) if text else None
    return f"{name} (line {line})" if line else name


def _check_type(value, default, where):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, _NUM):
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, dict):
        ok = isinstance(value, (dict, str))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {type(value).__name__}")


@dataclass
class ExperimentConfig:
    data: dict
    source: str = "<defaults>"
    text: str = field(default="", repr=False)

    def __getitem__(self, section):
        return self.data[section]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def set_override(self):
        self.data["solver"]["override"] = True

    def validate(self):
        """Check every static constraint before any solve runs."""
        from .geometry import build_neighborhoods, build_patch, make_grid
        from .potentials import make_profile

        d = self.data
        g = d["grid"]
        if int(g["n_axis"]) < 8:
            raise ConfigError(f"{_where(self.text, 'grid', 'n_axis')}: need at least 8 nodes per axis")
        if float(g["extent"]) <= 0:
            raise ConfigError(f"{_where(self.text, 'grid', 'extent')}: must be positive")
        grid = make_grid(g["n_axis"], g["extent"])
        try:
            build_neighborhoods(grid, d["chain"]["widths"], d["chain"]["min_width"])
        except ConfigError as exc:
            raise ConfigError(f"{_where(self.text, 'chain', 'widths')}: {exc}") from None
        for name in ("gd", "gn"):
            try:
                build_patch(grid, d["patches"][name])
            except ConfigError as exc:
                raise ConfigError(f"{_where(self.text, 'patches', name)}: {exc}") from None
        for sec in ("potentials", "sweep"):
            for name in ("q1", "dq"):
                try:
                    make_profile(d[sec][name])
                except (ConfigError, KeyError, TypeError) as exc:
                    raise ConfigError(f"{_where(self.text, sec, name)}: {exc}") from None
        s = d["solver"]
        h = grid.spacing
        for k in s["ks"]:
            if not isinstance(k, _NUM) or k <= 0:
                raise ConfigError(f"{_where(self.text, 'solver', 'ks')}: wavenumbers must be positive")
            if k * h > s["max_kh"] and not s["override"]:
                raise ConfigError(f"{_where(self.text, 'solver', 'ks')}: k*h = {k * h:.3g} exceeds "
                                  f"max_kh = {s['max_kh']:g} (use --override to proceed)")
        if s["gap_constant"] <= 0:
            raise ConfigError(f"{_where(self.text, 'solver', 'gap_constant')}: must be positive")
        sw = d["sweep"]
        hs = float(sw["extent"]) / (int(sw["n_axis"]) - 1)
        for k in sw["ks"]:
            if k * hs > sw["max_kh"] and not s["override"]:
                raise ConfigError(f"{_where(self.text, 'sweep', 'ks')}: k*h = {k * hs:.3g} exceeds max_kh")
        try:
            build_neighborhoods(make_grid(sw["n_axis"], sw["extent"]), sw["widths"])
        except ConfigError as exc:
            raise ConfigError(f"{_where(self.text, 'sweep', 'widths')}: {exc}") from None
        sc = d["schedule"]
        if sc["mu"] <= 0:
            raise ConfigError(f"{_where(self.text, 'schedule', 'mu')}: must be positive")
        c = d["carleman"]
        if not 0 < c["h0"] <= 1:
            raise ConfigError(f"{_where(self.text, 'carleman', 'h0')}: must lie in (0, 1]")
        if not 0 <= c["E"] <= 1:
            raise ConfigError(f"{_where(self.text, 'carleman', 'E')}: must lie in [0, 1]")
        for f in c["forms"]:
            if f not in ("lemma31", "lemma32"):
                raise ConfigError(f"{_where(self.text, 'carleman', 'forms')}: unknown form {f!r}")
        if d["runge"]["mode"] not in ("auto", "dense", "matrix_free"):
            raise ConfigError(f"{_where(self.text, 'runge', 'mode')}: unknown mode")
        if any(x <= 0 for x in d["runge"]["lambdas"]):
            raise ConfigError(f"{_where(self.text, 'runge', 'lambdas')}: must be positive")
        return self


def _merge(raw: dict, text: str) -> dict:
    data = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {_where(text, None, key)}")
        default = DEFAULTS[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{_where(text, None, key)}: expected a table")
            for sub, v in value.items():
                if sub not in default:
                    raise ConfigError(f"unknown key {_where(text, key, sub)}")
                _check_type(v, default[sub], _where(text, key, sub))
                data[key][sub] = v if (key, sub) in _FREEFORM else copy.deepcopy(v)
        else:
            _check_type(value, default, _where(text, None, key))
            data[key] = value
    return data


def load_config(path=None, validate: bool = True) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig(copy.deepcopy(DEFAULTS))
        return cfg.validate() if validate else cfg
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        where = ""
        if getattr(exc, "lineno", None) is not None:
            where = f" (line {exc.lineno}, column {exc.colno})"
        msg = getattr(exc, "msg", str(exc))
        raise ConfigError(f"{p}: malformed config{where}: {msg}") from None
    cfg = ExperimentConfig(_merge(raw, text), str(p), text)
    return cfg.validate() if validate else cfg


def config_from_dict(raw: dict, validate: bool = True) -> ExperimentConfig:
    cfg = ExperimentConfig(_merge(raw, ""))
    return cfg.validate() if validate else cfg
