# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

import json
import os
from configparser import RawConfigParser

from .bounds import PreconditionError
from .coupling import CouplingParams
from .mobility import SimConfig
from .tessellation import GeometryError, ScaleParams, ScaleRangeError, check_w
from .utils import list_directory

import logging
log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Carries every (field, message) problem found in a configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        Exception.__init__(self, "; ".join("%s: %s" % e for e in self.errors))


# Command blocks and their defaults; None means "derive it".
BLOCKS = {
    "percolation": {
        "t_slices": 10, "half_width": 3, "use": "E", "mode": "detect",
        "disp_mode": "checked", "P": None,
    },
    "evasion": {
        "t_slices": 10, "half_cells": None, "mode": "closure", "delta_safe": None,
    },
    "coupling": {
        "d": 1, "delta": 16.0, "ell": 1.0, "K": 29.0, "K_inner": 3.0, "eps": 0.5,
        "beta": 150.0, "c1": 1.0, "c2": 1.0, "extra": 0.0, "xi": 0.25, "m_sep": 1.0,
    },
    "phase_scan": {
        "lambdas": [0.05, 30.0],
    },
    "ppp_check": {
        "lam": 2.0, "delta": 5.0, "replicas": 500, "confinement_paths": 10000,
    },
    "weights": {
        "k_max": 10,
    },
    "tessellation": {
        "k_max": 3, "half_i": 3, "half_tau": 3,
    },
}

# Types of the keys whose default is None
TYPES = {
    "m": int, "c_mix": float, "beta": float, "P": float, "threads": int,
    "half_cells": int, "delta_safe": float,
}

ALIASES = {"lambda": "lam"}


def _convert(key, value, default):
    if value is None:
        return None
    kind = TYPES.get(key) or type(default)
    if kind is list:
        if isinstance(value, str):
            value = json.loads(value) if value.strip().startswith("[") else value.split(",")
        return [float(v) for v in value]
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        return None
    if kind is int:
        number = float(value)
        if not number.is_integer():
            raise ValueError("expected an integer, got %r" % value)
        return int(number)
    return kind(value)


class Config(object):
    d = 2
    lam = 1.0
    r = 1.0
    ell = 1.0
    eps = 0.5
    eta = 1
    m = None
    w = 1.0
    kappa = 2
    c_mix = None
    beta = None
    L = 5.0
    P = None
    s = 32
    boundary = "padded"
    q = 3.0
    variance_rate = 1.0
    max_nodes = 5000000
    seed = 0
    replicas = 200
    threads = None
    out = "stsim-out"
    filename = None
    options = None

    scalars = ("d", "lam", "r", "ell", "eps", "eta", "m", "w", "kappa", "c_mix", "beta",
               "L", "P", "s", "boundary", "q", "variance_rate", "max_nodes", "seed",
               "replicas", "threads", "out")

    def __init__(self):
        self.blocks = dict((name, dict(values)) for name, values in BLOCKS.items())
        self._params = None

    def load_config(self, filename):
        self.filename = filename
        if filename.endswith(".json"):
            try:
                with open(filename) as f:
                    data = json.load(f)
            except (IOError, OSError) as e:
                raise ConfigError([("config", "cannot read %s: %s" % (filename, e))])
            except ValueError as e:
                raise ConfigError([("config", "malformed JSON in %s: %s" % (filename, e))])
            if not isinstance(data, dict):
                raise ConfigError([("config", "top level of %s must be an object" % filename)])
            self.update(data)
            return
        self.options = RawConfigParser()
        # keep option names as written
        self.options.optionxform = str
        if not self.options.read([filename]):
            raise ConfigError([("config", "couldn't load %s" % filename)])
        if self.options.has_option("stsim", "include_dir"):
            config_dir = self.options.get("stsim", "include_dir")
            configs = [os.path.join(config_dir, c) for c in list_directory(config_dir)]
            if not self.options.read([filename] + configs):
                log.warning("Couldn't load %s", config_dir)
        data = {}
        if self.options.has_section("stsim"):
            data.update((k, v) for k, v in self.options.items("stsim") if k != "include_dir")
        for name in BLOCKS:
            if self.options.has_section(name):
                data[name] = dict(self.options.items(name))
        self.update(data)

    def update(self, data):
        """Fill fields from a mapping of scalars and command blocks."""
        errors = []
        for key, value in data.items():
            key = ALIASES.get(key, key)
            if key in BLOCKS:
                if not isinstance(value, dict):
                    errors.append((key, "must be a section of options"))
                    continue
                for option, raw in value.items():
                    if option not in BLOCKS[key]:
                        errors.append(("%s.%s" % (key, option), "unknown option"))
                        continue
                    try:
                        self.blocks[key][option] = _convert(option, raw, BLOCKS[key][option])
                    except (TypeError, ValueError) as e:
                        errors.append(("%s.%s" % (key, option), str(e)))
            elif key in self.scalars:
                try:
                    setattr(self, key, _convert(key, value, getattr(Config, key)))
                except (TypeError, ValueError) as e:
                    errors.append((key, str(e)))
            else:
                errors.append((key, "unknown option"))
        self._params = None
        if errors:
            raise ConfigError(errors)

    def override(self, **kwargs):
        self.update(dict((k, v) for k, v in kwargs.items() if v is not None))

    def get(self, section, option):
        if section == "stsim" and option in self.scalars:
            return getattr(self, option)
        if self.options and self.options.has_option(section, option):
            return self.options.get(section, option)
        if section in self.blocks:
            return self.blocks[section].get(option)
        return None

    def block(self, name):
        return dict(self.blocks[name])

    def scale_params(self):
        if self._params is None:
            self._params = ScaleParams(d=self.d, ell=self.ell, eps=self.eps, eta=self.eta, m=self.m,
                                       w=self.w, kappa=self.kappa, lam=self.lam, r=self.r,
                                       c_mix=self.c_mix, beta=self.beta)
        return self._params

    @property
    def n(self):
        return self.scale_params().n

    def sim_config(self, **kwargs):
        values = dict(d=self.d, lam=self.lam, r=self.r, L=self.L, beta=self.scale_params().beta,
                      s=self.s, P=self.P, boundary=self.boundary, seed=self.seed,
                      variance_rate=self.variance_rate, q=self.q, max_nodes=self.max_nodes)
        values.update(kwargs)
        return SimConfig(**values)

    def coupling_params(self):
        block = self.block("coupling")
        return CouplingParams(d=block["d"], delta=block["delta"], ell=block["ell"], K=block["K"],
                              K_inner=block["K_inner"], eps=block["eps"], beta=block["beta"],
                              c1=block["c1"], c2=block["c2"])

    def validate(self):
        """Check everything up front; raises ConfigError listing each problem."""
        errors = []
        try:
            p = self.scale_params()
        except GeometryError as e:
            field = "m" if "n^d" in str(e) else "model"
            errors.append((field, str(e)))
            p = None
        except ScaleRangeError as e:
            errors.append(("kappa", str(e)))
            p = None
        if p is not None:
            self.m = p.m
            self.beta = p.beta
            self.c_mix = p.c_mix
            check_w(p)
        if self.r <= 0:
            errors.append(("r", "must be positive"))
        if self.L <= 0:
            errors.append(("L", "must be positive"))
        if self.s < 1:
            errors.append(("s", "must be at least 1"))
        if self.boundary not in ("padded", "torus"):
            errors.append(("boundary", "must be 'padded' or 'torus'"))
        if self.replicas < 1:
            errors.append(("replicas", "must be at least 1"))
        if self.threads is not None and self.threads < 1:
            errors.append(("threads", "must be at least 1"))
        if self.threads is None:
            self.threads = os.cpu_count() or 1
        perc = self.blocks["percolation"]
        if perc["t_slices"] < 1:
            errors.append(("percolation.t_slices", "must be at least 1"))
        if perc["half_width"] < 0:
            errors.append(("percolation.half_width", "must be non-negative"))
        if perc["use"] not in ("E", "A"):
            errors.append(("percolation.use", "must be 'E' or 'A'"))
        if perc["mode"] not in ("count", "detect"):
            errors.append(("percolation.mode", "must be 'count' or 'detect'"))
        if perc["disp_mode"] not in ("checked", "conservative"):
            errors.append(("percolation.disp_mode", "must be 'checked' or 'conservative'"))
        ev = self.blocks["evasion"]
        if ev["t_slices"] < 1:
            errors.append(("evasion.t_slices", "must be at least 1"))
        if ev["mode"] not in ("hop", "closure"):
            errors.append(("evasion.mode", "must be 'hop' or 'closure'"))
        if any(lam < 0 for lam in self.blocks["phase_scan"]["lambdas"]):
            errors.append(("phase_scan.lambdas", "intensities must be non-negative"))
        try:
            self.coupling_params()
        except (GeometryError, PreconditionError) as e:
            errors.append(("coupling", str(e)))
        if errors:
            raise ConfigError(errors)
        return self

    def as_dict(self):
        out = dict((k, getattr(self, k)) for k in self.scalars)
        out.update((name, dict(values)) for name, values in self.blocks.items())
        return out

    def __eq__(self, other):
        return isinstance(other, Config) and self.as_dict() == other.as_dict()

    def __ne__(self, other):
        return not self == other


def load_config(filename=None):
    """A validated Config from ``filename`` (JSON or INI); defaults without one."""
    config = Config()
    if filename:
        config.load_config(filename)
    return config.validate()
