"""Run configuration: JSON blocks with defaults, validation and ``--set`` overrides."""

from __future__ import annotations

import copy
import json

from .certificate import AuxParams, ScanBoxes
from .errors import ConfigError
from .experiments import GridPolicy, default_eps_list
from .geometry import NeckGeometry

DEFAULTS = {
    "geometry": {"eps": 1e-4, "lambda1": 0.5, "lambda2": 0.5, "c3_top": 0.0, "c3_bot": 0.0, "R": 0.5},
    "problem": {"n": 3, "k": 1, "outer_data": None},
    "aux": {"gamma": None, "A": None, "b": 50.0, "delta": 0.01, "eta": 1e-3, "xi0": None},
    "sweep": {"eps_list": None, "eps_min": 1e-4, "eps_max": 1e-2, "count": 8,
              "slope_tol": 0.03, "r_squared_min": 0.995},
    "grid": {"Nr": 512, "Ns": 32, "axis_cells_per_sqrt_eps": 16.0, "stretch": None, "tol": 1e-10},
    "certify": {"R": None, "r_count": 200, "phi_min": 1e-6, "phi_max": 0.01, "phi_count": 100,
                "phi_values": None, "hess_r_count": 50, "hess_z_count": 50,
                "crit_phi_min": 1e-6, "crit_phi_max": 1.0, "crit_phi_count": 200},
    "lemma": {"eps": 0.01, "Nr0": 64, "Ns0": 8, "levels": 3, "stretch": 2.0,
              "r_max_fraction": 0.5, "min_ratio": 1.8},
    "q": {"band": 0.9, "control": False},
    "envelope": {"gamma": None, "ratio_max": 1.5},
    "table": {"n_max": 6},
    "output": {"dir": "out", "formats": ["json", "csv"]},
}


def _merge(base, update, path=""):
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config block {where} must be an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Apply one ``path.to.key=value`` override; the value is parsed as JSON if possible."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value: {assignment!r}")
    path, text = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = {}
    cur = node
    for k in keys[:-1]:
        cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = _parse_value(text)
    _merge(cfg, node)


class RunConfig:
    """Resolved configuration; every block is validated on construction."""

    def __init__(self, data=None, overrides=()):
        cfg = copy.deepcopy(DEFAULTS)
        if data:
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
            _merge(cfg, data)
        for o in overrides:
            apply_override(cfg, o)
        self.data = cfg
        self._validate()

    @classmethod
    def load(cls, path=None, overrides=()):
        data = None
        if path is not None:
            try:
                with open(path) as fh:
                    data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        return cls(data, overrides)

    def _validate(self):
        try:
            self.geometry()
            self.aux()
            self.grid_policy()
            self.scan_boxes()
            n, k = self.data["problem"]["n"], self.data["problem"]["k"]
            if not (isinstance(n, int) and n >= 3):
                raise ConfigError("problem.n must be an integer >= 3")
            if not (isinstance(k, int) and k >= 0):
                raise ConfigError("problem.k must be a non-negative integer")
            od = self.data["problem"]["outer_data"]
            if od is not None and not isinstance(od, (int, float)):
                raise ConfigError("problem.outer_data must be a number or null (v = R)")
            self.eps_list()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return copy.deepcopy(self.data)

    def geometry(self, **kw):
        return NeckGeometry.from_dict({**self.data["geometry"], **kw})

    @property
    def n(self):
        return self.data["problem"]["n"]

    @property
    def k(self):
        return self.data["problem"]["k"]

    @property
    def outer_data(self):
        return self.data["problem"]["outer_data"]

    def aux(self, eps=None):
        d = {k: v for k, v in self.data["aux"].items() if v is not None}
        d["n"] = self.n
        d["eps"] = self.data["geometry"]["eps"] if eps is None else eps
        return AuxParams.from_dict(d)

    def grid_policy(self):
        g = self.data["grid"]
        return GridPolicy(Nr=int(g["Nr"]), Ns=int(g["Ns"]),
                          axis_cells_per_sqrt_eps=float(g["axis_cells_per_sqrt_eps"]),
                          stretch=g["stretch"], tol=float(g["tol"]))

    def scan_boxes(self):
        d = dict(self.data["certify"])
        if d["R"] is None:
            d["R"] = self.data["geometry"]["R"]
        return ScanBoxes.from_dict(d)

    def eps_list(self):
        s = self.data["sweep"]
        if s["eps_list"] is not None:
            eps = [float(e) for e in s["eps_list"]]
        else:
            eps = default_eps_list(float(s["eps_min"]), float(s["eps_max"]), int(s["count"]))
        if any(e <= 0 for e in eps):
            raise ConfigError("sweep eps values must be positive")
        return eps
