"""Run configuration: an INI file validated against a fixed schema.

Example::

    [model]
    t = 3.0
    g1 = 1.0
    eps = 5.0

    [lattice]
    L = 12, 16          ; one or more sizes
    f_M = 1.0           ; or N_M = 12 (not both)

    [mps]
    chi_max = 64
    trunc_tol = 1e-10

    [tebd]
    dtaus = 0.5, 0.1, 0.02, 0.005, 0.001
    max_sweeps = 2000
    energy_tolerance = 1e-9
    seeds = 0, 1, 2

    [sweep]
    param = t
    values = 1, 2, 3    ; or start / stop / num
    warm_start = true

    [analysis]
    discard_fraction = 0.1
    bulk_window = 0.5

    [output]
    directory = runs/demo
    formats = csv, jsonl
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ModelParams
from .tebd import DEFAULT_DTAUS, AnnealSchedule

OUTPUT_ENV = "SU2QLM_OUT"
SWEEP_PARAMS = ("t", "g1", "eps", "N_M", "f_M", "L")
FORMATS = ("csv", "jsonl")

SCHEMA = {
    "model": {"t", "g1", "eps"},
    "lattice": {"L", "N_M", "f_M"},
    "mps": {"chi_max", "trunc_tol"},
    "tebd": {"dtaus", "max_sweeps", "energy_tolerance", "seeds"},
    "sweep": {"param", "values", "start", "stop", "num", "warm_start"},
    "analysis": {"discard_fraction", "bulk_window"},
    "output": {"directory", "formats"},
}


class ConfigError(ValueError):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class RunConfig:
    t: float = 0.0
    g1: float = 1.0
    eps: float = 5.0
    sizes: tuple = (4,)
    N_M: int | None = None
    f_M: float | None = 1.0
    chi_max: int = 64
    trunc_tol: float = 1e-10
    dtaus: tuple = DEFAULT_DTAUS
    max_sweeps: int = 2000
    energy_tolerance: float = 1e-9
    seeds: tuple = (0, 1, 2)
    sweep_param: str | None = None
    sweep_values: tuple = ()
    warm_start: bool = True
    discard_fraction: float = 0.10
    bulk_window: float = 0.5
    directory: str = "su2qlm-out"
    formats: tuple = FORMATS
    source: str | None = field(default=None, compare=False)

    def schedule(self):
        return AnnealSchedule.from_steps(self.dtaus, self.max_sweeps, self.energy_tolerance)

    def matter_number(self, L):
        if self.N_M is not None:
            return self.N_M
        n = self.f_M * L
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"f_M={self.f_M} does not give an integer matter number at L={L}")
        return int(round(n))

    def lines(self):
        """Independent ``(L, N_M)`` lines of the run (one per size)."""
        return [(L, self.matter_number(L)) for L in self.sizes]

    def points(self):
        """All ``ModelParams`` of the run grouped per line, in grid order."""
        out = []
        for L, N in self.lines():
            base = {"t": self.t, "g1": self.g1, "eps": self.eps, "L": L, "N_M": N}
            if self.sweep_param is None:
                out.append([ModelParams(**base)])
                continue
            line = []
            for v in self.sweep_values:
                p = dict(base)
                if self.sweep_param == "f_M":
                    n = v * L
                    if abs(n - round(n)) > 1e-9:
                        raise ConfigError(f"f_M={v} does not give an integer matter number at L={L}")
                    p["N_M"] = int(round(n))
                elif self.sweep_param in ("L", "N_M"):
                    p[self.sweep_param] = int(v)
                    if self.sweep_param == "L" and self.N_M is None:
                        p["N_M"] = self.matter_number(int(v))
                else:
                    p[self.sweep_param] = float(v)
                line.append(ModelParams(**p))
            out.append(line)
        return out

    def can_warm_start(self):
        return self.warm_start and self.sweep_param in ("t", "g1", "eps")

    def with_overrides(self, seed=None, chi=None, out=None):
        changes = {}
        if seed is not None:
            changes["seeds"] = (int(seed),)
        if chi is not None:
            if chi < 1:
                raise ConfigError("--chi must be >= 1")
            changes["chi_max"] = int(chi)
        if out is not None:
            changes["directory"] = str(out)
        return replace(self, **changes)

    def validate(self):
        for name in ("t", "g1", "eps", "trunc_tol", "energy_tolerance"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.g1 <= 0:
            raise ConfigError("g1 must be > 0")
        if not self.sizes or any(L < 2 for L in self.sizes):
            raise ConfigError("every L must be >= 2")
        if (self.N_M is None) == (self.f_M is None):
            raise ConfigError("give exactly one of N_M and f_M")
        if self.chi_max < 1 or self.trunc_tol < 0 or self.max_sweeps < 1:
            raise ConfigError("need chi_max >= 1, trunc_tol >= 0, max_sweeps >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not 0 <= self.discard_fraction < 0.5 or not 0 < self.bulk_window <= 1:
            raise ConfigError("discard_fraction must be in [0, 0.5) and bulk_window in (0, 1]")
        if any(f not in FORMATS for f in self.formats) or not self.formats:
            raise ConfigError(f"formats must be a subset of {FORMATS}")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEP_PARAMS:
                raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}")
            if not self.sweep_values:
                raise ConfigError("sweep grid is empty")
        try:
            for line in self.points():
                for p in line:
                    if p.N_M % 2:
                        raise ConfigError(
                            f"N_M={p.N_M} at L={p.L}: odd matter numbers have no gauge-invariant states"
                        )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def parse_config(text, source=None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser[section]) - SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")

    def get(section, key):
        if parser.has_section(section) and key in parser[section]:
            return parser[section][key]
        return None

    kw = {"source": source}
    for key in ("t", "g1", "eps"):
        if (v := get("model", key)) is not None:
            kw[key] = _single(_floats(v), key)
    if (v := get("lattice", "L")) is not None:
        kw["sizes"] = tuple(_ints(v))
    n_m, f_m = get("lattice", "N_M"), get("lattice", "f_M")
    if n_m is not None:
        kw["N_M"] = _single(_ints(n_m), "N_M")
        kw["f_M"] = None
    if f_m is not None:
        kw["f_M"] = _single(_floats(f_m), "f_M")
        if n_m is not None:
            raise ConfigError("give exactly one of N_M and f_M")
    if (v := get("mps", "chi_max")) is not None:
        kw["chi_max"] = _single(_ints(v), "chi_max")
    if (v := get("mps", "trunc_tol")) is not None:
        kw["trunc_tol"] = _single(_floats(v), "trunc_tol")
    if (v := get("tebd", "dtaus")) is not None:
        kw["dtaus"] = tuple(_floats(v))
    if (v := get("tebd", "max_sweeps")) is not None:
        kw["max_sweeps"] = _single(_ints(v), "max_sweeps")
    if (v := get("tebd", "energy_tolerance")) is not None:
        kw["energy_tolerance"] = _single(_floats(v), "energy_tolerance")
    if (v := get("tebd", "seeds")) is not None:
        kw["seeds"] = tuple(_ints(v))
    if parser.has_section("sweep"):
        kw.update(_parse_sweep(get))
    if (v := get("analysis", "discard_fraction")) is not None:
        kw["discard_fraction"] = _single(_floats(v), "discard_fraction")
    if (v := get("analysis", "bulk_window")) is not None:
        kw["bulk_window"] = _single(_floats(v), "bulk_window")
    if (v := get("output", "directory")) is not None:
        kw["directory"] = v.strip()
    if (v := get("output", "formats")) is not None:
        kw["formats"] = tuple(f for f in v.replace(",", " ").split())
    return RunConfig(**kw).validate()


def _parse_sweep(get):
    param = get("sweep", "param")
    if param is None:
        raise ConfigError("[sweep] needs a param")
    param = param.strip()
    values = get("sweep", "values")
    ranged = [get("sweep", k) for k in ("start", "stop", "num")]
    if values is not None and any(v is not None for v in ranged):
        raise ConfigError("give either values or start/stop/num in [sweep]")
    if values is not None:
        grid = tuple(_floats(values))
    elif all(v is not None for v in ranged):
        num = _single(_ints(ranged[2]), "num")
        grid = tuple(float(v) for v in np.linspace(_single(_floats(ranged[0]), "start"),
                                                   _single(_floats(ranged[1]), "stop"), num))
    else:
        raise ConfigError("[sweep] needs values or all of start/stop/num")
    out = {"sweep_param": param, "sweep_values": grid}
    if (v := get("sweep", "warm_start")) is not None:
        out["warm_start"] = _bool(v)
    return out


def _single(values, name):
    if len(values) != 1:
        raise ConfigError(f"{name} takes exactly one value")
    return values[0]


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))
