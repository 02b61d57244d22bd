"""Flat ``key = value`` run configuration with command-line overrides (last one wins)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .measurement import InitialSpinState, Schedule
from .model import PARAM_KEYS, ModelParams

DEFAULT_SEED = 12345

INT_KEYS = {"n_spins", "n_samples", "seed", "n_readout", "sector_spin", "workers"}
FLOAT_KEYS = {"coupling_j", "coupling_g", "gamma", "temperature", "cutoff",
              "t_switch_off", "t_final", "t_max", "t_stop", "r_uu", "r_ud_re", "r_ud_im",
              "margin", "threshold"}
LIST_KEYS = {"times", "snapshot_times"}
STR_KEYS = {"sweep", "probe", "out"}
ALL_KEYS = INT_KEYS | FLOAT_KEYS | LIST_KEYS | STR_KEYS
NUMERIC_KEYS = INT_KEYS | FLOAT_KEYS

DEFAULTS = {
    "r_uu": 0.5,
    "r_ud_re": 0.0,
    "r_ud_im": 0.0,
    "seed": DEFAULT_SEED,
    "margin": 10.0,
    "threshold": 1e-3,
    "n_samples": 200,
    "n_readout": 100_000,
    "sector_spin": 1,
}


class ConfigError(ValueError):
    pass


def _convert(key: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if key in INT_KEYS:
            v = float(raw)
            if not v.is_integer():
                raise ValueError
            return int(v)
        if key in FLOAT_KEYS:
            v = float(raw)
            if math.isnan(v):
                raise ValueError
            return v
        if key in LIST_KEYS:
            if not raw:
                return []
            return [float(x) for x in raw.replace(",", " ").split()]
    except ValueError:
        kind = "integer" if key in INT_KEYS else "number" if key in FLOAT_KEYS else "list of numbers"
        raise ConfigError(f"{where}: key '{key}': expected {kind}, got {raw!r}") from None
    return raw


def parse_pairs(lines, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        where = f"{source}:{lineno}"
        if "=" not in text:
            raise ConfigError(f"{where}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in text.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{where}: unknown key '{key}'")
        out[key] = _convert(key, raw, where)
    return out


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_pairs(text.splitlines(), str(path))


def parse_overrides(items) -> dict:
    return parse_pairs(items or [], "--set")


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def build(cls, path=None, overrides=(), **flags) -> "RunConfig":
        values = dict(DEFAULTS)
        if path is not None:
            values.update(load_config(path))
        values.update(parse_overrides(overrides))
        values.update({k: v for k, v in flags.items() if v is not None})
        cfg = cls(values)
        cfg.spin()  # positivity is checked at parse time
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def params(self) -> ModelParams:
        missing = [k for k in PARAM_KEYS if k not in self.values]
        if missing:
            raise ConfigError("missing key(s): " + ", ".join(missing))
        try:
            return ModelParams(**{k: self.values[k] for k in PARAM_KEYS})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model parameters: {exc}") from None

    def spin(self) -> InitialSpinState:
        try:
            return InitialSpinState(self.values["r_uu"],
                                    complex(self.values["r_ud_re"], self.values["r_ud_im"]))
        except ValueError as exc:
            raise ConfigError(f"spin state: {exc}") from None

    def schedule(self) -> Schedule | None:
        if "t_switch_off" not in self.values and "t_final" not in self.values:
            return None
        t_final = self.values.get("t_final", self.values.get("t_switch_off"))
        t_off = self.values.get("t_switch_off", t_final)
        try:
            return Schedule(t_off, t_final, self.values["n_samples"])
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None

    def resolved(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}
