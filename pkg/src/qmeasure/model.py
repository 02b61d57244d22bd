"""Model parameters, magnetization grid, regime checks and closed-form timescales.

Reduced units throughout: hbar = k_B = 1, energies naturally measured in units of J.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, fields

import numpy as np

PARAM_KEYS = ("n_spins", "coupling_j", "coupling_g", "gamma", "temperature", "cutoff")


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the spin + Curie-Weiss magnet + bath model.

    ``gamma = 0`` is accepted and means "bath switched off"; it only makes sense
    for the dephasing stage (no irreversibility time, no registration).
    """

    n_spins: int
    coupling_j: float
    coupling_g: float
    gamma: float
    temperature: float
    cutoff: float

    def __post_init__(self):
        n = self.n_spins
        if isinstance(n, float) and n.is_integer():
            object.__setattr__(self, "n_spins", int(n))
        if not isinstance(self.n_spins, (int, np.integer)) or isinstance(self.n_spins, bool):
            raise TypeError(f"n_spins must be an integer, got {n!r}")
        object.__setattr__(self, "n_spins", int(self.n_spins))
        for name in PARAM_KEYS[1:]:
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        if not self.coupling_j > 0:
            raise ValueError("coupling_j must be > 0")
        if not self.coupling_g >= 0:
            raise ValueError("coupling_g must be >= 0")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be > 0")

    def replace(self, **changes) -> "ModelParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelParams(**values)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_KEYS}


REFERENCE_PARAMS = ModelParams(
    n_spins=1000, coupling_j=1.0, coupling_g=0.05, gamma=1e-3, temperature=0.8, cutoff=50.0
)


@dataclass(frozen=True)
class MagnetizationGrid:
    values: np.ndarray
    log_degeneracy: np.ndarray

    @property
    def n_spins(self) -> int:
        return self.values.size - 1

    @property
    def spacing(self) -> float:
        return 2.0 / self.n_spins


def log_binomials(n: int) -> np.ndarray:
    """ln C(n, k) for k = 0..n, exactly mirror-symmetric.

    Built as a running sum of ln((n-j)/(j+1)) in extended precision so that
    neighbouring entries differ by the exact log-ratio to float64 resolution
    (gammaln differences cancel catastrophically for n ~ 1e6).
    """
    half = n // 2
    j = np.arange(half, dtype=np.longdouble)
    steps = np.log(np.longdouble(n) - j) - np.log(j + 1)
    lower = np.concatenate(([0.0], np.cumsum(steps).astype(float)))
    out = np.empty(n + 1)
    out[: half + 1] = lower
    out[n - half:] = lower[::-1]
    return out


@lru_cache(maxsize=32)
def magnetization_grid(n_spins: int) -> MagnetizationGrid:
    """Grid m_k = -1 + 2k/N with ln C(N, k); degeneracies never leave log space."""
    k = np.arange(n_spins + 1)
    values = -1.0 + 2.0 * k / n_spins
    values = 0.5 * (values - values[::-1])  # exact mirror symmetry m_k = -m_{N-k}
    log_deg = log_binomials(n_spins)
    values.setflags(write=False)
    log_deg.setflags(write=False)
    return MagnetizationGrid(values=values, log_degeneracy=log_deg)


@dataclass(frozen=True)
class RegimeCheck:
    name: str
    left: float
    right: float
    satisfied: bool


@dataclass(frozen=True)
class RegimeReport:
    checks: tuple
    margin: float

    @property
    def overall(self) -> bool:
        return all(c.satisfied for c in self.checks)

    def failed(self) -> list:
        return [c.name for c in self.checks if not c.satisfied]

    def to_text(self) -> str:
        lines = [f"regime check (>> means left >= {self.margin:g} * right)"]
        width = max((len(c.name) for c in self.checks), default=0)
        for c in self.checks:
            flag = "ok  " if c.satisfied else "FAIL"
            lines.append(f"  [{flag}] {c.name:<{width}s}  {c.left:.6g} vs {c.right:.6g}")
        lines.append(f"  overall: {'ok' if self.overall else 'FAIL'}")
        return "\n".join(lines)

    def to_keyvalue(self) -> dict:
        out = {"regime.margin": self.margin, "regime.overall": self.overall}
        for c in self.checks:
            key = "regime." + c.name
            out[key + ".left"] = c.left
            out[key + ".right"] = c.right
            out[key + ".ok"] = c.satisfied
        return out


def validate_regime(params: ModelParams, margin: float = 10.0) -> RegimeReport:
    """Evaluate the parameter window in which the exact solution holds.

    Each ``>>`` is read as ``left >= margin * right``; ``J > g`` is strict.
    The last two checks are the window on gamma that orders
    tau_red << tau_irrev << tau_recur.
    """
    if margin < 1:
        raise ValueError("margin must be >= 1")
    p = params
    n, j, g, gam, temp, cut = (p.n_spins, p.coupling_j, p.coupling_g, p.gamma,
                               p.temperature, p.cutoff)

    def much(name, left, right):
        return RegimeCheck(name, float(left), float(right), bool(left >= margin * right))

    with np.errstate(divide="ignore"):
        gamma_window = gam * cut**2 / (8 * math.pi * g**2) if g > 0 else math.inf
    checks = (
        much("N>>1", n, 1.0),
        much("cutoff>>T", cut, temp),
        much("T>>gamma*J", temp, gam * j),
        much("gamma*J>>(J/N)(g/cutoff)^2", gam * j, (j / n) * (g / cut) ** 2),
        much("cutoff>>J", cut, j),
        RegimeCheck("J>g", j, g, bool(j > g)),
        much("N>>gamma*cutoff^2/(8pi g^2)", n, gamma_window),
        much("gamma*cutoff^2/(8pi g^2)>>4/(N pi^4)", gamma_window, 4.0 / (n * math.pi**4)),
    )
    return RegimeReport(checks=checks, margin=float(margin))


def tau_reduction(params: ModelParams) -> float:
    g = params.coupling_g
    if g <= 0:
        raise ValueError("g = 0: infinite reduction time (no dephasing)")
    return 1.0 / (math.sqrt(2.0 * params.n_spins) * g)


def tau_irreversibility(params: ModelParams) -> float:
    p = params
    if p.gamma <= 0 or p.coupling_g <= 0:
        raise ValueError("tau_irrev needs gamma > 0 and g > 0 (diverges otherwise)")
    return (2.0 * math.pi / (p.n_spins * p.gamma * p.coupling_g**2 * p.cutoff**2)) ** 0.25


def tau_recurrence(params: ModelParams) -> float:
    """First exact revival of |cos(2gt)|^N, at t = pi / (2g)."""
    if params.coupling_g <= 0:
        raise ValueError("g = 0: no recurrence timescale")
    return math.pi / (2.0 * params.coupling_g)


def tau_registration(params: ModelParams, m_f: float) -> float:
    """Asymptotic registration time ln(3 m_F (J - T) / g) / (gamma (J - T))."""
    p = params
    gap = p.coupling_j - p.temperature
    if gap <= 0:
        raise ValueError("T >= J: no broken-symmetry phase, nothing to register")
    if p.gamma <= 0:
        raise ValueError("gamma = 0: registration never happens")
    if p.coupling_g <= 0:
        raise ValueError("g = 0: registration time is infinite")
    arg = 3.0 * m_f * gap / p.coupling_g
    if arg <= 1.0:
        raise ValueError(
            f"ln argument 3 m_F (J-T)/g = {arg:.4g} <= 1: coupling too strong for the asymptotic formula"
        )
    return math.log(arg) / (p.gamma * gap)


@dataclass(frozen=True)
class Timescales:
    tau_red: float
    tau_irrev: float
    tau_reg: float
    tau_recur_estimate: float

    def ordered(self) -> bool:
        return self.tau_red < self.tau_irrev < self.tau_recur_estimate

    def as_dict(self) -> dict:
        return {
            "tau_red": self.tau_red,
            "tau_irrev": self.tau_irrev,
            "tau_reg": self.tau_reg,
            "tau_recur_estimate": self.tau_recur_estimate,
        }


def compute_timescales(params: ModelParams, m_f: float | None = None) -> Timescales:
    """All four timescales; any that is undefined for these params comes back as nan."""
    from .registration import solve_fixed_points

    def safe(fn, *args):
        try:
            return fn(*args)
        except ValueError:
            return math.nan

    if m_f is None:
        m_f = solve_fixed_points(params, 0).m_ferro_plus
    tau_reg = safe(tau_registration, params, m_f) if m_f is not None else math.nan
    return Timescales(
        tau_red=safe(tau_reduction, params),
        tau_irrev=safe(tau_irreversibility, params),
        tau_reg=tau_reg,
        tau_recur_estimate=safe(tau_recurrence, params),
    )
