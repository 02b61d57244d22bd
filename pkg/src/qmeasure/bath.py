"""Quasi-Ohmic bath spectrum and the single-spin flip rates it induces."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, magnetization_grid

# below this |omega|/T the removable singularity is evaluated by its series
_SMALL_X = 1e-8


@dataclass(frozen=True)
class BathKernel:
    temperature: float
    cutoff: float

    def __call__(self, omega):
        return kernel_spectrum(self, omega)


def _bose_factor(x):
    """x / (e^x - 1), accurate for either sign and free of overflow."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SMALL_X
    ax = np.where(small, 1.0, np.abs(x))
    # x > 0: x e^{-x} / (1 - e^{-x});  x < 0: |x| / (1 - e^{-|x|})
    core = ax / -np.expm1(-ax)
    big = np.where(x > 0, core * np.exp(-ax), core)
    return np.where(small, 1.0 - x / 2.0 + x * x / 12.0, big)


def kernel_spectrum(kernel: BathKernel, omega):
    """K~(w) = (w/4) e^{-|w|/cutoff} / (e^{w/T} - 1), with K~(0) = T/4.

    Accepts scalars or arrays.
    """
    temp, cut = kernel.temperature, kernel.cutoff
    w = np.asarray(omega, dtype=float)
    out = 0.25 * temp * _bose_factor(w / temp) * np.exp(-np.abs(w) / cut)
    if np.ndim(out) == 0:
        return float(out)
    return out


def log_kernel_spectrum(kernel: BathKernel, omega):
    """ln K~(w); finite where K~ itself underflows (w >> T)."""
    temp, cut = kernel.temperature, kernel.cutoff
    w = np.asarray(omega, dtype=float)
    x = w / temp
    ax = np.abs(x)
    small = ax < _SMALL_X
    safe = np.where(small, 1.0, ax)
    # ln(x/(e^x-1)) = ln|x| - ln(1-e^{-|x|}) - max(x, 0)
    log_b = np.log(safe) - np.log(-np.expm1(-safe)) - np.maximum(x, 0.0)
    log_b = np.where(small, np.log1p(-x / 2.0 + x * x / 12.0), log_b)
    out = np.log(0.25 * temp) + log_b - np.abs(w) / cut
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class FlipRates:
    """Total birth/death rates on the magnetization grid for one spin sector.

    ``up_rates[k]`` moves k -> k+1 (m -> m + 2/N), ``down_rates[k]`` moves k -> k-1.
    """

    m: np.ndarray
    up_rates: np.ndarray
    down_rates: np.ndarray
    sector_spin: int
    coupling_g: float

    @property
    def total_rates(self) -> np.ndarray:
        return self.up_rates + self.down_rates

    def drift(self) -> np.ndarray:
        """Conditional mean velocity d<m>/dt at each grid point."""
        n = self.m.size - 1
        return (2.0 / n) * (self.up_rates - self.down_rates)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "up_rate", "down_rate"])
            for row in zip(self.m, self.up_rates, self.down_rates):
                w.writerow([repr(float(v)) for v in row])


def build_flip_rates(params: ModelParams, sector_spin: int, coupling_g: float | None = None) -> FlipRates:
    """Weak-coupling flip rates of the magnet in the sector where the tested spin is ``sector_spin``.

    A flip k -> k+1 changes the sector energy E(m) = -N J m^2/2 - N g s m by
    -2 h_b, with the bond field h_b = J (m_k + 1/N) + g s. The per-spin rates are
    2 gamma K~(-2 h_b) upward and 2 gamma K~(+2 h_b) downward across the same bond,
    so the ratio is exactly exp(2 h_b / T) and the sector Gibbs measure is
    stationary. The factor 2 makes the linearized drift near m = 0 equal
    gamma ((J - T) m + g s).

    ``coupling_g`` overrides params.coupling_g (used after the coupling is switched off).
    """
    if sector_spin not in (1, -1):
        raise ValueError("sector_spin must be +1 or -1")
    g = params.coupling_g if coupling_g is None else float(coupling_g)
    n = params.n_spins
    j = params.coupling_j
    kern = BathKernel(params.temperature, params.cutoff)
    m = magnetization_grid(n).values
    h_up = j * (m + 1.0 / n) + g * sector_spin
    h_down = j * (m - 1.0 / n) + g * sector_spin
    w_plus = 2.0 * params.gamma * kernel_spectrum(kern, -2.0 * h_up)
    w_minus = 2.0 * params.gamma * kernel_spectrum(kern, 2.0 * h_down)
    k = np.arange(n + 1)
    up = (n - k) * np.atleast_1d(w_plus)
    down = k * np.atleast_1d(w_minus)
    up[-1] = 0.0
    down[0] = 0.0
    for arr in (up, down):
        arr.setflags(write=False)
    return FlipRates(m=m, up_rates=up, down_rates=down, sector_spin=sector_spin, coupling_g=g)
