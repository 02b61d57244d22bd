"""Off-diagonal ("cat") blocks: exact collective dephasing plus bath suppression.

The up-down block of the compound state acquires the phase exp(2 i N g m t) in
magnetization shell m. Traced over the magnet this gives the amplitude
A(t) = sum_k P0(m_k) exp(2 i N g m_k t), which for the infinite-temperature
paramagnet is exactly cos(2 g t)^N.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .model import ModelParams, magnetization_grid, tau_irreversibility

TWO_PI = 2.0 * math.pi


def binomial_distribution(n_spins: int) -> np.ndarray:
    logw = magnetization_grid(n_spins).log_degeneracy
    w = np.exp(logw - logw.max())
    return w / math.fsum(w)


def initial_magnet_distribution(params: ModelParams, t0: float = math.inf) -> np.ndarray:
    """Shell populations of the paramagnet prepared at temperature ``t0``.

    ``t0 = inf`` (default) gives the binomial C(N,k)/2^N. A finite t0 above the
    Curie point weights shells by exp(N J m^2 / (2 t0)).
    """
    if not math.isfinite(t0):
        return binomial_distribution(params.n_spins)
    grid = magnetization_grid(params.n_spins)
    logw = grid.log_degeneracy.copy()
    if t0 <= params.coupling_j:
        raise ValueError("preparation temperature must lie above the Curie point T_C = J")
    logw += params.n_spins * params.coupling_j * grid.values**2 / (2.0 * t0)
    w = np.exp(logw - logw.max())
    return w / math.fsum(w)


def _reduced_spin_phase(g: float, t):
    """2 g t folded into [0, 2 pi): the phase one apparatus spin contributes."""
    return np.mod(2.0 * g * np.asarray(t, dtype=float), TWO_PI)


def shell_phases(n_spins: int, g: float, t) -> np.ndarray:
    """Phase 2 N g m_k t of every shell, reduced mod 2 pi.

    N m_k = 2k - N is an integer, so the per-spin phase is folded first and
    the integer multiple folded again. Shape (len(t), N+1) for array t.
    """
    theta = _reduced_spin_phase(g, t)
    mult = 2 * np.arange(n_spins + 1) - n_spins
    return np.mod(np.multiply.outer(theta, mult), TWO_PI)


def dephasing_amplitude_sum(n_spins: int, g: float, t, p0: np.ndarray | None = None):
    """A(t) as the explicit shell sum over the magnet distribution ``p0``."""
    if p0 is None:
        p0 = binomial_distribution(n_spins)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t_arr.size, dtype=complex)
    # chunk to bound memory at large N
    chunk = max(1, 2_000_000 // (n_spins + 1))
    for lo in range(0, t_arr.size, chunk):
        ph = shell_phases(n_spins, g, t_arr[lo:lo + chunk])
        out[lo:lo + chunk] = (np.cos(ph) @ p0) + 1j * (np.sin(ph) @ p0)
    return out[0] if np.ndim(t) == 0 else out


def dephasing_amplitude_closed(n_spins: int, g: float, t):
    """A(t) = cos(2 g t)^N, evaluated as sign * exp(N ln|cos|) after folding."""
    c = np.cos(_reduced_spin_phase(g, t))
    with np.errstate(divide="ignore"):
        mag = np.exp(n_spins * np.log(np.abs(c)))
    sign = np.where((c < 0) & (n_spins % 2 == 1), -1.0, 1.0)
    out = (sign * mag).astype(complex)
    return complex(out) if np.ndim(out) == 0 else out


def dephasing_amplitude(params: ModelParams, t, method: str = "closed"):
    """Traced cat amplitude A(t); ``method`` is 'closed' or 'sum'."""
    if method == "closed":
        return dephasing_amplitude_closed(params.n_spins, params.coupling_g, t)
    if method == "sum":
        return dephasing_amplitude_sum(params.n_spins, params.coupling_g, t)
    raise ValueError(f"unknown method {method!r}")


def bath_suppression_envelope(params: ModelParams, t):
    """exp(-(t / tau_irrev)^4); identically 1 when the bath is off (gamma = 0)."""
    t = np.asarray(t, dtype=float)
    if params.gamma == 0 or params.coupling_g == 0:
        out = np.ones_like(t)
    else:
        out = np.exp(-((t / tau_irreversibility(params)) ** 4))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OffDiagonalBlock:
    """Up-down block of the compound state, resolved over magnetization shells.

    ``amplitudes`` already carry the initial coherence r_ud(0); ``scalar_amplitude``
    is the factor A(t) * envelope(t) multiplying r_ud(0) after tracing out the magnet.
    """

    amplitudes: np.ndarray
    scalar_amplitude: complex
    coherence: complex
    time: float

    @property
    def conjugate_block(self) -> np.ndarray:
        """The down-up block; hermiticity makes it the complex conjugate."""
        return np.conj(self.amplitudes)

    @property
    def traced(self) -> complex:
        return complex(self.amplitudes.sum())


def offdiagonal_block(params: ModelParams, coherence: complex, t: float,
                      p0: np.ndarray | None = None) -> OffDiagonalBlock:
    if p0 is None:
        p0 = initial_magnet_distribution(params)
    env = bath_suppression_envelope(params, t)
    ph = shell_phases(params.n_spins, params.coupling_g, t)
    amps = coherence * env * p0 * np.exp(1j * ph)
    scalar = dephasing_amplitude_sum(params.n_spins, params.coupling_g, t, p0) * env
    return OffDiagonalBlock(amplitudes=amps, scalar_amplitude=complex(scalar),
                            coherence=complex(coherence), time=float(t))


@dataclass(frozen=True)
class DephasingTrajectory:
    times: np.ndarray
    abs_amplitude: np.ndarray
    envelope: np.ndarray
    recurrence_time: float
    recurrence_value: float
    threshold: float

    @property
    def product(self) -> np.ndarray:
        return self.abs_amplitude * self.envelope

    @property
    def recurrence_suppressed(self) -> bool:
        return self.recurrence_value < self.threshold

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "abs_amplitude", "envelope", "product"])
            for row in zip(self.times, self.abs_amplitude, self.envelope, self.product):
                w.writerow([repr(float(v)) for v in row])


def offdiagonal_trajectory(params: ModelParams, times, threshold: float = 1e-3) -> DephasingTrajectory:
    """|A(t)| * envelope(t) on a sorted time grid, plus the fate of the first revival."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    if np.any(np.diff(times) < 0):
        raise ValueError("time grid must be sorted ascending")
    n, g = params.n_spins, params.coupling_g
    absamp = np.abs(dephasing_amplitude_closed(n, g, times))
    env = np.atleast_1d(bath_suppression_envelope(params, times))
    if g > 0:
        t_rec = math.pi / (2.0 * g)
        rec = abs(dephasing_amplitude_closed(n, g, t_rec)) * bath_suppression_envelope(params, t_rec)
    else:
        t_rec, rec = math.inf, 1.0
    return DephasingTrajectory(times=times, abs_amplitude=absamp, envelope=env,
                               recurrence_time=t_rec, recurrence_value=float(rec),
                               threshold=threshold)


def amplitude_crossing_time(n_spins: int, g: float, level: float = math.exp(-1.0),
                            method: str = "sum") -> float:
    """First time |A(t)| falls to ``level``, found by bracketing then Brent.

    |A| is monotone on [0, pi/(4g)], which brackets the crossing for any N >= 1
    with level > 2^{-N/2}.
    """
    if method == "sum":
        f = lambda t: abs(dephasing_amplitude_sum(n_spins, g, t)) - level
    else:
        f = lambda t: abs(dephasing_amplitude_closed(n_spins, g, t)) - level
    hi = math.pi / (4.0 * g)
    if f(hi) > 0:
        raise ValueError("level not reached before the first quarter period")
    return brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-14)
