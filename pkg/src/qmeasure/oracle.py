"""Brute-force references over all 2^N spin configurations (N <= 14)."""

from __future__ import annotations

import math

import numpy as np

MAX_SPINS = 14


def _check_size(n: int) -> None:
    if not 1 <= n <= MAX_SPINS:
        raise ValueError(f"oracle enumerates 2^n configurations; need 1 <= n <= {MAX_SPINS}, got {n}")


def configurations(n: int) -> np.ndarray:
    """All 2^n z-basis configurations as rows of +-1."""
    _check_size(n)
    bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    return 2 * bits - 1


def configuration_magnetization(n: int) -> np.ndarray:
    return configurations(n).mean(axis=1)


def shell_counts(n: int) -> np.ndarray:
    """Number of configurations in each shell k (k up-spins), by enumeration."""
    ups = (configurations(n) > 0).sum(axis=1)
    return np.bincount(ups, minlength=n + 1)


def exact_dephasing(n: int, g: float, t: float, coupling_j: float = 1.0, spin=None) -> complex:
    """Up-down element of the tested spin after tracing the magnet, bath off.

    Each configuration c evolves with phase exp(-i (E_up(c) - E_down(c)) t), where
    E_s(c) = -n J mu^2 / 2 - n g s mu and mu is the configuration magnetization.
    The Ising part cancels between the two sectors. With ``spin`` given, the
    result is scaled by its r_ud; otherwise the normalized amplitude is returned.
    """
    mu = configuration_magnetization(n)
    e_up = -0.5 * n * coupling_j * mu**2 - n * g * mu
    e_down = -0.5 * n * coupling_j * mu**2 + n * g * mu
    amp = np.mean(np.exp(-1j * (e_up - e_down) * t))
    if spin is not None:
        amp = amp * spin.r_ud
    return complex(amp)


def exact_gibbs(n: int, coupling_j: float, temperature: float, coupling_g: float = 0.0,
                sector_spin: int = 1) -> np.ndarray:
    """Shell-aggregated Gibbs weights of E = -n J mu^2/2 - n g s mu over all configurations."""
    mu = configuration_magnetization(n)
    energy = -0.5 * n * coupling_j * mu**2 - n * coupling_g * sector_spin * mu
    if math.isinf(temperature):
        w = np.ones_like(energy)
    else:
        w = np.exp(-(energy - energy.min()) / temperature)
    ups = np.rint((mu + 1) * n / 2).astype(int)
    shells = np.bincount(ups, weights=w, minlength=n + 1)
    return shells / shells.sum()


def oracle_check(seed: int = 0, n_pairs: int = 50) -> list:
    """Run the oracle/engine agreement suite; returns rows (name, max_error, tol, passed)."""
    from .dephasing import dephasing_amplitude_closed, dephasing_amplitude_sum
    from .model import ModelParams, magnetization_grid
    from .registration import gibbs_distribution

    rng = np.random.default_rng(seed)
    rows = []
    gs = rng.uniform(0.01, 1.0, n_pairs)
    ts = rng.uniform(0.0, 20.0, n_pairs)
    err_closed = err_sum = 0.0
    for n in range(1, 11):
        for g, t in zip(gs, ts):
            ref = exact_dephasing(n, g, t)
            err_closed = max(err_closed, abs(ref - dephasing_amplitude_closed(n, g, t)))
            err_sum = max(err_sum, abs(ref - dephasing_amplitude_sum(n, g, t)))
    rows.append(("dephasing closed form vs enumeration (N<=10)", err_closed, 1e-12, err_closed <= 1e-12))
    rows.append(("dephasing shell sum vs enumeration (N<=10)", float(err_sum), 1e-12, bool(err_sum <= 1e-12)))

    err_counts = 0.0
    for n in range(1, MAX_SPINS + 1):
        counts = shell_counts(n)
        ref = np.exp(magnetization_grid(n).log_degeneracy)
        err_counts = max(err_counts, float(np.max(np.abs(counts - ref) / ref)))
    rows.append(("shell counts vs C(N,k)", err_counts, 1e-12, err_counts <= 1e-12))

    err_gibbs = 0.0
    for n in (2, 4, 7, 10):
        for temp, g, s in ((0.8, 0.0, 1), (0.5, 0.1, 1), (1.5, 0.2, -1)):
            p = ModelParams(n, 1.0, g, 1e-3, temp, 50.0)
            diff = np.max(np.abs(exact_gibbs(n, 1.0, temp, g, s) - gibbs_distribution(p, s)))
            err_gibbs = max(err_gibbs, float(diff))
    rows.append(("shell Gibbs vs enumeration", err_gibbs, 1e-12, err_gibbs <= 1e-12))
    return rows
