"""Diagonal blocks: birth-death master equation for P(m, t) in each spin sector."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import brentq

from .bath import FlipRates, build_flip_rates
from .dephasing import initial_magnet_distribution
from .model import ModelParams, magnetization_grid

# explicit Euler step: dt * max(up + down) stays below this
CFL = 0.1
TRACE_TOL = 1e-12


class StepSizeError(ValueError):
    """dt too large for the explicit stepper: it would produce negative probabilities."""


class ConservationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiagonalBlock:
    probabilities: np.ndarray
    weight: float = 1.0

    @property
    def m(self) -> np.ndarray:
        return magnetization_grid(self.probabilities.size - 1).values

    def mean(self) -> float:
        return float(self.probabilities @ self.m)

    def var(self) -> float:
        mu = self.mean()
        return float(self.probabilities @ (self.m - mu) ** 2)


# ---------------------------------------------------------------- fixed points

@dataclass(frozen=True)
class FixedPoints:
    roots: tuple
    stable: tuple
    sector_spin: int
    m_paramagnetic: float | None
    m_ferro_plus: float | None
    m_ferro_minus: float | None


def solve_fixed_points(params: ModelParams, sector_spin: int = 0,
                       coupling_g: float | None = None) -> FixedPoints:
    """All roots of m = tanh((J m + g s) / T) on [-1, 1].

    Sign changes are bracketed on a fine scan and refined by Brent's method.
    A root is stable when d/dm[tanh((J m + g s)/T) - m] < 0 there.
    """
    j, temp = params.coupling_j, params.temperature
    g = params.coupling_g if coupling_g is None else coupling_g
    field_ = g * sector_spin
    f = lambda m: math.tanh((j * m + field_) / temp) - m
    grid = np.linspace(-1.0, 1.0, 4001)
    vals = np.tanh((j * grid + field_) / temp) - grid
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    if vals[-1] == 0.0:
        roots.append(1.0)
    roots = sorted(set(roots))
    slopes = [(j / temp) * (1 - math.tanh((j * r + field_) / temp) ** 2) - 1 for r in roots]
    stable = tuple(s < 0 for s in slopes)
    unstable = [r for r, s in zip(roots, stable) if not s]
    stable_roots = [r for r, s in zip(roots, stable) if s]
    if unstable:
        para = min(unstable, key=abs)
    else:
        para = min(roots, key=abs) if len(roots) == 1 else None
    plus = max((r for r in stable_roots if r > 0), default=None)
    minus = min((r for r in stable_roots if r < 0), default=None)
    if len(roots) == 1 and para is not None:
        # supercritical: the single root is the paramagnet, no ordered states
        plus = minus = None
    return FixedPoints(roots=tuple(roots), stable=stable, sector_spin=sector_spin,
                       m_paramagnetic=para, m_ferro_plus=plus, m_ferro_minus=minus)


# ---------------------------------------------------------------- generator

def sector_energy(params: ModelParams, sector_spin: int, coupling_g: float | None = None) -> np.ndarray:
    g = params.coupling_g if coupling_g is None else coupling_g
    m = magnetization_grid(params.n_spins).values
    n = params.n_spins
    return -0.5 * n * params.coupling_j * m**2 - n * g * sector_spin * m


def gibbs_distribution(params: ModelParams, sector_spin: int, coupling_g: float | None = None) -> np.ndarray:
    """Sector Gibbs measure over shells, C(N,k) exp(-E(m_k)/T), normalized in log space."""
    logw = magnetization_grid(params.n_spins).log_degeneracy - sector_energy(
        params, sector_spin, coupling_g) / params.temperature
    logw = logw - logw.max()
    w = np.exp(logw)
    return w / math.fsum(w)


def master_equation_rhs(p: np.ndarray, rates: FlipRates) -> np.ndarray:
    """dP/dt of the birth-death chain, assembled from bond fluxes."""
    flux = rates.up_rates[:-1] * p[:-1] - rates.down_rates[1:] * p[1:]
    dp = np.zeros_like(p)
    dp[:-1] -= flux
    dp[1:] += flux
    return dp


def step_master_equation(block: DiagonalBlock, rates: FlipRates, dt: float) -> DiagonalBlock:
    """One explicit Euler step in flux form.

    Raises StepSizeError if dt * (up + down) > 1 anywhere, the bound beyond which
    an Euler step can drive a population negative.
    """
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    worst = dt * float(rates.total_rates.max())
    if worst > 1.0:
        raise StepSizeError(f"dt * max rate = {worst:.3g} > 1")
    p = block.probabilities + dt * master_equation_rhs(block.probabilities, rates)
    return DiagonalBlock(probabilities=p, weight=block.weight)


@numba.njit(cache=True)
def _advance(p, comp, up, down, m, dt, nsteps, threshold, t0, stats):
    """Advance ``nsteps`` Euler steps in place.

    Each bond flux is computed once and used for both of its cells, so mass moves
    without being created. A cell first loses its outflow (at most CFL of its
    content) and then gains its inflow, which keeps every entry nonnegative. The
    rounding error of both additions is carried into the next step (``comp``).

    stats = [max |sum - 1|, min p, crossing time (nan if none), previous mean].
    """
    n = p.size
    fu = np.empty(n)
    fd = np.empty(n)
    prev_mean = stats[3]
    for s in range(nsteps):
        for i in range(n):
            fu[i] = dt * up[i] * p[i]
            fd[i] = dt * down[i] * p[i]
        for i in range(n):
            out = fu[i] + fd[i]
            inflow = comp[i]
            if i > 0:
                inflow += fu[i - 1]
            if i < n - 1:
                inflow += fd[i + 1]
            x = p[i]
            a = x - out
            err = (x - a) - out
            t = a + inflow
            if abs(a) >= abs(inflow):
                err += (a - t) + inflow
            else:
                err += (inflow - t) + a
            p[i] = t
            comp[i] = err
        total = 0.0
        tc = 0.0
        mean = 0.0
        pmin = p[0] + comp[0]
        for i in range(n):
            v = p[i] + comp[i]
            # compensated total
            y = v - tc
            z = total + y
            tc = (z - total) - y
            total = z
            mean += v * m[i]
            if v < pmin:
                pmin = v
        dev = abs(total - 1.0)
        if dev > stats[0]:
            stats[0] = dev
        if pmin < stats[1]:
            stats[1] = pmin
        if np.isnan(stats[2]) and mean >= threshold and prev_mean < threshold:
            frac = (threshold - prev_mean) / (mean - prev_mean)
            stats[2] = t0 + (s + frac) * dt
        prev_mean = mean
    stats[3] = prev_mean


@dataclass
class Integrator:
    """Deterministic driver around the compiled stepper.

    Time steps are chosen per segment: the segment length divided into the
    fewest equal steps with dt * max rate <= CFL, so sample times are hit exactly.
    """

    probabilities: np.ndarray
    time: float = 0.0
    threshold: float = math.inf
    observable: np.ndarray | None = None  # quantity whose mean is watched for the crossing
    comp: np.ndarray = field(default=None)
    stats: np.ndarray = field(default=None)
    steps: int = 0

    def __post_init__(self):
        self.probabilities = np.array(self.probabilities, dtype=float)
        if self.comp is None:
            self.comp = np.zeros_like(self.probabilities)
        if self.observable is None:
            self.observable = magnetization_grid(self.probabilities.size - 1).values
        self.observable = np.ascontiguousarray(self.observable, dtype=float)
        self.stats = np.array([abs(math.fsum(self.probabilities) - 1.0),
                               float(self.probabilities.min()), math.nan,
                               float(self.probabilities @ self.observable)])

    @property
    def p(self) -> np.ndarray:
        return self.probabilities + self.comp

    def advance_to(self, t_end: float, rates: FlipRates, cfl: float = CFL) -> None:
        span = t_end - self.time
        if span < 0:
            raise ValueError("cannot integrate backwards")
        if span == 0:
            return
        rmax = float(rates.total_rates.max())
        nsteps = max(1, math.ceil(span * rmax / cfl)) if rmax > 0 else 1
        dt = span / nsteps
        _advance(self.probabilities, self.comp, np.ascontiguousarray(rates.up_rates),
                 np.ascontiguousarray(rates.down_rates), self.observable, dt, nsteps,
                 self.threshold, self.time, self.stats)
        self.steps += nsteps
        self.time = t_end
        if self.stats[0] > TRACE_TOL:
            raise ConservationError(f"trace drifted by {self.stats[0]:.3e}")
        if self.stats[1] < 0:
            raise ConservationError(f"negative probability {self.stats[1]:.3e}")

    @property
    def crossing_time(self) -> float:
        return float(self.stats[2])

    @property
    def max_trace_error(self) -> float:
        return float(self.stats[0])

    @property
    def min_probability(self) -> float:
        return float(self.stats[1])


# ---------------------------------------------------------------- registration run

def unimodal_in_well(p: np.ndarray, sector_spin: int) -> bool:
    """Dominant peak on the sector's side and a single maximum on that half-grid."""
    m = magnetization_grid(p.size - 1).values
    good = m * sector_spin > 0
    return bool(good[int(np.argmax(p))]) and count_peaks(p[good]) == 1


def count_peaks(p: np.ndarray, rel: float = 1e-6) -> int:
    """Number of local maxima of P above rel * max(P); plateaus count once."""
    cut = rel * p.max()
    peaks = 0
    n = p.size
    for k in range(n):
        if p[k] < cut:
            continue
        left = p[k - 1] if k > 0 else -1.0
        right = p[k + 1] if k < n - 1 else -1.0
        if p[k] > left and p[k] >= right:
            peaks += 1
    return peaks


@dataclass
class RegistrationResult:
    sector_spin: int
    times: np.ndarray
    mean_m: np.ndarray
    var_m: np.ndarray
    snapshots: dict
    final: np.ndarray
    target: float | None
    threshold_level: float
    measured_registration_time: float
    registered: bool
    unimodal_in_correct_well: bool
    heat_to_bath: float
    mean_at_switch_off: float
    max_trace_error: float
    min_probability: float
    steps: int

    @property
    def wrong_well_mass(self) -> float:
        m = magnetization_grid(self.final.size - 1).values
        wrong = m < 0 if self.sector_spin > 0 else m > 0
        return float(self.final[wrong].sum())

    def well_std(self) -> float:
        """Standard deviation of the final distribution restricted to its registered well."""
        m = magnetization_grid(self.final.size - 1).values
        good = m > 0 if self.sector_spin > 0 else m < 0
        p = self.final[good] / self.final[good].sum()
        mu = p @ m[good]
        return float(math.sqrt(p @ (m[good] - mu) ** 2))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_m", "var_m"])
            for row in zip(self.times, self.mean_m, self.var_m):
                w.writerow([repr(float(v)) for v in row])

    def snapshots_to_csv(self, path) -> None:
        m = magnetization_grid(self.final.size - 1).values
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "m", "p"])
            for t in sorted(self.snapshots):
                for mk, pk in zip(m, self.snapshots[t]):
                    w.writerow([repr(float(t)), repr(float(mk)), repr(float(pk))])


def register(params: ModelParams, sector_spin: int, t_max: float, sample_times=None,
             switch_off: float | None = None, threshold_fraction: float = 1 - math.exp(-1.0),
             snapshot_times=(), p0: np.ndarray | None = None, cfl: float = CFL) -> RegistrationResult:
    """Relax the diagonal block of one sector from the paramagnet.

    The coupling g acts on [0, switch_off) and is zero afterwards (default:
    on for the whole run). The registration time is the first crossing of
    ``threshold_fraction * m_ferro`` by the signed mean s<m>, where m_ferro is
    the ordered root of the sector with the coupling on. Heat released to the
    bath is tracked as minus the energy change of each constant-Hamiltonian segment.
    """
    if sector_spin not in (1, -1):
        raise ValueError("sector_spin must be +1 or -1")
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if switch_off is None or switch_off > t_max:
        switch_off = t_max
    sample_times = np.asarray(sample_times if sample_times is not None else
                              np.linspace(0.0, t_max, 201), dtype=float)
    if np.any(np.diff(sample_times) < 0):
        raise ValueError("sample times must be sorted")
    snapshot_times = {float(t) for t in snapshot_times}
    marks = sorted(set(sample_times.tolist()) | snapshot_times | {switch_off, t_max})
    marks = [t for t in marks if 0.0 <= t <= t_max]

    fp = solve_fixed_points(params, sector_spin)
    target = fp.m_ferro_plus if sector_spin > 0 else fp.m_ferro_minus
    level = threshold_fraction * abs(target) if target is not None else math.inf

    p_init = initial_magnet_distribution(params) if p0 is None else np.asarray(p0, float)
    # integrate the signed mean so both sectors cross the same positive level
    m_signed = magnetization_grid(params.n_spins).values * sector_spin
    on = build_flip_rates(params, sector_spin)
    off = build_flip_rates(params, sector_spin, coupling_g=0.0)
    integ = Integrator(p_init, threshold=level, observable=m_signed)

    e_on = sector_energy(params, sector_spin)
    e_off = sector_energy(params, sector_spin, 0.0)
    heat = float(p_init @ e_on)
    m = magnetization_grid(params.n_spins).values

    times, means, variances, snaps = [], [], [], {}
    mean_at_off = math.nan
    sample_set = set(sample_times.tolist())

    def record(t):
        p = integ.p
        if t in sample_set:
            mu = float(p @ m)
            times.append(t)
            means.append(mu)
            variances.append(float(p @ (m - mu) ** 2))
        if t in snapshot_times:
            snaps[t] = p.copy()

    for t in marks:
        if t == 0.0:
            record(t)
            continue
        rates = on if integ.time < switch_off else off
        integ.advance_to(t, rates, cfl)
        if t == switch_off and switch_off < t_max:
            p = integ.p
            heat -= float(p @ e_on)
            heat += float(p @ e_off)
            mean_at_off = float(p @ m)
        record(t)
    final = integ.p
    heat -= float(final @ (e_on if switch_off >= t_max else e_off))
    if switch_off >= t_max:
        mean_at_off = float(final @ m)

    unimodal = unimodal_in_well(final, sector_spin)
    t_cross = integ.crossing_time
    return RegistrationResult(
        sector_spin=sector_spin, times=np.array(times), mean_m=np.array(means),
        var_m=np.array(variances), snapshots=snaps, final=final, target=target,
        threshold_level=level, measured_registration_time=t_cross,
        registered=not math.isnan(t_cross), unimodal_in_correct_well=unimodal,
        heat_to_bath=heat, mean_at_switch_off=mean_at_off,
        max_trace_error=integ.max_trace_error, min_probability=integ.min_probability,
        steps=integ.steps,
    )


@dataclass
class LifetimeProbe:
    times: np.ndarray
    mean_m: np.ndarray
    var_m: np.ndarray
    n_peaks: np.ndarray
    bimodal_onset: float


def paramagnet_lifetime_probe(params: ModelParams, t_max: float, n_samples: int = 400,
                              probe_times=()) -> LifetimeProbe:
    """Follow the uncoupled (g = 0) paramagnet: variance growth and onset of two peaks."""
    if params.coupling_g != 0:
        raise ValueError("lifetime probe runs with the coupling off (g = 0)")
    grid = np.linspace(0.0, t_max, n_samples + 1)
    ts = np.unique(np.concatenate([grid, np.asarray(probe_times, float)]))
    ts = ts[ts <= t_max]
    rates = build_flip_rates(params, 1)
    m = magnetization_grid(params.n_spins).values
    integ = Integrator(initial_magnet_distribution(params))
    means, variances, peaks = [], [], []
    onset = math.nan
    for t in ts:
        integ.advance_to(float(t), rates)
        p = integ.p
        mu = float(p @ m)
        means.append(mu)
        variances.append(float(p @ (m - mu) ** 2))
        npk = count_peaks(p)
        peaks.append(npk)
        if math.isnan(onset) and npk >= 2:
            onset = float(t)
    return LifetimeProbe(times=ts, mean_m=np.array(means), var_m=np.array(variances),
                         n_peaks=np.array(peaks), bimodal_onset=onset)
