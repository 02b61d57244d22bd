"""End-to-end measurement runs: compound state, pointer statistics, readout, entropy."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dephasing import (
    DephasingTrajectory,
    OffDiagonalBlock,
    bath_suppression_envelope,
    dephasing_amplitude_closed,
    initial_magnet_distribution,
    offdiagonal_block,
    offdiagonal_trajectory,
)
from .model import (
    ModelParams,
    RegimeReport,
    Timescales,
    compute_timescales,
    magnetization_grid,
    tau_irreversibility,
    tau_reduction,
    validate_regime,
)
from .registration import (
    DiagonalBlock,
    RegistrationResult,
    count_peaks,
    gibbs_distribution,
    register,
    solve_fixed_points,
    unimodal_in_well,
)


class RegimeError(ValueError):
    pass


class RegistrationError(RuntimeError):
    pass


class IncompleteMeasurementError(RuntimeError):
    """Raised when asked for outcomes of a state that still carries cat terms."""


@dataclass(frozen=True)
class InitialSpinState:
    r_uu: float
    r_ud: complex = 0.0

    def __post_init__(self):
        r_uu = float(self.r_uu)
        object.__setattr__(self, "r_uu", r_uu)
        object.__setattr__(self, "r_ud", complex(self.r_ud))
        if not 0.0 <= r_uu <= 1.0:
            raise ValueError("r_uu must lie in [0, 1]")
        if abs(self.r_ud) ** 2 > r_uu * (1.0 - r_uu) + 1e-12:
            raise ValueError("|r_ud|^2 > r_uu r_dd: spin density matrix not positive")

    @property
    def r_dd(self) -> float:
        return 1.0 - self.r_uu

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.r_uu, self.r_ud], [np.conj(self.r_ud), self.r_dd]], dtype=complex)

    @classmethod
    def from_matrix(cls, rho) -> "InitialSpinState":
        rho = np.asarray(rho, dtype=complex)
        return cls(r_uu=float(rho[0, 0].real), r_ud=complex(rho[0, 1]))

    @classmethod
    def pure(cls, theta: float, phi: float = 0.0) -> "InitialSpinState":
        """cos(theta/2)|up> + e^{i phi} sin(theta/2)|down>."""
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        return cls(r_uu=c * c, r_ud=c * s * complex(math.cos(phi), -math.sin(phi)))


@dataclass(frozen=True)
class Schedule:
    """Coupling on during [0, t_switch_off), off until t_final; n_samples trajectory points."""

    t_switch_off: float
    t_final: float
    n_samples: int = 200

    def __post_init__(self):
        if not 0 < self.t_switch_off <= self.t_final:
            raise ValueError("need 0 < t_switch_off <= t_final")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_samples + 1)


def default_schedule(params: ModelParams) -> Schedule:
    """Coupling on for 4 tau_reg, then 3 tau_reg of free relaxation."""
    ts = compute_timescales(params)
    if not math.isfinite(ts.tau_reg):
        raise ValueError("no registration timescale for these parameters; give the schedule explicitly")
    return Schedule(t_switch_off=4.0 * ts.tau_reg, t_final=7.0 * ts.tau_reg)


@dataclass(frozen=True)
class CompoundState:
    block_uu: DiagonalBlock
    block_dd: DiagonalBlock
    block_ud: OffDiagonalBlock
    time: float

    @property
    def block_du(self) -> np.ndarray:
        return self.block_ud.conjugate_block

    def trace(self) -> float:
        return (self.block_uu.weight * math.fsum(self.block_uu.probabilities)
                + self.block_dd.weight * math.fsum(self.block_dd.probabilities))

    @property
    def offdiag_residual(self) -> float:
        """|A(t) envelope(t)|, the surviving fraction of the initial coherence."""
        return abs(self.block_ud.scalar_amplitude)


@dataclass
class FinalStateReport:
    pointer_weights: tuple
    pointer_sign_masses: tuple
    pointer_locations: tuple
    pointer_spreads: tuple
    offdiag_residual: float
    post_spin_state: np.ndarray
    entropy_initial: float
    entropy_final: float
    correlation_check: bool
    wrong_well_mass: tuple
    complete: bool
    threshold: float

    def as_dict(self) -> dict:
        return {
            "p_up": self.pointer_weights[0],
            "p_down": self.pointer_weights[1],
            "mass_m_positive": self.pointer_sign_masses[0],
            "mass_m_negative": self.pointer_sign_masses[1],
            "m_up": self.pointer_locations[0],
            "m_down": self.pointer_locations[1],
            "spread_up": self.pointer_spreads[0],
            "spread_down": self.pointer_spreads[1],
            "offdiag_residual": self.offdiag_residual,
            "post_spin.r_uu": float(self.post_spin_state[0, 0].real),
            "post_spin.r_dd": float(self.post_spin_state[1, 1].real),
            "post_spin.abs_r_ud": float(abs(self.post_spin_state[0, 1])),
            "entropy_initial": self.entropy_initial,
            "entropy_final": self.entropy_final,
            "correlation_check": self.correlation_check,
            "wrong_well_mass_up": self.wrong_well_mass[0],
            "wrong_well_mass_down": self.wrong_well_mass[1],
            "complete": self.complete,
        }


@dataclass
class ReadoutSample:
    outcomes: np.ndarray
    seed: int
    frequencies: tuple

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("outcome\n")
            fh.write("\n".join(str(int(o)) for o in self.outcomes))
            fh.write("\n")


@dataclass
class EntropyBalance:
    spin_initial: float
    magnet_initial: float
    spin_final: float
    magnet_final: tuple
    bath_final: tuple
    gibbs_well_entropy: tuple
    weights: tuple
    approximate: bool

    @property
    def entropy_initial(self) -> float:
        return self.spin_initial + self.magnet_initial

    @property
    def apparatus_final(self) -> float:
        return sum(w * (sm + sb) for w, sm, sb in zip(self.weights, self.magnet_final, self.bath_final))

    @property
    def entropy_final(self) -> float:
        return self.spin_final + self.apparatus_final

    @property
    def gap(self) -> float:
        return self.entropy_final - self.entropy_initial

    @property
    def spin_gap(self) -> float:
        return self.spin_final - self.spin_initial

    @property
    def apparatus_gap(self) -> float:
        return self.apparatus_final - self.magnet_initial

    def as_dict(self) -> dict:
        return {
            "entropy.spin_initial": self.spin_initial,
            "entropy.magnet_initial": self.magnet_initial,
            "entropy.spin_final": self.spin_final,
            "entropy.magnet_final_up": self.magnet_final[0],
            "entropy.magnet_final_down": self.magnet_final[1],
            "entropy.bath_up": self.bath_final[0],
            "entropy.bath_down": self.bath_final[1],
            "entropy.gibbs_well_up": self.gibbs_well_entropy[0],
            "entropy.gibbs_well_down": self.gibbs_well_entropy[1],
            "entropy.initial": self.entropy_initial,
            "entropy.final": self.entropy_final,
            "entropy.gap": self.gap,
            "entropy.spin_gap": self.spin_gap,
            "entropy.apparatus_gap": self.apparatus_gap,
            "entropy.approximate": self.approximate,
        }


@dataclass
class RunRecord:
    params: ModelParams
    spin: InitialSpinState
    schedule: Schedule
    timescales: Timescales
    regime: RegimeReport
    registration_up: RegistrationResult
    registration_down: RegistrationResult
    dephasing: DephasingTrajectory
    entropy: EntropyBalance | None = None
    readout: ReadoutSample | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {f"param.{k}": v for k, v in self.params.as_dict().items()}
        out.update({"spin.r_uu": self.spin.r_uu, "spin.r_ud_re": self.spin.r_ud.real,
                    "spin.r_ud_im": self.spin.r_ud.imag})
        out.update({f"timescale.{k}": v for k, v in self.timescales.as_dict().items()})
        out["measured.tau_reg_up"] = self.registration_up.measured_registration_time
        out["measured.tau_reg_down"] = self.registration_down.measured_registration_time
        out["max_trace_error"] = max(self.registration_up.max_trace_error,
                                     self.registration_down.max_trace_error)
        out["min_probability"] = min(self.registration_up.min_probability,
                                     self.registration_down.min_probability)
        out["recurrence_value"] = self.dephasing.recurrence_value
        if self.entropy is not None:
            out.update(self.entropy.as_dict())
        if self.readout is not None:
            out["readout.seed"] = self.readout.seed
            out["readout.n"] = int(self.readout.outcomes.size)
            out["readout.f_up"] = self.readout.frequencies[0]
            out["readout.f_down"] = self.readout.frequencies[1]
        out.update(self.extra)
        return out


# ---------------------------------------------------------------- entropies

def magnet_entropy(p: np.ndarray, log_degeneracy: np.ndarray) -> float:
    """Von Neumann entropy of a magnet state uniform within each m-shell."""
    nz = p > 0
    return float(-(p[nz] @ np.log(p[nz])) + p[nz] @ log_degeneracy[nz])


def spin_entropy(rho: np.ndarray) -> float:
    ev = np.clip(np.linalg.eigvalsh(np.asarray(rho, dtype=complex)), 0.0, None)
    ev = ev[ev > 0]
    return max(0.0, float(-(ev @ np.log(ev))))


def _diag_entropy(weights) -> float:
    return float(-sum(w * math.log(w) for w in weights if w > 0))


# ---------------------------------------------------------------- operations

def pointer_distribution(state: CompoundState) -> np.ndarray:
    """p(m) = r_uu P_up(m) + r_dd P_down(m) over the magnetization grid."""
    return state.block_uu.weight * state.block_uu.probabilities + \
        state.block_dd.weight * state.block_dd.probabilities


def post_measurement_spin_state(state: CompoundState) -> np.ndarray:
    """Spin marginal: apparatus traced out of the compound state."""
    r_uu = state.block_uu.weight * math.fsum(state.block_uu.probabilities)
    r_dd = state.block_dd.weight * math.fsum(state.block_dd.probabilities)
    r_ud = state.block_ud.coherence * state.block_ud.scalar_amplitude
    return np.array([[r_uu, r_ud], [np.conj(r_ud), r_dd]], dtype=complex)


def initial_compound_state(spin: InitialSpinState, params: ModelParams) -> CompoundState:
    p0 = initial_magnet_distribution(params)
    return CompoundState(
        block_uu=DiagonalBlock(p0.copy(), spin.r_uu),
        block_dd=DiagonalBlock(p0.copy(), spin.r_dd),
        block_ud=offdiagonal_block(params, spin.r_ud, 0.0, p0),
        time=0.0,
    )


def entropy_balance(spin: InitialSpinState, p0: np.ndarray, final: CompoundState,
                    params: ModelParams, heat_to_bath=(0.0, 0.0),
                    threshold: float = 1e-3) -> EntropyBalance:
    """Entropy of S+A before and after the run.

    The apparatus is magnet plus bath: each sector's final apparatus entropy is
    the shell-resolved magnet entropy plus Q/T, the heat Q it released into the
    bath at temperature T. The bath starts as the reference (zero).
    """
    log_deg = magnetization_grid(params.n_spins).log_degeneracy
    approximate = final.offdiag_residual > threshold
    if approximate:
        warnings.warn(f"off-diagonal residual {final.offdiag_residual:.3g} exceeds {threshold:g}; "
                      "final entropy decomposition is approximate", RuntimeWarning, stacklevel=2)
    rho_final = post_measurement_spin_state(final)
    blocks = (final.block_uu, final.block_dd)
    magnet_final = tuple(magnet_entropy(b.probabilities, log_deg) for b in blocks)
    bath = tuple(q / params.temperature for q in heat_to_bath)
    gibbs = []
    for sign in (1, -1):
        pg = gibbs_distribution(params, sign, coupling_g=0.0)
        m = magnetization_grid(params.n_spins).values
        pg = np.where(m * sign > 0, pg, 0.0)
        pg = pg / pg.sum()
        gibbs.append(magnet_entropy(pg, log_deg))
    return EntropyBalance(
        spin_initial=spin_entropy(spin.matrix),
        magnet_initial=magnet_entropy(p0, log_deg),
        spin_final=spin_entropy(rho_final),
        magnet_final=magnet_final,
        bath_final=bath,
        gibbs_well_entropy=tuple(gibbs),
        weights=(final.block_uu.weight, final.block_dd.weight),
        approximate=approximate,
    )


def run_measurement(spin: InitialSpinState, params: ModelParams, schedule: Schedule | None = None,
                    *, margin: float = 10.0, force: bool = False, threshold: float = 1e-3,
                    leak_tol: float = 1e-6):
    """Full measurement: dephasing of the cat blocks and registration of both sectors.

    Returns (CompoundState at t_final, FinalStateReport, RunRecord).
    """
    regime = validate_regime(params, margin)
    if not regime.overall and not force:
        raise RegimeError("parameters outside the solvable regime: " + ", ".join(regime.failed()))
    if schedule is None:
        schedule = default_schedule(params)
    p0 = initial_magnet_distribution(params)
    times = schedule.sample_times()
    regs = {}
    for sign in (1, -1):
        regs[sign] = register(params, sign, schedule.t_final, times,
                              switch_off=schedule.t_switch_off, p0=p0)
    for sign, weight in ((1, spin.r_uu), (-1, spin.r_dd)):
        if weight > 0 and not regs[sign].registered:
            raise RegistrationError(f"sector {sign:+d} did not register before t = {schedule.t_final:g}")

    t_f = schedule.t_final
    state = CompoundState(
        block_uu=DiagonalBlock(regs[1].final, spin.r_uu),
        block_dd=DiagonalBlock(regs[-1].final, spin.r_dd),
        block_ud=offdiagonal_block(params, spin.r_ud, t_f, p0),
        time=t_f,
    )
    deph = offdiagonal_trajectory(params, times, threshold=threshold)
    ent = entropy_balance(spin, p0, state, params,
                          heat_to_bath=(regs[1].heat_to_bath, regs[-1].heat_to_bath),
                          threshold=threshold)
    m = magnetization_grid(params.n_spins).values
    pm = pointer_distribution(state)
    locs, spreads = [], []
    for b in (state.block_uu, state.block_dd):
        locs.append(b.mean())
        spreads.append(math.sqrt(b.var()))
    weighted = [(1, spin.r_uu, state.block_uu), (-1, spin.r_dd, state.block_dd)]
    aligned = all(np.sign(b.mean()) == s for s, w, b in weighted if w > 0)
    leaks = (regs[1].wrong_well_mass, regs[-1].wrong_well_mass)
    unimodal = all(unimodal_in_well(b.probabilities, s) for s, w, b in weighted if w > 0)
    report = FinalStateReport(
        pointer_weights=(state.block_uu.weight * math.fsum(state.block_uu.probabilities),
                         state.block_dd.weight * math.fsum(state.block_dd.probabilities)),
        pointer_sign_masses=(float(pm[m > 0].sum()), float(pm[m < 0].sum())),
        pointer_locations=tuple(locs),
        pointer_spreads=tuple(spreads),
        offdiag_residual=state.offdiag_residual,
        post_spin_state=post_measurement_spin_state(state),
        entropy_initial=ent.entropy_initial,
        entropy_final=ent.entropy_final,
        correlation_check=bool(aligned and all(l <= leak_tol for l in leaks)),
        wrong_well_mass=leaks,
        complete=bool(state.offdiag_residual < threshold and unimodal),
        threshold=threshold,
    )
    record = RunRecord(params=params, spin=spin, schedule=schedule,
                       timescales=compute_timescales(params), regime=regime,
                       registration_up=regs[1], registration_down=regs[-1],
                       dephasing=deph, entropy=ent)
    return state, report, record


def sample_readout(state: CompoundState, n_samples: int, seed: int,
                   threshold: float = 1e-3) -> ReadoutSample:
    """Draw i.i.d. pointer values m from p(m) and record sign(m).

    Draws landing exactly on m = 0 are redrawn.
    """
    if state.offdiag_residual > threshold:
        raise IncompleteMeasurementError(
            f"off-diagonal residual {state.offdiag_residual:.3g} above {threshold:g}: measurement not complete")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    p = pointer_distribution(state)
    p = p / p.sum()
    m = magnetization_grid(p.size - 1).values
    rng = np.random.default_rng(seed)
    idx = rng.choice(p.size, size=n_samples, p=p)
    zero = m[idx] == 0
    while zero.any():
        idx[zero] = rng.choice(p.size, size=int(zero.sum()), p=p)
        zero = m[idx] == 0
    outcomes = np.sign(m[idx]).astype(np.int8)
    f_up = float(np.count_nonzero(outcomes > 0)) / n_samples
    return ReadoutSample(outcomes=outcomes, seed=int(seed), frequencies=(f_up, 1.0 - f_up))


@dataclass
class ReductionReport:
    spin_state: np.ndarray
    offdiag_abs: float
    envelope: float
    apparatus_mean: float
    apparatus_var: float
    apparatus_unimodal: bool
    spin_entropy_gap: float
    window: tuple


def stop_after_reduction(spin: InitialSpinState, params: ModelParams, t_stop: float,
                         margin: float = 10.0, check_window: bool = True) -> ReductionReport:
    """Halt after dephasing but before the bath acts, and trace out the apparatus.

    Without the bath the Hamiltonian is diagonal in m, so the diagonal blocks
    keep their initial shell populations exactly; only the cat block moves.
    """
    t_red = tau_reduction(params)
    t_irr = tau_irreversibility(params) if params.gamma > 0 else math.inf
    if check_window and not (t_stop >= margin * t_red and margin * t_stop <= t_irr):
        raise ValueError(f"t_stop = {t_stop:.4g} outside the window "
                         f"[{margin:g} tau_red, tau_irrev/{margin:g}] = [{margin * t_red:.4g}, {t_irr / margin:.4g}]")
    p0 = initial_magnet_distribution(params)
    env = bath_suppression_envelope(params, t_stop)
    amp = complex(dephasing_amplitude_closed(params.n_spins, params.coupling_g, t_stop)) * env
    r_ud = spin.r_ud * amp
    rho = np.array([[spin.r_uu, r_ud], [np.conj(r_ud), spin.r_dd]], dtype=complex)
    pm = spin.r_uu * p0 + spin.r_dd * p0
    m = magnetization_grid(params.n_spins).values
    mean = float(pm @ m)
    return ReductionReport(
        spin_state=rho,
        offdiag_abs=abs(r_ud),
        envelope=float(env),
        apparatus_mean=mean,
        apparatus_var=float(pm @ (m - mean) ** 2),
        apparatus_unimodal=count_peaks(pm) == 1,
        spin_entropy_gap=spin_entropy(rho) - spin_entropy(spin.matrix),
        window=(margin * t_red, t_irr / margin),
    )
