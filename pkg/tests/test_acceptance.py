"""Acceptance criteria, one marker per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary ends with
one [PASS]/[FAIL] line per criterion.
"""

import math
import time

import numpy as np
import pytest

from qmeasure.bath import build_flip_rates
from qmeasure.dephasing import (
    amplitude_crossing_time,
    bath_suppression_envelope,
    binomial_distribution,
    dephasing_amplitude,
    dephasing_amplitude_closed,
    dephasing_amplitude_sum,
)
from qmeasure.measurement import magnet_entropy, post_measurement_spin_state, sample_readout, stop_after_reduction
from qmeasure.model import (
    ModelParams,
    magnetization_grid,
    tau_irreversibility,
    tau_recurrence,
    tau_reduction,
    tau_registration,
)
from qmeasure.oracle import exact_dephasing
from qmeasure.registration import gibbs_distribution, master_equation_rhs, register, solve_fixed_points

criterion = pytest.mark.criterion


def bisect_root(f, lo, hi, n_iter=200):
    """Plain bisection, kept separate from the library's Brent refinement."""
    flo = f(lo)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="module")
def m_f(ref_params):
    """Zero-field ordered magnetization from bisection on m = tanh(J m / T)."""
    j, t = ref_params.coupling_j, ref_params.temperature
    return bisect_root(lambda m: math.tanh(j * m / t) - m, 0.3, 1.0)


@pytest.fixture(scope="module")
def growth_run(ref_params, m_f):
    """Up-sector registration sampled densely, crossing level (1 - 1/e) m_F."""
    t_reg = tau_registration(ref_params, m_f)
    m_on = solve_fixed_points(ref_params, 1).m_ferro_plus
    start = time.perf_counter()
    res = register(ref_params, 1, 2 * t_reg, np.linspace(0, 2 * t_reg, 4001),
                   threshold_fraction=(1 - math.exp(-1)) * m_f / m_on)
    return res, time.perf_counter() - start


# ---------------------------------------------------------------- 1

@criterion(1, "dephasing equals the 2^N oracle (N = 1..10, 50 pairs, 1e-12, < 5 s)")
def test_c01_dephasing_exact():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst = 0.0
    for n in range(1, 11):
        for g, t in zip(rng.uniform(0.01, 0.5, 50), rng.uniform(0.0, 200.0, 50)):
            ref = exact_dephasing(n, g, t)
            worst = max(worst, abs(dephasing_amplitude_sum(n, g, t) - ref),
                        abs(dephasing_amplitude_closed(n, g, t) - ref))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-12
    assert elapsed < 5.0


# ---------------------------------------------------------------- 2

@criterion(2, "reduction time: slope -0.5 +- 0.01, crossings within 1%, < 10 s")
def test_c02_reduction_scaling(ref_params):
    g = ref_params.coupling_g
    ns = np.array([100, 400, 1600, 6400])
    start = time.perf_counter()
    crossings = np.array([amplitude_crossing_time(int(n), g) for n in ns])
    elapsed = time.perf_counter() - start
    slope = np.polyfit(np.log(ns), np.log(crossings), 1)[0]
    assert abs(slope + 0.5) <= 0.01
    np.testing.assert_allclose(crossings, 1.0 / (np.sqrt(2 * ns) * g), rtol=0.01)
    assert elapsed < 10.0


# ---------------------------------------------------------------- 3

@criterion(3, "Gaussian envelope within 0.02 up to 2 tau_red at N = 1000")
def test_c03_gaussian(ref_params):
    tr = tau_reduction(ref_params)
    t = np.linspace(0, 2 * tr, 4001)
    dev = np.abs(np.abs(dephasing_amplitude(ref_params, t)) - np.exp(-((t / tr) ** 2)))
    assert dev.max() <= 0.02


# ---------------------------------------------------------------- 4

@criterion(4, "recurrence at pi/(2g) survives without bath, suppressed with it; timescales ordered")
def test_c04_recurrence(ref_params):
    t_rec = math.pi / (2 * ref_params.coupling_g)
    bare = ref_params.replace(gamma=0.0)
    assert abs(abs(dephasing_amplitude(bare, t_rec, method="sum")) - 1.0) <= 1e-12
    assert abs(abs(dephasing_amplitude(bare, t_rec)) - 1.0) <= 1e-12
    value = abs(dephasing_amplitude(ref_params, t_rec)) * bath_suppression_envelope(ref_params, t_rec)
    assert value < 1e-3
    assert tau_reduction(ref_params) < tau_irreversibility(ref_params) < tau_recurrence(ref_params)
    assert tau_recurrence(ref_params) == pytest.approx(t_rec)


# ---------------------------------------------------------------- 5

@criterion(5, "Gibbs stationarity, relative |dP/dt| <= 1e-10 on 10 random parameter sets")
def test_c05_gibbs_stationary():
    rng = np.random.default_rng(7)
    for _ in range(10):
        temp = rng.uniform(0.2, 0.95)
        p = ModelParams(int(rng.integers(50, 3000)), 1.0, rng.uniform(0.0, 0.2),
                        10 ** rng.uniform(-5, -2), temp, rng.uniform(20, 200))
        for s in (1, -1):
            rates = build_flip_rates(p, s)
            pg = gibbs_distribution(p, s)
            dp = master_equation_rhs(pg, rates)
            outflow = rates.total_rates * pg
            live = outflow > 1e-280
            assert np.max(np.abs(dp[live]) / outflow[live]) <= 1e-10


# ---------------------------------------------------------------- 6

@criterion(6, "registration reaches the field-shifted root, then m_F after switch-off (10/N)")
def test_c06_fixed_point_with_coupling(reference_run, ref_params):
    _, _, record = reference_run
    g, j, t = ref_params.coupling_g, ref_params.coupling_j, ref_params.temperature
    root = bisect_root(lambda m: math.tanh((j * m + g) / t) - m, 0.3, 1.0)
    assert abs(record.registration_up.mean_at_switch_off - root) <= 10 / ref_params.n_spins


@criterion(6, "registration reaches the field-shifted root, then m_F after switch-off (10/N)")
def test_c06_fixed_point_after_switch_off(reference_run, ref_params, m_f):
    state, _, _ = reference_run
    assert m_f == pytest.approx(0.710, abs=5e-4)
    assert abs(state.block_uu.mean() - m_f) <= 10 / ref_params.n_spins


# ---------------------------------------------------------------- 7

@criterion(7, "registration time within 25% of the formula; growth rate gamma(J-T) within 5%; < 60 s")
def test_c07_registration_time(growth_run, ref_params, m_f):
    res, elapsed = growth_run
    assert elapsed < 60.0
    assert res.registered
    formula = tau_registration(ref_params, m_f)
    assert formula == pytest.approx(1.07e4, rel=0.01)
    assert abs(res.measured_registration_time / formula - 1) <= 0.25


@criterion(7, "registration time within 25% of the formula; growth rate gamma(J-T) within 5%; < 60 s")
def test_c07_growth_rate_stated_window(growth_run, ref_params):
    res, _ = growth_run
    j, t, g = ref_params.coupling_j, ref_params.temperature, ref_params.coupling_g
    window = (res.mean_m >= 3 * g / (j - t)) & (res.mean_m <= 0.2)
    assert window.sum() >= 3, "window 3g/(J-T) <= <m> <= 0.2 contains no samples"
    slope = np.polyfit(res.times[window], np.log(res.mean_m[window]), 1)[0]
    assert abs(slope / (ref_params.gamma * (j - t)) - 1) <= 0.05


@criterion(7, "registration time within 25% of the formula; growth rate gamma(J-T) within 5%; < 60 s")
def test_c07_growth_rate_linear_regime(growth_run, ref_params):
    # the linear drift gamma((J-T) m + g) integrates to <m> + g/(J-T) ~ exp(gamma (J-T) t)
    res, _ = growth_run
    j, t, g = ref_params.coupling_j, ref_params.temperature, ref_params.coupling_g
    window = (res.mean_m > 0) & (res.mean_m <= 0.1)
    assert window.sum() >= 100
    slope = np.polyfit(res.times[window], np.log(res.mean_m[window] + g / (j - t)), 1)[0]
    assert abs(slope / (ref_params.gamma * (j - t)) - 1) <= 0.05


# ---------------------------------------------------------------- 8

@criterion(8, "Born rule: pointer masses (0.64, 0.36) to 1e-6; readout inside the 3 sigma band")
def test_c08_born_weights(reference_run):
    state, report, _ = reference_run
    assert abs(report.pointer_weights[0] - 0.64) <= 1e-6
    assert abs(report.pointer_weights[1] - 0.36) <= 1e-6
    assert abs(report.pointer_sign_masses[0] - 0.64) <= 1e-3


@criterion(8, "Born rule: pointer masses (0.64, 0.36) to 1e-6; readout inside the 3 sigma band")
def test_c08_readout(reference_run):
    state, _, _ = reference_run
    sample = sample_readout(state, 100_000, seed=12345)
    assert abs(sample.frequencies[0] - 0.64) <= 3 * math.sqrt(0.64 * 0.36 / 1e5)


# ---------------------------------------------------------------- 9

@criterion(9, "final state: residual < 1e-3 |r_ud|, wrong-well mass < 1e-6, diagonal kept to 1e-9")
def test_c09_offdiagonal_residual(reference_run, pure_spin):
    state, report, _ = reference_run
    rho = post_measurement_spin_state(state)
    assert abs(rho[0, 1]) < 1e-3 * abs(pure_spin.r_ud)
    assert report.offdiag_residual < 1e-3


@criterion(9, "final state: residual < 1e-3 |r_ud|, wrong-well mass < 1e-6, diagonal kept to 1e-9")
def test_c09_wrong_well_mass(reference_run):
    _, report, _ = reference_run
    up, down = report.wrong_well_mass
    assert up < 1e-6, f"up block holds {up:.3e} in m < 0"
    assert down < 1e-6, f"down block holds {down:.3e} in m > 0"


@criterion(9, "final state: residual < 1e-3 |r_ud|, wrong-well mass < 1e-6, diagonal kept to 1e-9")
def test_c09_post_state_diagonal(reference_run, pure_spin):
    state, _, _ = reference_run
    rho = post_measurement_spin_state(state)
    assert abs(rho[0, 0] - pure_spin.r_uu) <= 1e-9
    assert abs(rho[1, 1] - pure_spin.r_dd) <= 1e-9


# ---------------------------------------------------------------- 10

@criterion(10, "entropy: N ln 2 initially, positive gap, spin gap equals the diagonal entropy to 1e-9")
def test_c10_entropy(reference_run, ref_params, pure_spin):
    _, report, record = reference_run
    n = ref_params.n_spins
    s0 = magnet_entropy(binomial_distribution(n), magnetization_grid(n).log_degeneracy)
    assert s0 == pytest.approx(n * math.log(2), rel=1e-13)
    ent = record.entropy
    assert ent.magnet_initial == pytest.approx(n * math.log(2), rel=1e-13)
    assert report.entropy_final - report.entropy_initial > 0
    diag = -(pure_spin.r_uu * math.log(pure_spin.r_uu) + pure_spin.r_dd * math.log(pure_spin.r_dd))
    assert abs(ent.spin_gap - (diag - ent.spin_initial)) <= 1e-9


# ---------------------------------------------------------------- 11

@criterion(11, "stop after reduction at 10 tau_red: cat < 1e-6 |r_ud|, envelope > 0.99, magnet paramagnetic")
def test_c11_cat_terms_gone(ref_params, pure_spin):
    rep = stop_after_reduction(pure_spin, ref_params, 10 * tau_reduction(ref_params), check_window=False)
    assert rep.offdiag_abs < 1e-6 * abs(pure_spin.r_ud)


@criterion(11, "stop after reduction at 10 tau_red: cat < 1e-6 |r_ud|, envelope > 0.99, magnet paramagnetic")
def test_c11_bath_not_yet_acting(ref_params, pure_spin):
    rep = stop_after_reduction(pure_spin, ref_params, 10 * tau_reduction(ref_params), check_window=False)
    assert rep.envelope > 0.99, f"envelope {rep.envelope:.3e} at t_stop = {10 * tau_reduction(ref_params):.4g}"


@criterion(11, "stop after reduction at 10 tau_red: cat < 1e-6 |r_ud|, envelope > 0.99, magnet paramagnetic")
def test_c11_apparatus_paramagnetic(ref_params, pure_spin):
    rep = stop_after_reduction(pure_spin, ref_params, 10 * tau_reduction(ref_params), check_window=False)
    assert abs(rep.apparatus_mean) <= 1e-12
    assert rep.apparatus_unimodal


# ---------------------------------------------------------------- 12

@criterion(12, "trace = 1 to 1e-12 and positivity at every step of every run")
def test_c12_conservation(reference_run, mixed_run, growth_run):
    records = [reference_run[2], mixed_run[2]]
    regs = [r for rec in records for r in (rec.registration_up, rec.registration_down)]
    regs.append(growth_run[0])
    for res in regs:
        assert res.max_trace_error <= 1e-12
        assert res.min_probability >= 0.0
    for state in (reference_run[0], mixed_run[0]):
        assert abs(state.trace() - 1.0) <= 1e-12
