import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from annealbounds.bounds import (
    SUMMARY_COLUMNS,
    adiabatic_diagnostics,
    bound_report,
    check_hierarchy,
    coherence_excitation_floor,
    control_bound,
    ideal_numerator,
    ideal_tau3,
    integrate,
    min_controls_estimate,
    minimum_gap,
    path_length,
    report_from_dict,
    report_to_dict,
)
from annealbounds.dynamics import StepPolicy, simulate, simulate_with_controls
from annealbounds.errors import StatesNotRetained
from annealbounds.numkernel import coherence_measures, spectral_decompose
from annealbounds.problems import AnnealProblem, build_pspin, build_random_klocal, build_search
from annealbounds.schedules import ControlSchedule, Schedule


def test_integrate_with_segments():
    t = np.array([0.0, 0.5, 1.0, 1.0, 2.0])
    y = np.array([0.0, 0.5, 1.0, 5.0, 5.0])
    total, err = integrate(y, t, np.array([0, 0, 0, 1, 1]))
    assert total == pytest.approx(0.5 + 5.0)
    assert err == pytest.approx(0.0)


def test_perfect_search_tau3():
    assert ideal_numerator(build_search(4)) == pytest.approx(1.5)
    assert ideal_tau3(build_search(4)) == pytest.approx(2 * math.sqrt(3))
    assert ideal_tau3(build_search(4096)) / (2 * math.sqrt(4096)) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("n,p", [(1, 1), (3, 3), (5, 3), (8, 2), (20, 5), (64, 7)])
def test_pspin_ideal_tau3(n, p):
    prob = build_pspin(n, p)
    # <+|M_z^p|+> vanishes for odd p and equals N for p = 2
    expected = n if p % 2 else n - n / (2 * n ** (p - 1))
    assert ideal_numerator(prob) == pytest.approx(expected, rel=1e-12)
    assert prob.comm_norm() <= p * n / 2 + 1e-9
    assert ideal_tau3(prob) >= 2.0 / p - 1e-12


def test_report_on_search_run():
    prob, sched = build_search(64), Schedule.roland_cerf(64, 0.1)
    tr = simulate(prob, sched, retain_states=True)
    rep = bound_report(prob, tr, schedule=sched)
    assert rep.tau3 == pytest.approx(rep.numerator / rep.comm_norm)
    assert rep.tau1_dephased >= rep.tau2 >= rep.tau3
    assert rep.saturation_ratio["tau3"] == pytest.approx(tr.tf / rep.tau3)
    assert check_hierarchy(rep, certified=True) == []
    assert rep.diagnostics["delta_min"] ** 2 == pytest.approx(1 / 64, rel=1e-9)
    assert rep.diagnostics["path_length"] > 0


def test_uncorrected_tau2_can_exceed_an_achieved_time():
    # the factor-of-two gap: a locally adiabatic search run beats the uncorrected tau2
    prob, sched = build_search(64), Schedule.roland_cerf(64, 0.1)
    rep = bound_report(prob, simulate(prob, sched))
    assert rep.tf < rep.tau2
    assert rep.tf >= rep.certified["tau2"]


def test_single_qubit_rate_counterexample():
    # |+y> at g = 1/2: the rate <i[H1,H0]> equals ||[H1,H0]||, twice the uncorrected estimate
    prob = build_pspin(1, 1)
    psi = np.array([1, 1j]) / math.sqrt(2)
    a = 1j * prob.commutator()
    rate = float(np.real(np.vdot(psi, a @ psi)))
    rec = coherence_measures(psi, spectral_decompose(prob.hamiltonian(0.5)), want_exact=True)
    norm = prob.comm_norm()
    assert abs(rate) == pytest.approx(norm)
    assert abs(rate) > 0.5 * norm * rec.c1_exact + 0.1
    assert abs(rate) <= norm * rec.c1_exact + 1e-9


def test_exact_c1_report():
    prob = build_pspin(3, 2)
    tr = simulate(prob, Schedule.linear(3.0), StepPolicy(dt=0.01), want_exact_c1=True)
    rep = bound_report(prob, tr, want_exact_c1=True)
    assert rep.tau1_exact >= rep.tau1_dephased * (1 - 1e-9)
    assert check_hierarchy(rep, certified=True) == []
    plain = simulate(prob, Schedule.linear(3.0), StepPolicy(dt=0.01))
    with pytest.raises(StatesNotRetained):
        bound_report(prob, plain, want_exact_c1=True)


def test_commuting_problem_reports_infinity():
    h = np.diag([0.0, 1.0])
    prob = AnnealProblem(h, np.diag([0.0, 2.0]))
    rep = bound_report(prob, simulate(prob, Schedule.linear(1.0)))
    assert "CommutingHamiltonians" in rep.notes
    assert math.isinf(rep.tau3) and math.isinf(rep.tau2)
    doc = json.loads(json.dumps(report_to_dict(rep)))
    assert doc["tau3"] == "+inf"
    assert math.isinf(report_from_dict(doc).tau3)
    assert check_hierarchy(rep) == []


def test_adiabatic_tracking_makes_tau2_diverge():
    prob = build_pspin(1, 1)
    tr = simulate_with_controls(prob, Schedule.linear(1.0), (), StepPolicy(dt=1e-3), counterdiabatic=True)
    rep = bound_report(prob, tr)
    assert rep.averages["sqrt_purity_defect"] < 1e-6
    assert rep.tau2 > 1e5 * rep.tau3
    assert rep.controlled and "controlled" in rep.notes


def test_negative_numerator_flag():
    # from |0>, holding g = 0 for time pi rotates to |1>: <H1> climbs from 0 to 1, <H0> stays 1/2
    prob = build_pspin(1, 1)
    tr = simulate(prob, Schedule.pulses([(0, "pi")]), initial_state=np.array([1, 0], dtype=complex))
    rep = bound_report(prob, tr)
    assert rep.numerator == pytest.approx(-0.5, abs=1e-12)
    assert rep.tau3 == rep.tau2 == rep.tau1_dephased == 0.0
    assert "NegativeNumerator" in rep.notes


def test_report_round_trip_and_summary_row():
    prob = build_pspin(3, 2).with_controls([np.diag([0.0, 1.0, 1.0, 0.0])])
    sched = Schedule.linear(2.0)
    tr = simulate_with_controls(prob, sched, [ControlSchedule.bump(2.0, 0.5, 0.2, 1.8)])
    rep = bound_report(prob, tr, schedule=sched)
    back = report_from_dict(json.loads(json.dumps(report_to_dict(rep))))
    for name in rep.__dataclass_fields__:
        a, b = getattr(rep, name), getattr(back, name)
        assert a == b or (isinstance(a, float) and math.isnan(a) and math.isnan(b))
    assert len(rep.summary_row()) == len(SUMMARY_COLUMNS)


def test_floor_inequality():
    prob, sched = build_search(16), Schedule.roland_cerf(16, 0.1)
    tr = simulate(prob, sched)
    fc = coherence_excitation_floor(prob, tr)
    assert fc.lhs_excitation >= fc.mid_coherence
    assert fc.certified_satisfied
    h = np.diag([0.0, 1.0])
    stationary = AnnealProblem(h, h)
    fs = coherence_excitation_floor(stationary, simulate(stationary, Schedule.linear(1.0)))
    assert fs.lhs_excitation == fs.mid_coherence == fs.rhs_floor == 0.0 and fs.satisfied


def test_floor_with_forced_perfect_final_state_is_unsatisfiable():
    prob = build_search(16)
    fast = Schedule.linear(ideal_tau3(prob) / 10)
    tr = simulate(prob, fast)
    honest = coherence_excitation_floor(prob, tr)
    forced = coherence_excitation_floor(prob, tr, assume_perfect=True)
    assert honest.certified_satisfied
    assert forced.rhs_floor > honest.rhs_floor
    assert not forced.satisfied and not forced.certified_satisfied


def test_control_bound_identities():
    prob = build_pspin(3, 2)
    tr = simulate(prob, Schedule.linear(2.0))
    tau_c, terms = control_bound(prob, tr, controls=())
    assert terms == [] and tau_c == pytest.approx(bound_report(prob, tr).tau3)
    diff = prob.h1 - prob.h0
    tau_c, terms = control_bound(prob, tr, controls=(diff @ diff,))
    assert terms[0] == 0.0
    assert tau_c == bound_report(prob, tr).tau3


@pytest.mark.parametrize("seed", range(5))
def test_controlled_runs_respect_control_bound(seed):
    rng = np.random.default_rng(seed)
    prob = build_pspin(3, 2)
    a = rng.normal(size=(4, 4))
    ctrl = 0.5 * (a + a.T)
    pc = prob.with_controls([ctrl])
    tf = float(rng.uniform(0.5, 4.0))
    bump = ControlSchedule.bump(tf, float(rng.uniform(0.2, 1.0)), 0.1 * tf, 0.9 * tf)
    tr = simulate_with_controls(pc, Schedule.linear(tf), [bump])
    rep = bound_report(pc, tr)
    assert rep.tau_control <= tf * (1 + 1e-6 + rep.quadrature_rel_tol)
    assert check_hierarchy(rep) == []


def test_min_controls_estimate():
    prob = build_pspin(8, 2)
    assert min_controls_estimate(prob, 1.0, ideal_tau3(prob)) == 0
    assert min_controls_estimate(prob, 1e6, 0.01) == 1
    with pytest.raises(ValueError):
        min_controls_estimate(prob, 0.0, 1.0)
    # k-local controls at the inverse-norm time: N_C grows linearly in N
    counts = []
    for n in (8, 16, 32):
        p = build_pspin(n, 1)
        counts.append(min_controls_estimate(p, 2 * n, 1.0 / n))
    ratios = [c / n for c, n in zip(counts, (8, 16, 32))]
    assert max(ratios) / min(ratios) < 1.5


def test_adiabatic_diagnostics():
    delta, g = minimum_gap(build_search(256))
    assert delta ** 2 == pytest.approx(1 / 256, rel=1e-9)
    assert g == pytest.approx(0.5, abs=1e-6)
    diag = adiabatic_diagnostics(build_pspin(5, 3), Schedule.linear(4.0))
    assert diag["theta"] == pytest.approx(diag["h_diff_norm"])
    assert diag["t_adiab_estimate"] == pytest.approx(diag["theta"] / diag["delta_min"] ** 2)
    pulses = adiabatic_diagnostics(build_pspin(5, 3), Schedule.pulses([(1, 1.0), (0, 1.0)]))
    assert math.isinf(pulses["theta"])
    prob = build_pspin(3, 3)
    with pytest.raises(StatesNotRetained):
        adiabatic_diagnostics(prob, Schedule.linear(1.0), simulate(prob, Schedule.linear(1.0)))


def test_stationary_path_length():
    h = np.diag([0.0, 1.0])
    tr = simulate(AnnealProblem(h, h), Schedule.linear(2.0), retain_states=True)
    assert path_length(tr.states) < 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 5), k=st.integers(1, 2),
       tf=st.floats(0.2, 6.0), pulses=st.booleans())
def test_certified_hierarchy_holds(seed, n, k, tf, pulses):
    prob = build_random_klocal(n, min(k, n), seed=seed)
    rng = np.random.default_rng(seed)
    if pulses:
        gs = rng.uniform(0, 1, size=3)
        durs = rng.dirichlet(np.ones(3)) * tf
        sched = Schedule.pulses(list(zip(gs, durs)))
    else:
        sched = Schedule.piecewise_linear([(0, 0), (tf / 2, float(rng.uniform())), (tf, 1)])
    rep = bound_report(prob, simulate(prob, sched))
    assert check_hierarchy(rep, certified=True) == []
    assert rep.tau1_dephased >= rep.tau2 * (1 - 1e-9) and rep.tau2 >= rep.tau3 * (1 - 1e-9)


def test_scale_covariance():
    base = build_pspin(3, 3)
    scaled = AnnealProblem(2.0 * base.h0, 2.0 * base.h1)
    ra = bound_report(base, simulate(base, Schedule.linear(4.0), StepPolicy(dt=1e-3)))
    rb = bound_report(scaled, simulate(scaled, Schedule.linear(2.0), StepPolicy(dt=5e-4)))
    for name in ("tau1_dephased", "tau2", "tau3"):
        assert getattr(rb, name) == pytest.approx(getattr(ra, name) / 2, rel=1e-6)
    assert rb.saturation_ratio["tau3"] == pytest.approx(ra.saturation_ratio["tau3"], rel=1e-6)
