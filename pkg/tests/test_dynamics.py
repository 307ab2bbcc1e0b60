import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from annealbounds.dynamics import (
    AnglePulse,
    StepPolicy,
    apply_angle_pulses,
    counterdiabatic_term,
    final_fidelity,
    identity_residual,
    propagate,
    simulate,
    simulate_with_controls,
    states_to_text,
    trajectory_from_csv,
    trajectory_to_csv,
)
from annealbounds.errors import ControlCountMismatch, DegenerateSpectrum, DimensionMismatch, StepPolicyInvalid
from annealbounds.problems import AnnealProblem, build_pspin, build_search, plus_state_weights
from annealbounds.schedules import ControlSchedule, Schedule

SY = np.array([[0, -1j], [1j, 0]])


def reference_final_state(problem, schedule, rtol=1e-12):
    def rhs(t, y):
        return -1j * (problem.hamiltonian(schedule.evaluate(t)) @ y)

    psi0 = np.linalg.eigh(problem.h0)[1][:, 0].astype(complex)
    sol = solve_ivp(rhs, (0.0, schedule.tf), psi0, method="DOP853", rtol=rtol, atol=1e-13)
    return sol.y[:, -1]


def test_step_policy_validation():
    with pytest.raises(StepPolicyInvalid):
        StepPolicy(dt=-1.0)
    with pytest.raises(StepPolicyInvalid):
        StepPolicy(max_phase=0.0)


def test_stationary_problem():
    h = np.diag([0.0, 1.0, 2.5])
    p = AnnealProblem(h, h)
    tr = simulate(p, Schedule.linear(3.0))
    assert np.allclose(tr.p0, 1.0)
    assert np.allclose(tr.exp_h0, 0.0) and np.allclose(tr.c_dephased, 0.0)
    assert tr.final_fidelity == pytest.approx(1.0)


def test_trajectory_invariants():
    p = build_pspin(4, 3)
    tr = simulate(p, Schedule.linear(2.0), retain_states=True)
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(2.0)
    assert np.all(np.diff(tr.times) >= 0)
    assert tr.exp_h0.min() >= -1e-9 and tr.exp_h1.min() >= -1e-9
    assert tr.norm_error.max() <= 1e-9
    last = tr.states[-1]
    assert tr.final_fidelity == pytest.approx(final_fidelity(p, last))
    evals, evecs = np.linalg.eigh(p.hamiltonian(tr.g[-1]))
    assert tr.p0[-1] == pytest.approx(abs(np.vdot(evecs[:, 0], last)) ** 2, abs=1e-10)


def test_two_level_search_matches_reference_integration():
    p = build_search(2)
    s = Schedule.linear(10.0)
    ref = reference_final_state(p, s)
    tr = simulate(p, s, StepPolicy(dt=1e-3))
    assert tr.final_fidelity == pytest.approx(final_fidelity(p, ref), abs=1e-6)


def test_second_order_step_halving():
    p, s = build_pspin(3, 2), Schedule.linear(4.0)
    ref = reference_final_state(p, s)
    errs = [np.linalg.norm(propagate(p, s, StepPolicy(dt=dt)) - ref) for dt in (0.04, 0.02, 0.01)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(1.8 < o < 2.2 for o in orders)


def test_roland_cerf_search_fidelity():
    tr = simulate(build_search(64), Schedule.roland_cerf(64, 0.1))
    assert tr.final_fidelity >= 0.99


def test_pulses_are_exact_and_step_independent():
    p = build_pspin(3, 2)
    s = Schedule.pulses([(1.0, 0.7), (0.3, 1.1), (0.0, 0.4)])
    a = simulate(p, s, StepPolicy(dt=0.01))
    b = simulate(p, s, StepPolicy(dt=0.003))
    assert a.final_fidelity == pytest.approx(b.final_fidelity, abs=1e-12)
    direct = propagate(p, s)
    assert a.final_fidelity == pytest.approx(final_fidelity(p, direct), abs=1e-12)
    # each pulse boundary is sampled twice, once per segment
    assert len(np.unique(a.segment)) == 3


@pytest.mark.parametrize("problem,schedule", [
    (build_search(16), Schedule.linear(8.0)),
    (build_pspin(4, 3), Schedule.piecewise_linear([(0, 0), (1, 0.7), (3, 1)])),
    (build_pspin(3, 2), Schedule.pulses([(1, "pi/4"), (0, 0.5), (0.6, 1.0)])),
    (build_pspin(3, 2), Schedule.piecewise_linear([(0, 0), (1, 1.4), (2, -0.3)], allow_g_outside_unit=True)),
])
def test_derivation_identity(problem, schedule):
    tr = simulate(problem, schedule, StepPolicy(dt=1e-3 * schedule.tf))
    assert identity_residual(tr, problem.comm_norm()) <= 1e-5


def test_angle_pulses():
    p = build_pspin(3, 3)
    plus = plus_state_weights(3)
    assert np.allclose(apply_angle_pulses(p, plus, []), plus)
    out = apply_angle_pulses(p, plus, [AnglePulse("mzp", math.pi / 4), AnglePulse("mx", math.pi / 4)])
    assert abs(out[0]) ** 2 == pytest.approx(1.0, abs=1e-9)
    p4 = build_pspin(4, 3)
    out4 = apply_angle_pulses(p4, plus_state_weights(4),
                              [AnglePulse("mzp", math.pi / 4), AnglePulse("mx", math.pi / 4)])
    assert abs(out4[0]) ** 2 < 0.999
    with pytest.raises(DimensionMismatch):
        apply_angle_pulses(p, plus[:3], [])


def test_counterdiabatic_single_qubit_closed_form():
    p = build_pspin(1, 1)
    # the 2x2 rotation angle of the ground state changes at rate -2 per unit g at g = 1/2
    assert np.allclose(counterdiabatic_term(p, 0.5, 0.3), -0.3 * SY, atol=1e-10)


def test_counterdiabatic_vanishes_for_commuting_pair():
    p = AnnealProblem(np.diag([0.0, 1.0, 3.0]), np.diag([0.0, 2.0, 0.5]))
    assert np.allclose(counterdiabatic_term(p, 0.4, 1.0), 0.0)


def test_counterdiabatic_strict_mode_reports_coupled_degeneracy():
    p = AnnealProblem(np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([[0.5, 0.5], [0.5, 0.5]]))
    with pytest.raises(DegenerateSpectrum) as info:
        counterdiabatic_term(p, 0.0, 1.0)
    assert info.value.pair == (0, 1)
    assert np.allclose(counterdiabatic_term(p, 0.0, 1.0, strict=False), 0.0)


def test_counterdiabatic_tracking():
    p = build_pspin(3, 2)
    tr = simulate_with_controls(p, Schedule.linear(1.0), (), StepPolicy(dt=1e-3), counterdiabatic=True)
    assert tr.p0.min() >= 1 - 1e-6
    assert identity_residual(tr) <= 1e-5


def test_zero_controls_reduce_to_plain_simulation():
    p = build_pspin(3, 2)
    pc = p.with_controls([np.diag([0.0, 1.0, 1.0, 0.0])])
    s = Schedule.linear(2.0)
    a = simulate(p, s, StepPolicy(dt=0.01))
    b = simulate_with_controls(pc, s, [ControlSchedule.zero(2.0)], StepPolicy(dt=0.01))
    assert np.allclose(a.exp_h1, b.exp_h1, atol=1e-12)
    assert b.control_values.shape == (len(b), 1)
    assert not a.controlled and b.controlled


def test_control_count_and_duration_checks():
    pc = build_pspin(3, 2).with_controls([np.eye(4)])
    with pytest.raises(ControlCountMismatch):
        simulate_with_controls(pc, Schedule.linear(1.0), [])
    with pytest.raises(ControlCountMismatch):
        simulate_with_controls(pc, Schedule.linear(1.0), [ControlSchedule.zero(2.0)])


def test_csv_round_trip_and_stability():
    p = build_pspin(3, 2)
    tr = simulate(p, Schedule.linear(1.5), want_exact_c1=True, retain_states=True)
    text = trajectory_to_csv(tr)
    assert text.splitlines()[0].startswith("t,g,exp_H0,exp_H1,p0,purity_defect,c_dephased,gap")
    back = trajectory_from_csv(text)
    for name in ("times", "g", "exp_h0", "exp_h1", "p0", "purity_defect", "c_dephased", "c1_exact"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))
    assert trajectory_to_csv(simulate(p, Schedule.linear(1.5), want_exact_c1=True)) == text
    lines = states_to_text(tr).splitlines()
    assert len(lines) == len(tr) and len(lines[0].split()) == 1 + 2 * p.dim


def test_piecewise_knots_split_segments():
    p = build_pspin(3, 2)
    s = Schedule.piecewise_linear([(0, 0), (0.7, 0.9), (1.5, 0.2), (2.0, 1.0)])
    tr = simulate(p, s, StepPolicy(max_phase=0.01))
    assert len(np.unique(tr.segment)) == 3
    for knot in (0.7, 1.5):
        assert np.count_nonzero(np.isclose(tr.times, knot, rtol=0, atol=1e-14)) == 2
    assert identity_residual(tr, p.comm_norm()) <= 1e-5
