"""Lower bounds on annealing times evaluated along simulated trajectories.

All three bounds share the numerator

    <H0>_tf + <H1>_0 - <H1>_tf

and divide it by ``||[H1, H0]||`` times a time-averaged path quantity:
half the energy coherence (tau1), the square root of the purity defect
(tau2), or one (tau3). Time averages are trapezoid sums over the
integrator grid.

The usual forms of tau1 and tau2 rest on ``tr(A X) <= ||X||_1 ||A|| / 2`` for
traceless ``X``, which only holds when the spectrum of ``A`` lies in an
interval of length ``||A||``. For a general Hermitian ``A`` the constant is
one, so those two bounds can exceed the true annealing time by up to a
factor of two. Reports therefore also carry ``certified`` values computed
with the constant that always holds:

    tau1 = num / (||C|| avg C1),   tau2 = num / (2 ||C|| avg sqrt(1 - sum p^2)).

tau3 needs no correction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from .errors import StatesNotRetained, UnsupportedForm
from .numkernel import coherence_measures, commutator, expectation, matrix_norm, spectral_decompose
from .problems import AnnealProblem, ground_space
from .schedules import Schedule

COMMUTING_TOL = 1e-12
COMMUTING_NOTE = "annealing between commuting Hamiltonians is unconstrained by this bound family"
SUMMARY_COLUMNS = ("model_tag", "params", "tf", "tau1_dephased", "tau2", "tau3", "tau_control",
                   "delta_min", "t_adiab_estimate", "saturation_ratio_tau3")


def integrate(values, times, segment=None) -> tuple[float, float]:
    """Trapezoid integral and an error estimate from halving the grid.

    Each smooth segment is treated separately. The estimate is
    ``|I(h) - I(2h)| / 3`` summed over segments.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if segment is None:
        segment = np.zeros(len(times), dtype=int)
    total, err = 0.0, 0.0
    for seg in np.unique(segment):
        idx = np.nonzero(segment == seg)[0]
        y, t = values[idx], times[idx]
        fine = trapezoid(y, t)
        coarse_idx = list(range(0, len(t), 2))
        if coarse_idx[-1] != len(t) - 1:
            coarse_idx.append(len(t) - 1)
        coarse = trapezoid(y[coarse_idx], t[coarse_idx])
        total += fine
        err += abs(fine - coarse) / 3.0
    return float(total), float(err)


def _time_average(values, traj) -> tuple[float, float]:
    total, err = integrate(values, traj.times, traj.segment)
    return total / traj.tf, err / traj.tf


def _bound(numerator: float, denominator: float) -> float:
    if numerator <= 0.0:
        return 0.0
    if denominator <= 0.0:
        return math.inf
    return numerator / denominator


def _ratio(tf: float, tau: Optional[float]) -> Optional[float]:
    if tau is None:
        return None
    if tau == 0.0:
        return math.inf
    return tf / tau


def trajectory_numerator(traj) -> float:
    return float(traj.exp_h0[-1] + traj.exp_h1[0] - traj.exp_h1[-1])


def ideal_numerator(problem: AnnealProblem) -> float:
    """Numerator for perfect annealing from the ground state of H0 into that of H1.

    With a degenerate ground space the least favourable state is taken, which
    gives the smallest bound.
    """
    g1 = ground_space(problem.h1)
    g0 = ground_space(problem.h0)
    e_h0 = float(np.linalg.eigvalsh(g1.conj().T @ problem.h0 @ g1)[0])
    e_h1 = float(np.linalg.eigvalsh(g0.conj().T @ problem.h1 @ g0)[0])
    return e_h0 + e_h1


def ideal_tau3(problem: AnnealProblem) -> float:
    return _bound(ideal_numerator(problem), problem.comm_norm())


@dataclass
class BoundReport:
    numerator: float
    comm_norm: float
    tau1_dephased: float
    tau2: float
    tau3: float
    tf: float
    tau1_exact: Optional[float] = None
    control_denominator_terms: list = field(default_factory=list)
    tau_control: Optional[float] = None
    saturation_ratio: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    averages: dict = field(default_factory=dict)
    certified: dict = field(default_factory=dict)
    quadrature_rel_tol: float = 0.0
    final_fidelity: float = float("nan")
    controlled: bool = False
    notes: dict = field(default_factory=dict)
    model_tag: str = ""
    params: dict = field(default_factory=dict)

    def summary_row(self) -> list:
        diag = self.diagnostics
        return [self.model_tag, ";".join(f"{k}={v}" for k, v in sorted(self.params.items())),
                self.tf, self.tau1_dephased, self.tau2, self.tau3, self.tau_control,
                diag.get("delta_min"), diag.get("t_adiab_estimate"), self.saturation_ratio.get("tau3")]


def _c1_from_states(problem, traj, tol):
    if traj.states is None:
        raise StatesNotRetained("exact coherence needs retained states or recorded c1 values")
    vals = []
    for g, psi in zip(traj.g, traj.states):
        dec = spectral_decompose(problem.hamiltonian(g), check=False)
        vals.append(coherence_measures(psi, dec, want_exact=True, tol=tol).c1_exact)
    return np.asarray(vals)


def bound_report(problem: AnnealProblem, trajectory, want_exact_c1: bool = False,
                 schedule: Optional[Schedule] = None, c1_tol: float = 1e-7) -> BoundReport:
    """Evaluate the bound hierarchy (and the control bound) on a trajectory.

    When ``schedule`` is given, adiabatic diagnostics are attached too.
    Infinite bounds come with an explanatory entry in ``notes``.
    """
    traj = trajectory
    tf = traj.tf
    num = trajectory_numerator(traj)
    comm = problem.comm_norm()
    notes = {}

    avg_cd, err_cd = _time_average(traj.c_dephased, traj)
    avg_sq, err_sq = _time_average(np.sqrt(np.clip(traj.purity_defect, 0.0, None)), traj)
    averages = {"c_dephased": avg_cd, "sqrt_purity_defect": avg_sq}
    qrel = max(err_cd / avg_cd if avg_cd > 0 else 0.0, err_sq / avg_sq if avg_sq > 0 else 0.0)

    c1 = None
    if want_exact_c1:
        c1 = traj.c1_exact if traj.c1_exact is not None else _c1_from_states(problem, traj, c1_tol)
    if c1 is not None:
        avg_c1, err_c1 = _time_average(c1, traj)
        averages["c1_exact"] = avg_c1
        if avg_c1 > 0:
            qrel = max(qrel, err_c1 / avg_c1)

    certified = {}
    if num < 0.0:
        notes["NegativeNumerator"] = f"numerator {num:.6g} < 0; bounds reported as 0"

    if comm < COMMUTING_TOL:
        notes["CommutingHamiltonians"] = COMMUTING_NOTE
        tau1 = tau2 = tau3 = math.inf
        tau1_exact = math.inf if c1 is not None else None
        certified = {"tau1_exact": tau1_exact, "tau1_dephased": math.inf, "tau2": math.inf,
                     "tau3": math.inf}
    else:
        tau3 = _bound(num, comm)
        tau2 = _bound(num, comm * avg_sq)
        tau1 = _bound(2.0 * num, comm * avg_cd)
        tau1_exact = _bound(2.0 * num, comm * averages["c1_exact"]) if c1 is not None else None
        certified = {
            "tau1_exact": _bound(num, comm * averages["c1_exact"]) if c1 is not None else None,
            "tau1_dephased": _bound(num, comm * avg_cd),
            "tau2": _bound(num, 2.0 * comm * avg_sq),
            "tau3": tau3,
        }
        if math.isinf(tau2):
            notes["tau2"] = "state never leaves the instantaneous ground space; tau2 diverges"
        if math.isinf(tau1):
            notes["tau1_dephased"] = "no energy coherence along the path; tau1 diverges"

    report = BoundReport(num, comm, tau1, tau2, tau3, tf, tau1_exact=tau1_exact, averages=averages,
                         quadrature_rel_tol=qrel, final_fidelity=traj.final_fidelity,
                         controlled=traj.controlled, certified=certified, notes=notes, model_tag=problem.model_tag,
                         params=dict(problem.params))
    if problem.controls:
        tau_c, terms = control_bound(problem, traj)
        report.tau_control = tau_c
        report.control_denominator_terms = terms
    if traj.controlled:
        notes["controlled"] = ("trajectory used control Hamiltonians; only tau_control bounds tf, "
                               "tau1/tau2/tau3 are reported for reference")
    report.saturation_ratio = {
        "tau1_exact": _ratio(tf, tau1_exact),
        "tau1_dephased": _ratio(tf, tau1),
        "tau2": _ratio(tf, tau2),
        "tau3": _ratio(tf, tau3),
        "tau_control": _ratio(tf, report.tau_control),
    }
    if schedule is not None:
        report.diagnostics = adiabatic_diagnostics(problem, schedule,
                                                   traj if traj.states is not None else None)
    return report


def check_hierarchy(report: BoundReport, slack: float = 1e-6, certified: bool = False) -> list[str]:
    """Return violated links of ``tf >= tau1_exact >= tau1_dephased >= tau2 >= tau3``.

    Each comparison allows relative slack ``slack`` plus the quadrature
    tolerance of the time averages. Commuting problems are exempt; for
    controlled trajectories only ``tf >= tau_control`` is checked.

    With ``certified=True`` the corrected values are checked instead, as
    ``tf >= tau1_exact >= tau1_dephased >= tau2`` together with ``tf >= tau3``
    (the corrected tau2 may fall below tau3).
    """
    tol = slack + report.quadrature_rel_tol
    out = []

    def ge(name_a, a, name_b, b):
        if a is None or b is None or (math.isinf(a) and math.isinf(b)):
            return
        if b > a * (1.0 + tol) + 1e-15:
            out.append(f"{name_a}={a!r} < {name_b}={b!r}")

    if "CommutingHamiltonians" in report.notes:
        return out
    if report.controlled:
        if report.tau_control is not None:
            ge("tf", report.tf, "tau_control", report.tau_control)
        return out
    if certified:
        c = report.certified
        chain = [("tf", report.tf)]
        if c.get("tau1_exact") is not None:
            chain.append(("tau1_exact", c["tau1_exact"]))
        chain += [("tau1_dephased", c["tau1_dephased"]), ("tau2", c["tau2"])]
        ge("tf", report.tf, "tau3", report.tau3)
    else:
        chain = [("tf", report.tf)]
        if report.tau1_exact is not None:
            chain.append(("tau1_exact", report.tau1_exact))
        chain += [("tau1_dephased", report.tau1_dephased), ("tau2", report.tau2), ("tau3", report.tau3)]
    for (na, a), (nb, b) in zip(chain, chain[1:]):
        ge(na, a, nb, b)
    if report.tau_control is not None:
        ge("tf", report.tf, "tau_control", report.tau_control)
    return out


@dataclass(frozen=True)
class FloorCheck:
    lhs_excitation: float
    mid_coherence: float
    rhs_floor: float
    satisfied: bool
    certified_satisfied: bool


def coherence_excitation_floor(problem: AnnealProblem, trajectory, assume_perfect: bool = False,
                               use_exact_c1: bool = False, tol: float = 1e-9) -> FloorCheck:
    """Check ``int sqrt(1 - sum p^2) dt >= 1/2 int C dt >= numerator / ||[H1,H0]||``.

    The coherence integral uses the dephased trace distance unless
    ``use_exact_c1``. ``certified_satisfied`` checks the corrected chain
    ``lhs >= mid`` and ``2 mid >= rhs``, which every exact trajectory obeys. ``assume_perfect`` drops the final ``<H1>`` error credit,
    as if the run had ended exactly in the target ground state.
    """
    traj = trajectory
    lhs, err_l = integrate(np.sqrt(np.clip(traj.purity_defect, 0.0, None)), traj.times, traj.segment)
    cvals = traj.c1_exact if (use_exact_c1 and traj.c1_exact is not None) else traj.c_dephased
    mid, err_m = integrate(cvals, traj.times, traj.segment)
    mid, err_m = 0.5 * mid, 0.5 * err_m
    num = float(traj.exp_h0[-1] + traj.exp_h1[0])
    if not assume_perfect:
        num -= float(traj.exp_h1[-1])
    comm = problem.comm_norm()
    if num <= 0.0:
        rhs = 0.0
    elif comm < COMMUTING_TOL:
        rhs = math.inf
    else:
        rhs = num / comm
    slack = tol + err_l + err_m + 1e-9 * max(lhs, mid, 1.0)
    ok = (lhs >= mid - slack) and (mid >= rhs - slack)
    ok_cert = (lhs >= mid - slack) and (2.0 * mid >= rhs - 2.0 * slack)
    return FloorCheck(lhs, mid, rhs, bool(ok), bool(ok_cert))


def control_bound(problem: AnnealProblem, trajectory, controls=None) -> tuple[float, list]:
    """``numerator / (||[H1,H0]|| + sum_a ||[H1 - H0, H_C^a]||)`` with its denominator terms.

    Valid for control amplitudes whose time averages do not exceed one.
    An empty control set reduces to tau3.
    """
    controls = problem.controls if controls is None else tuple(controls)
    diff = problem.h1 - problem.h0
    diff_norm = matrix_norm(diff)
    terms = []
    for hc in controls:
        term = matrix_norm(commutator(diff, hc))
        # a commutator at rounding level is an exact zero (e.g. H_C a function of H1 - H0)
        terms.append(0.0 if term <= 1e-12 * diff_norm * matrix_norm(hc) else term)
    num = trajectory_numerator(trajectory)
    return _bound(num, problem.comm_norm() + sum(terms)), terms


def min_controls_estimate(problem: AnnealProblem, per_control_comm_bound: float, target_tf: float,
                          numerator: Optional[float] = None) -> int:
    """Smallest control count compatible with annealing in ``target_tf``.

    Solves ``numerator / target_tf <= ||[H1,H0]|| + N_C * per_control_comm_bound``
    for integer ``N_C >= 0``; the ideal numerator is used by default.
    """
    if not per_control_comm_bound > 0 or not target_tf > 0:
        raise ValueError("per_control_comm_bound and target_tf must be positive")
    num = ideal_numerator(problem) if numerator is None else numerator
    required = num / target_tf - problem.comm_norm()
    if required <= 1e-12 * max(1.0, num / target_tf):
        return 0
    return int(math.ceil(required / per_control_comm_bound - 1e-12))


def spectral_gap(problem: AnnealProblem, g: float) -> float:
    e = np.linalg.eigvalsh(problem.hamiltonian(g))
    return float(e[1] - e[0])


def minimum_gap(problem: AnnealProblem, n_grid: int = 512) -> tuple[float, float]:
    """Minimum of ``E1 - E0`` over g in [0, 1]: grid scan plus bounded refinement."""
    grid = np.linspace(0.0, 1.0, n_grid)
    gaps = np.array([spectral_gap(problem, g) for g in grid])
    i = int(np.argmin(gaps))
    best_g, best = float(grid[i]), float(gaps[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    if hi > lo:
        res = minimize_scalar(lambda g: spectral_gap(problem, g), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        if res.fun < best:
            best_g, best = float(res.x), float(res.fun)
    return best, best_g


def path_length(states) -> float:
    """Discrete ``int ||d psi/dt|| dt`` with the global phase aligned step by step."""
    states = np.asarray(states)
    total = 0.0
    for a, b in zip(states[:-1], states[1:]):
        ov = abs(np.vdot(a, b))
        total += math.sqrt(max(0.0, 2.0 - 2.0 * min(ov, 1.0)))
    return total


def adiabatic_diagnostics(problem: AnnealProblem, schedule: Schedule, trajectory=None,
                          n_grid: int = 512) -> dict:
    """Minimum gap, ``theta``, ``theta / gap**2`` and the path length.

    ``theta = max|dg/dt| * tf * ||H1 - H0||`` is a heuristic for nonlinear
    schedules; it is infinite for pulse schedules.
    """
    delta, g_star = minimum_gap(problem, n_grid)
    diff_norm = matrix_norm(problem.h1 - problem.h0)
    try:
        ts = np.linspace(0.0, schedule.tf, 257)
        gdot = max(abs(schedule.derivative(t)) for t in ts)
        theta = gdot * schedule.tf * diff_norm
    except UnsupportedForm:
        gdot, theta = math.inf, math.inf
    t_adiab = math.inf if delta <= 0.0 else theta / delta ** 2
    out = {"delta_min": delta, "g_at_delta_min": g_star, "theta": theta,
           "max_g_dot_times_tf": gdot * schedule.tf if math.isfinite(gdot) else math.inf,
           "h_diff_norm": diff_norm, "t_adiab_estimate": t_adiab, "path_length": None}
    if trajectory is not None:
        if trajectory.states is None:
            raise StatesNotRetained("path length needs retained states")
        out["path_length"] = path_length(trajectory.states)
    return out


# -- serialization ----------------------------------------------------------------

def _enc(x):
    if isinstance(x, float) and math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if isinstance(x, dict):
        return {k: _enc(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_enc(v) for v in x]
    if isinstance(x, np.floating):
        return _enc(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _dec(x):
    if x in ("+inf", "inf"):
        return math.inf
    if x == "-inf":
        return -math.inf
    if x == "nan":
        return math.nan
    if isinstance(x, dict):
        return {k: _dec(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_dec(v) for v in x]
    return x


def report_to_dict(report: BoundReport) -> dict:
    return _enc({k: getattr(report, k) for k in report.__dataclass_fields__})


def report_from_dict(doc: dict) -> BoundReport:
    vals = _dec(doc)
    return BoundReport(**{k: vals[k] for k in BoundReport.__dataclass_fields__ if k in vals})
