"""Time evolution under ``H(t) = (1 - g_t) H0 + g_t H1`` plus optional controls.

Smooth schedules are integrated with piecewise-constant midpoint exponentials
(second order in ``dt``). Pulse schedules are propagated exactly: within a
pulse the Hamiltonian is constant, so every sample is one exponential away
from the start of its pulse.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    ControlCountMismatch,
    DegenerateSpectrum,
    DimensionMismatch,
    StepPolicyInvalid,
    UnsupportedForm,
)
from .numkernel import (
    as_hermitian,
    coherence_measures,
    commutator,
    evolve_step,
    expectation,
    matrix_norm,
    spectral_decompose,
    subspace_population,
)
from .problems import AnnealProblem, collective_operators, full_magnetizations, ground_space
from .schedules import ControlSchedule, Schedule


@dataclass(frozen=True)
class StepPolicy:
    """Integrator step control.

    With ``dt=None`` the step is chosen so that ``max_t ||H(t)|| * dt`` does
    not exceed ``max_phase``, and is shortened further when the schedule
    sweeps fast enough that ``(||H|| ||dH/dt||)**(1/3) * dt`` would. Each smooth piece of the schedule (a pulse or
    a knot interval) gets at least ``min_steps`` samples.
    """

    dt: Optional[float] = None
    max_phase: float = 0.05
    min_steps: int = 8

    def __post_init__(self):
        if self.dt is not None and not (self.dt > 0 and math.isfinite(self.dt)):
            raise StepPolicyInvalid(f"dt must be positive and finite, got {self.dt}")
        if not self.max_phase > 0:
            raise StepPolicyInvalid(f"max_phase must be positive, got {self.max_phase}")
        if self.min_steps < 2:
            raise StepPolicyInvalid("min_steps must be at least 2")

    def to_dict(self) -> dict:
        return {"dt": self.dt, "max_phase": self.max_phase, "min_steps": self.min_steps}


@dataclass(frozen=True)
class Trajectory:
    """Sampled observables of one simulated run.

    ``times`` is non-decreasing. The boundary between two smooth pieces of
    the schedule (pulses, or knot intervals of a piecewise-linear ramp)
    appears twice, once per piece, so that trapezoid sums and finite
    differences treat each piece separately.
    """

    times: np.ndarray
    g: np.ndarray
    exp_h0: np.ndarray
    exp_h1: np.ndarray
    p0: np.ndarray
    purity_defect: np.ndarray
    c_dephased: np.ndarray
    gap: np.ndarray
    c_l1: np.ndarray
    comm_expectation: np.ndarray
    control_rate: np.ndarray
    norm_error: np.ndarray
    segment: np.ndarray
    tf: float
    final_fidelity: float = float("nan")
    populations: Optional[np.ndarray] = None
    c1_exact: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    control_values: Optional[np.ndarray] = None
    counterdiabatic: bool = False
    schedule_form: str = ""

    @property
    def controlled(self) -> bool:
        return self.counterdiabatic or (self.control_values is not None and self.control_values.size > 0)

    @property
    def final_state(self) -> Optional[np.ndarray]:
        return None if self.states is None else self.states[-1]

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class AnglePulse:
    """``exp(+i angle G)`` for a named generator (h0, h1, mx, my, mz, mzp) or a matrix."""

    generator: Union[str, np.ndarray]
    angle: float


def default_dt(problem: AnnealProblem, schedule: Schedule, control_schedules=(), policy=None,
               extra_norm: float = 0.0) -> float:
    policy = policy or StepPolicy()
    if policy.dt is not None:
        return policy.dt
    glo, ghi = schedule.g_range()
    # ||(1-g) H0 + g H1|| is convex in g, so the extremes bound it
    bound = max(matrix_norm(problem.hamiltonian(glo)), matrix_norm(problem.hamiltonian(ghi)))
    for cs, hc in zip(control_schedules, problem.controls):
        bound += cs.peak() * matrix_norm(hc)
    bound += extra_norm
    # the midpoint error also grows with ||dH/dt||: keep dt^3 ||H|| |g'| ||H1 - H0|| below max_phase^3
    drift = bound * _max_g_rate(schedule) * matrix_norm(problem.h1 - problem.h0)
    return policy.max_phase / max(bound, np.cbrt(drift), 1e-12)


def _max_g_rate(schedule: Schedule) -> float:
    """Largest ``|dg/dt|`` of a smooth schedule (zero for pulses)."""
    if schedule.form == "linear":
        return 1.0 / schedule.tf
    if schedule.form == "piecewise_linear":
        return max(abs(g1 - g0) / (t1 - t0) for (t0, g0), (t1, g1) in zip(schedule.knots, schedule.knots[1:]))
    if schedule.form == "roland_cerf":
        # dg/dt = epsilon * gap^2 and the squared gap peaks at 1 on the ends
        return schedule.epsilon
    return 0.0


def counterdiabatic_term(problem: AnnealProblem, g: float, g_dot: float,
                         gap_tol: float = 1e-8, strict: bool = True) -> np.ndarray:
    """Spectral counterdiabatic generator for the instantaneous ``H(g)``.

    ``H_CD = i g_dot sum_{j != k} <E_j|(H1 - H0)|E_k> / (E_k - E_j) |E_j><E_k|``.
    Near-degenerate pairs with vanishing coupling (symmetry-protected
    crossings) are skipped. Coupled degenerate pairs raise
    ``DegenerateSpectrum`` unless ``strict=False``, in which case each
    degenerate block is first rotated to diagonalize ``H1 - H0`` inside it,
    the basis that the eigenvectors approach when the degeneracy is reached
    along the schedule.
    """
    dec = spectral_decompose(problem.hamiltonian(g), check=False)
    v, e = np.array(dec.eigenvectors), dec.eigenvalues
    diff_h = problem.h1 - problem.h0
    if not strict:
        for block in dec.degenerate_blocks(gap_tol):
            if len(block) > 1:
                sub = v[:, block]
                _, w = np.linalg.eigh(sub.conj().T @ diff_h @ sub)
                v[:, block] = sub @ w
    dh = v.conj().T @ diff_h @ v
    diff = e[None, :] - e[:, None]  # E_k - E_j at [j, k]
    np.fill_diagonal(diff, np.inf)
    close = np.abs(diff) < gap_tol
    coupled = close & (np.abs(dh) > gap_tol)
    if strict and np.any(coupled):
        j, k = map(int, np.argwhere(coupled)[0])
        raise DegenerateSpectrum(
            f"eigenvalues {e[j]:.12g} and {e[k]:.12g} are degenerate and coupled", pair=(j, k))
    coeff = np.where(close, 0.0, dh / np.where(close, 1.0, diff))
    h_cd = 1j * g_dot * (v @ coeff @ v.conj().T)
    return 0.5 * (h_cd + h_cd.conj().T)


def _named_generator(problem: AnnealProblem, name: str) -> np.ndarray:
    if name == "h0":
        return problem.h0
    if name == "h1":
        return problem.h1
    n = int(problem.params["N"])
    if problem.representation == "symmetric_subspace":
        ops = collective_operators(n)
    elif problem.representation == "full":
        ops = full_magnetizations(n)
    else:
        raise DimensionMismatch(f"no collective operators for representation {problem.representation!r}")
    if name == "mzp":
        return np.linalg.matrix_power(ops.mz, int(problem.params["p"]))
    return {"mx": ops.mx, "my": ops.my, "mz": ops.mz}[name]


def apply_angle_pulses(problem: AnnealProblem, initial, pulses: Sequence[AnglePulse]) -> np.ndarray:
    """Apply ``exp(+i angle G)`` for each pulse, the first list entry acting first."""
    psi = np.asarray(initial, dtype=complex)
    if psi.shape[0] != problem.dim:
        raise DimensionMismatch(f"state length {psi.shape[0]} != problem dim {problem.dim}")
    for pulse in pulses:
        gen = pulse.generator
        gen = _named_generator(problem, gen) if isinstance(gen, str) else as_hermitian(gen)
        if gen.shape[0] != problem.dim:
            raise DimensionMismatch(f"generator dim {gen.shape[0]} != problem dim {problem.dim}")
        psi = evolve_step(psi, gen, -pulse.angle)
    return psi / np.linalg.norm(psi)


def ground_state(h) -> np.ndarray:
    return np.array(spectral_decompose(h).eigenvectors[:, 0])


class _Recorder:
    def __init__(self, problem, controls, retain_states, want_exact_c1, c1_tol, counterdiabatic):
        self.problem = problem
        self.controls = controls
        self.retain = retain_states
        self.exact = want_exact_c1
        self.c1_tol = c1_tol
        self.cd = counterdiabatic
        self.comm = problem.commutator()
        self.diff = problem.h1 - problem.h0
        self.ctrl_comms = [commutator(self.diff, hc) for hc in problem.controls]
        self.rows = {k: [] for k in ("t", "g", "h0", "h1", "p0", "pd", "cd", "gap", "cl1", "comm",
                                     "crate", "norm", "seg", "pops", "c1", "psi", "f")}

    def record(self, t, g, psi, seg, fvals=(), g_dot=None):
        p = self.problem
        dec = spectral_decompose(p.hamiltonian(g), check=False)
        rec = coherence_measures(psi, dec, want_exact=self.exact, tol=self.c1_tol)
        r = self.rows
        r["t"].append(t)
        r["g"].append(g)
        r["h0"].append(expectation(psi, p.h0))
        r["h1"].append(expectation(psi, p.h1))
        r["p0"].append(rec.populations[0])
        r["pd"].append(rec.purity_defect)
        r["cd"].append(rec.c_dephased)
        e = dec.eigenvalues
        r["gap"].append(e[1] - e[0] if len(e) > 1 else float("inf"))
        r["cl1"].append(rec.c_l1)
        r["comm"].append(float(np.real(1j * np.vdot(psi, self.comm @ psi))))
        rate = 0.0
        for f, cc in zip(fvals, self.ctrl_comms):
            rate += f * float(np.real(1j * np.vdot(psi, cc @ psi)))
        if self.cd and g_dot is not None:
            hcd = counterdiabatic_term(p, g, g_dot, strict=False)
            rate += float(np.real(1j * np.vdot(psi, commutator(self.diff, hcd) @ psi)))
        r["crate"].append(rate)
        r["norm"].append(abs(np.linalg.norm(psi) - 1.0))
        r["seg"].append(seg)
        r["pops"].append(rec.populations)
        r["c1"].append(rec.c1_exact)
        r["f"].append(list(fvals))
        if self.retain:
            r["psi"].append(np.array(psi))

    def finish(self, tf, final_psi, schedule_form) -> Trajectory:
        r = self.rows
        arr = lambda k: np.asarray(r[k], dtype=float)
        target = ground_space(self.problem.h1)
        fvals = np.asarray(r["f"], dtype=float) if self.controls else None
        return Trajectory(
            times=arr("t"), g=arr("g"), exp_h0=arr("h0"), exp_h1=arr("h1"), p0=arr("p0"),
            purity_defect=arr("pd"), c_dephased=arr("cd"), gap=arr("gap"), c_l1=arr("cl1"),
            comm_expectation=arr("comm"), control_rate=arr("crate"), norm_error=arr("norm"),
            segment=np.asarray(r["seg"], dtype=int), tf=float(tf),
            final_fidelity=subspace_population(final_psi, target),
            populations=np.asarray(r["pops"]),
            c1_exact=arr("c1") if self.exact else None,
            states=np.asarray(r["psi"]) if self.retain else None,
            control_values=fvals, counterdiabatic=self.cd, schedule_form=schedule_form,
        )


def _check_initial(problem, initial_state):
    if initial_state is None:
        return ground_state(problem.h0)
    psi = np.asarray(initial_state, dtype=complex)
    if psi.shape != (problem.dim,):
        raise DimensionMismatch(f"initial state has shape {psi.shape}, expected ({problem.dim},)")
    return psi / np.linalg.norm(psi)


def _evolve(problem: AnnealProblem, schedule: Schedule, control_schedules: Sequence[ControlSchedule],
            policy: StepPolicy, counterdiabatic: bool, initial_state, recorder: Optional[_Recorder]):
    psi = _check_initial(problem, initial_state)
    controls = list(zip(control_schedules, problem.controls))

    def control_part(t):
        if not controls:
            return 0.0, ()
        fvals = tuple(cs.evaluate(t) for cs, _ in controls)
        return sum(f * hc for f, (_, hc) in zip(fvals, controls)), fvals

    extra = 0.0
    if counterdiabatic:
        if schedule.form == "pulses":
            raise UnsupportedForm("counterdiabatic driving needs a differentiable schedule")
        probe = np.linspace(0.0, schedule.tf, 33)[1:-1]
        extra = 2.0 * max(matrix_norm(counterdiabatic_term(problem, schedule.evaluate(t),
                                                           schedule.derivative(t))) for t in probe)
    dt = default_dt(problem, schedule, control_schedules, policy, extra)

    if schedule.form == "pulses":
        for seg, ((gval, _), (start, end)) in enumerate(zip(schedule.pulse_list, schedule.segment_bounds())):
            n = max(policy.min_steps, int(math.ceil((end - start) / dt - 1e-9)))
            ts = np.linspace(start, end, n + 1)
            h_seg = problem.hamiltonian(gval)
            if not controls:
                dec = spectral_decompose(h_seg, check=False)
                psi_start = psi
                for t in ts:
                    psi = evolve_step(psi_start, decomposition=dec, dt=t - start)
                    if recorder is not None:
                        recorder.record(float(t), gval, psi, seg)
            else:
                for i, t in enumerate(ts):
                    if recorder is not None:
                        recorder.record(float(t), gval, psi, seg, control_part(t)[1])
                    if i + 1 < len(ts):
                        tm = 0.5 * (t + ts[i + 1])
                        hm = h_seg + control_part(tm)[0]
                        psi = evolve_step(psi, hm, ts[i + 1] - t)
        return psi

    # step each smooth piece on its own grid so no step straddles a kink in g
    bounds = schedule.segment_bounds()
    for seg, (start, end) in enumerate(bounds):
        n = max(policy.min_steps, int(math.ceil((end - start) / dt - 1e-9)))
        ts = np.linspace(start, end, n + 1)
        for i, t in enumerate(ts):
            if recorder is not None:
                g_dot = None
                if counterdiabatic:
                    # the derivative is right-sided at knots; the last sample of a piece uses its own slope
                    last = i + 1 == len(ts) and seg + 1 < len(bounds)
                    g_dot = schedule.derivative(0.5 * (ts[-2] + t) if last else t)
                recorder.record(float(t), schedule.evaluate(t), psi, seg, control_part(t)[1], g_dot)
            if i + 1 == len(ts):
                break
            tm = 0.5 * (t + ts[i + 1])
            gm = schedule.evaluate(tm)
            hm = problem.hamiltonian(gm) + control_part(tm)[0]
            if counterdiabatic:
                hm = hm + counterdiabatic_term(problem, gm, schedule.derivative(tm))
            dec = spectral_decompose(hm, check=False)
            psi = evolve_step(psi, decomposition=dec, dt=ts[i + 1] - t)
    return psi


def propagate(problem: AnnealProblem, schedule: Schedule, step_policy: Optional[StepPolicy] = None,
              initial_state=None) -> np.ndarray:
    """Final state only, without per-sample records (fast path for optimizers)."""
    policy = step_policy or StepPolicy()
    psi = _check_initial(problem, initial_state)
    if schedule.form == "pulses":
        for gval, dur in schedule.pulse_list:
            psi = evolve_step(psi, problem.hamiltonian(gval), dur)
        return psi
    return _evolve(problem, schedule, (), policy, False, psi, None)


def final_fidelity(problem: AnnealProblem, psi) -> float:
    """Population of ``psi`` in the ground space of ``H1``."""
    return subspace_population(psi, ground_space(problem.h1))


def simulate(problem: AnnealProblem, schedule: Schedule, step_policy: Optional[StepPolicy] = None, *,
             retain_states: bool = False, want_exact_c1: bool = False, c1_tol: float = 1e-7,
             initial_state=None) -> Trajectory:
    """Evolve from the ground state of ``H0`` (or ``initial_state``) and record observables."""
    policy = step_policy or StepPolicy()
    rec = _Recorder(problem, (), retain_states, want_exact_c1, c1_tol, False)
    psi = _evolve(problem, schedule, (), policy, False, initial_state, rec)
    return rec.finish(schedule.tf, psi, schedule.form)


def simulate_with_controls(problem: AnnealProblem, schedule: Schedule,
                           control_schedules: Sequence[ControlSchedule] = (),
                           step_policy: Optional[StepPolicy] = None, *,
                           counterdiabatic: bool = False, retain_states: bool = False,
                           want_exact_c1: bool = False, c1_tol: float = 1e-7,
                           initial_state=None) -> Trajectory:
    """Evolve under ``H(t) + sum_a f_a(t) H_C^a`` (plus ``H_CD`` if requested).

    Records keep using the eigenbasis of the uncontrolled ``H(t)``.
    """
    control_schedules = tuple(control_schedules)
    if len(control_schedules) != len(problem.controls):
        raise ControlCountMismatch(
            f"{len(control_schedules)} control schedules for {len(problem.controls)} controls")
    for cs in control_schedules:
        if abs(cs.tf - schedule.tf) > 1e-9 * schedule.tf:
            raise ControlCountMismatch("control schedule duration differs from tf")
    policy = step_policy or StepPolicy()
    rec = _Recorder(problem, control_schedules, retain_states, want_exact_c1, c1_tol, counterdiabatic)
    psi = _evolve(problem, schedule, control_schedules, policy, counterdiabatic, initial_state, rec)
    return rec.finish(schedule.tf, psi, schedule.form)


def _fd_weights(x: np.ndarray, x0: float) -> np.ndarray:
    """Weights of the first derivative at ``x0`` from values at nodes ``x``."""
    n = len(x)
    dx = (x - x0) / (x[-1] - x[0])
    vander = np.vander(dx, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[1] = 1.0
    return np.linalg.solve(vander, rhs) / (x[-1] - x[0])


def identity_residual(trajectory: Trajectory, comm_norm: Optional[float] = None,
                      stencil: int = 5) -> float:
    """Largest mismatch between ``d/dt(<H0> - <H1>)`` and the commutator rate.

    The derivative is a ``stencil``-point finite difference of the recorded
    expectations, centred where possible and shifted at the edges of each
    smooth segment; the rate is the recorded ``i <[H1, H0]>`` plus control
    contributions. Dividing by ``comm_norm``, which bounds the uncontrolled
    rate, gives a relative residual.
    """
    t = trajectory.times
    f = trajectory.exp_h0 - trajectory.exp_h1
    rate = trajectory.comm_expectation + trajectory.control_rate
    worst = 0.0
    for seg in np.unique(trajectory.segment):
        idx = np.nonzero(trajectory.segment == seg)[0]
        ts, fs, rs = t[idx], f[idx], rate[idx]
        m = len(ts)
        width = min(stencil, m)
        if width < 2:
            continue
        for i in range(m):
            lo = min(max(i - width // 2, 0), m - width)
            nodes = slice(lo, lo + width)
            fd = float(_fd_weights(ts[nodes], ts[i]) @ fs[nodes])
            worst = max(worst, abs(fd - rs[i]))
    if comm_norm:
        return worst / comm_norm
    return worst


# -- CSV export -----------------------------------------------------------------

BASE_COLUMNS = ("t", "g", "exp_H0", "exp_H1", "p0", "purity_defect", "c_dephased", "gap")


def _fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def trajectory_to_csv(traj: Trajectory) -> str:
    """CSV text with fixed leading columns; floats use shortest round-trip form."""
    cols = list(BASE_COLUMNS) + ["c_l1", "comm_expectation", "control_rate", "segment"]
    data = [traj.times, traj.g, traj.exp_h0, traj.exp_h1, traj.p0, traj.purity_defect,
            traj.c_dephased, traj.gap, traj.c_l1, traj.comm_expectation, traj.control_rate]
    if traj.c1_exact is not None:
        cols.append("c1_exact")
    if traj.control_values is not None:
        cols += [f"f_{a}" for a in range(traj.control_values.shape[1])]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for k in range(len(traj.times)):
        row = [_fmt(col[k]) for col in data] + [str(int(traj.segment[k]))]
        if traj.c1_exact is not None:
            row.append(_fmt(traj.c1_exact[k]))
        if traj.control_values is not None:
            row += [_fmt(v) for v in traj.control_values[k]]
        writer.writerow(row)
    return buf.getvalue()


def trajectory_from_csv(text: str, final_fidelity: float = float("nan"),
                        counterdiabatic: bool = False) -> Trajectory:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = [r for r in reader if r]
    cols = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    num = lambda name: np.array([float(v) for v in cols[name]])
    n = len(rows)
    fcols = sorted((c for c in header if c.startswith("f_")), key=lambda c: int(c[2:]))
    return Trajectory(
        times=num("t"), g=num("g"), exp_h0=num("exp_H0"), exp_h1=num("exp_H1"), p0=num("p0"),
        purity_defect=num("purity_defect"), c_dephased=num("c_dephased"), gap=num("gap"),
        c_l1=num("c_l1") if "c_l1" in cols else np.full(n, np.nan),
        comm_expectation=num("comm_expectation") if "comm_expectation" in cols else np.full(n, np.nan),
        control_rate=num("control_rate") if "control_rate" in cols else np.zeros(n),
        norm_error=np.zeros(n),
        segment=np.array([int(v) for v in cols["segment"]]) if "segment" in cols else np.zeros(n, int),
        tf=float(num("t")[-1]), final_fidelity=final_fidelity,
        c1_exact=num("c1_exact") if "c1_exact" in cols else None,
        control_values=np.column_stack([num(c) for c in fcols]) if fcols else None,
        counterdiabatic=counterdiabatic,
    )


def states_to_text(traj: Trajectory) -> str:
    """Plain-text state dump: one line per sample, ``t`` then re/im pairs."""
    if traj.states is None:
        raise ValueError("trajectory has no retained states")
    lines = []
    for t, psi in zip(traj.times, traj.states):
        parts = [_fmt(t)] + [f"{_fmt(z.real)} {_fmt(z.imag)}" for z in psi]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
