"""Schedule optimization and parameter sweeps.

Schedules are searched with seeded Nelder-Mead restarts over a small
parameter vector. The vector is mapped onto a valid schedule smoothly:
g-values through ``(1 - cos x) / 2`` and pulse durations through a softmax,
so every point the optimizer visits is a legal schedule of length ``tf``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from .bounds import SUMMARY_COLUMNS, bound_report, ideal_tau3
from .dynamics import StepPolicy, _fmt, final_fidelity, propagate, simulate
from .errors import AnnealError, BracketInfeasible, InvalidParameterRange
from .problems import AnnealProblem, rebuild_named
from .schedules import Schedule

N_RESTARTS = 8
MAX_ITER = 200
SIMPLEX_SCALE = 0.1
BISECTION_RTOL = 0.01


@dataclass(frozen=True)
class Family:
    """A parametrized schedule family.

    ``kind`` is ``"pulses"`` (``size`` piecewise-constant pulses) or
    ``"piecewise_linear"`` (``size`` interior knots at equal spacing between
    ``g=0`` and ``g=1``). ``fixed_g`` pins the pulse g-values so that only
    the durations are searched.
    """

    kind: str
    size: int
    fixed_g: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("pulses", "piecewise_linear"):
            raise InvalidParameterRange(f"unknown family {self.kind!r}")
        if self.size < 1:
            raise InvalidParameterRange("family arity must be at least 1")
        if self.fixed_g is not None:
            if self.kind != "pulses" or len(self.fixed_g) != self.size:
                raise InvalidParameterRange("fixed_g needs a pulses family of matching size")
            object.__setattr__(self, "fixed_g", tuple(float(g) for g in self.fixed_g))

    @classmethod
    def pulses(cls, n: int, fixed_g: Optional[Sequence[float]] = None) -> "Family":
        return cls("pulses", n, None if fixed_g is None else tuple(fixed_g))

    @classmethod
    def piecewise_linear(cls, n_knots: int) -> "Family":
        return cls("piecewise_linear", n_knots)

    @property
    def n_params(self) -> int:
        if self.kind == "piecewise_linear":
            return self.size
        return self.size if self.fixed_g is not None else 2 * self.size

    def initial_guess(self) -> np.ndarray:
        """Linear ramp in g with equal durations."""
        ramp = (np.arange(self.size) + 0.5) / self.size if self.kind == "pulses" \
            else np.arange(1, self.size + 1) / (self.size + 1)
        xg = np.arccos(1.0 - 2.0 * ramp)
        if self.kind == "piecewise_linear":
            return xg
        durations = np.zeros(self.size)
        return durations if self.fixed_g is not None else np.concatenate([xg, durations])

    def to_schedule(self, x, tf: float) -> Schedule:
        x = np.asarray(x, dtype=float)
        if self.kind == "piecewise_linear":
            g = 0.5 * (1.0 - np.cos(x))
            ts = np.linspace(0.0, tf, self.size + 2)
            return Schedule.piecewise_linear(list(zip(ts, np.concatenate([[0.0], g, [1.0]]))))
        if self.fixed_g is not None:
            gs, xd = np.asarray(self.fixed_g), x
        else:
            gs, xd = 0.5 * (1.0 - np.cos(x[: self.size])), x[self.size:]
        w = np.exp(np.clip(xd - xd.max(), -30.0, 0.0))
        durs = tf * w / math.fsum(w)
        return Schedule.pulses(list(zip(gs, durs)))

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "size": self.size}
        if self.fixed_g is not None:
            doc["fixed_g"] = list(self.fixed_g)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Family":
        fixed = doc.get("fixed_g")
        return cls(doc["kind"], int(doc["size"]), None if fixed is None else tuple(fixed))


@dataclass
class OptimizationResult:
    best_schedule: Schedule
    best_tf: float
    achieved_fidelity: float
    objective_history: list
    evaluations: int
    saturation_ratio: float
    seed: int
    tau3: float = float("nan")
    budget_exhausted: bool = False
    best_params: Optional[list] = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "best_schedule": self.best_schedule.to_dict(),
            "best_tf": self.best_tf,
            "achieved_fidelity": self.achieved_fidelity,
            "objective_history": list(self.objective_history),
            "evaluations": self.evaluations,
            "saturation_ratio": self.saturation_ratio,
            "seed": self.seed,
            "tau3": self.tau3,
            "budget_exhausted": self.budget_exhausted,
            "best_params": self.best_params,
            "notes": dict(self.notes),
        }


class _BudgetSpent(Exception):
    pass


def _own_tau3(problem: AnnealProblem, schedule: Schedule, policy: Optional[StepPolicy]) -> float:
    report = bound_report(problem, simulate(problem, schedule, policy))
    return report.tau3


def _finish(problem, family, x, tf, infid, history, evals, seed, exhausted, policy, notes=None):
    sched = family.to_schedule(x, tf)
    tau3 = _own_tau3(problem, sched, policy)
    ratio = math.inf if tau3 == 0.0 else tf / tau3
    fid = min(1.0, max(0.0, 1.0 - infid))
    return OptimizationResult(sched, tf, fid, history, evals, ratio, seed, tau3, exhausted,
                              [float(v) for v in x], dict(notes or {}))


def optimize_fixed_tf(problem: AnnealProblem, family: Family, tf: float, budget: Optional[int] = None,
                      seed: int = 0, step_policy: Optional[StepPolicy] = None,
                      n_restarts: int = N_RESTARTS, max_iter: int = MAX_ITER) -> OptimizationResult:
    """Minimize the final infidelity over ``family`` at fixed ``tf``.

    The first restart starts from the family's linear-ramp guess; the others
    from uniformly random points seeded by ``seed``. ``budget`` caps the total
    number of objective evaluations; when it runs out the best point so far
    is returned with ``budget_exhausted`` set. A zero budget returns the
    initial guess without evaluating anything.
    """
    if budget is not None and budget < 0:
        raise InvalidParameterRange("budget must be non-negative")
    x0 = family.initial_guess()
    if budget == 0:
        sched = family.to_schedule(x0, tf)
        return OptimizationResult(sched, tf, float("nan"), [], 0, float("nan"), seed,
                                  budget_exhausted=True, best_params=[float(v) for v in x0],
                                  notes={"budget": "zero budget; initial guess returned unevaluated"})

    rng = np.random.default_rng(seed)
    evals = 0
    best = (math.inf, x0)
    history = []

    def objective(x):
        nonlocal evals, best
        if budget is not None and evals >= budget:
            raise _BudgetSpent
        evals += 1
        psi = propagate(problem, family.to_schedule(x, tf), step_policy)
        val = 1.0 - final_fidelity(problem, psi)
        if val < best[0]:
            best = (val, np.array(x, dtype=float))
        history.append(best[0])
        return val

    exhausted = False
    n = family.n_params
    for r in range(n_restarts):
        start = x0 if r == 0 else rng.uniform(-math.pi, math.pi, size=n)
        try:
            if n == 0:
                objective(start)
                break
            simplex = np.vstack([start, start + SIMPLEX_SCALE * math.pi * np.eye(n)])
            minimize(objective, start, method="Nelder-Mead",
                     options={"maxiter": max_iter, "initial_simplex": simplex,
                              "xatol": 1e-10, "fatol": 1e-14})
        except _BudgetSpent:
            exhausted = True
            break
    return _finish(problem, family, best[1], tf, best[0], history, evals, seed, exhausted, step_policy)


def minimal_time_search(problem: AnnealProblem, family: Family, fidelity_target: float,
                        tf_bracket: Optional[Sequence[float]] = None, seed: int = 0,
                        step_policy: Optional[StepPolicy] = None, rtol: float = BISECTION_RTOL,
                        **optimizer_kwargs) -> OptimizationResult:
    """Smallest ``tf`` in the bracket at which ``family`` reaches ``fidelity_target``.

    Bisects on ``tf`` with :func:`optimize_fixed_tf` as the inner problem
    until the bracket is within ``rtol`` relative width. The lower end
    defaults to the ideal tau3 bound (no schedule can succeed below it) and
    the upper end to ten times that.
    """
    if not 0.0 <= fidelity_target < 1.0:
        raise InvalidParameterRange("fidelity_target must lie in [0, 1)")
    tau3 = ideal_tau3(problem)
    if tf_bracket is None:
        lo, hi = tau3, 10.0 * tau3
    else:
        lo, hi = (float(v) for v in tf_bracket)
    if not 0.0 < lo < hi:
        raise InvalidParameterRange(f"invalid bracket [{lo}, {hi}]")

    def run(tf):
        return optimize_fixed_tf(problem, family, tf, seed=seed, step_policy=step_policy,
                                 **optimizer_kwargs)

    if fidelity_target == 0.0:
        res = run(lo)
        res.notes["search"] = "zero fidelity target is met at the lower bracket end"
        return res

    total_evals = 0
    best = run(hi)
    total_evals += best.evaluations
    if best.achieved_fidelity < fidelity_target:
        raise BracketInfeasible(
            f"upper bracket tf={hi:.6g} reaches fidelity {best.achieved_fidelity:.6g} "
            f"< target {fidelity_target}")
    trial = run(lo)
    total_evals += trial.evaluations
    if trial.achieved_fidelity >= fidelity_target:
        best, hi = trial, lo
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        trial = run(mid)
        total_evals += trial.evaluations
        if trial.achieved_fidelity >= fidelity_target:
            best, hi = trial, mid
        else:
            lo = mid
    best.evaluations = total_evals
    best.notes["bracket"] = [lo, hi]
    return best


# -- sweeps ------------------------------------------------------------------------

KEY_COLUMNS = ("index", "model_tag")
DEFAULT_OUTPUTS = SUMMARY_COLUMNS[2:] + ("final_fidelity",)


def schedule_from_spec(spec: Union[dict, Callable], problem: AnnealProblem, params: dict) -> Schedule:
    """Build a schedule for one sweep point.

    ``spec`` is a callable ``(problem, params) -> Schedule`` or a document:
    ``{"form": "roland_cerf", "epsilon": e}`` (d taken from the point),
    ``{"form": "linear", "tf": t}`` or any full schedule document.
    """
    if callable(spec):
        return spec(problem, params)
    if spec.get("form") == "roland_cerf" and "d" not in spec:
        return Schedule.roland_cerf(int(params["d"]), float(spec["epsilon"]))
    return Schedule.from_dict(spec)


@dataclass
class SweepResult:
    columns: list
    rows: list
    manifest: dict

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            cells = []
            for c in self.columns:
                v = row.get(c)
                cells.append("" if v is None else (_fmt(v) if isinstance(v, float) else str(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _sweep_point(model, params, schedule_spec, step_policy, diagnostics):
    try:
        problem = rebuild_named(model, params, params.get("representation", _default_rep(model)))
        sched = schedule_from_spec(schedule_spec, problem, params)
        traj = simulate(problem, sched, step_policy)
        report = bound_report(problem, traj, schedule=sched if diagnostics else None)
        values = {
            "tf": report.tf, "tau1_dephased": report.tau1_dephased, "tau2": report.tau2,
            "tau3": report.tau3, "tau_control": report.tau_control,
            "delta_min": report.diagnostics.get("delta_min"),
            "t_adiab_estimate": report.diagnostics.get("t_adiab_estimate"),
            "saturation_ratio_tau3": report.saturation_ratio.get("tau3"),
            "final_fidelity": report.final_fidelity,
        }
        return values, "ok"
    except (AnnealError, ValueError, KeyError) as exc:
        return {}, f"{type(exc).__name__}: {exc}"


def _default_rep(model: str) -> str:
    return {"search": "search_2d", "random_klocal": "full"}.get(model, "symmetric_subspace")


def sweep(model: str, param_grid: Sequence[dict], schedule_spec, outputs: Optional[Sequence[str]] = None,
          step_policy: Optional[StepPolicy] = None, max_workers: Optional[int] = None,
          diagnostics: bool = True) -> SweepResult:
    """Simulate and bound every grid point, one summary row each.

    Errors at a grid point end up in that row's ``status`` column and the
    sweep carries on. Rows are ordered by grid index whatever the worker
    count. ``outputs`` selects result columns (default: the bound summary
    plus final fidelity); an empty list keeps only the key columns.
    """
    grid = [dict(p) for p in param_grid]
    if not grid:
        raise InvalidParameterRange("parameter grid is empty")
    outputs = DEFAULT_OUTPUTS if outputs is None else tuple(outputs)
    unknown = set(outputs) - set(DEFAULT_OUTPUTS)
    if unknown:
        raise InvalidParameterRange(f"unknown output columns {sorted(unknown)}")
    param_names = []
    for p in grid:
        param_names += [k for k in p if k not in param_names]
    need_diag = diagnostics and bool({"delta_min", "t_adiab_estimate"} & set(outputs))

    def task(p):
        return _sweep_point(model, p, schedule_spec, step_policy, need_diag)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(task, grid))
    else:
        results = [task(p) for p in grid]

    columns = list(KEY_COLUMNS) + param_names + list(outputs) + ["status"]
    rows = []
    for i, (p, (values, status)) in enumerate(zip(grid, results)):
        row = {"index": i, "model_tag": model, **p, "status": status}
        row.update({k: values.get(k) for k in outputs})
        rows.append(row)
    spec_doc = schedule_spec if isinstance(schedule_spec, dict) else repr(schedule_spec)
    manifest = {
        "model": model,
        "grid": grid,
        "schedule": spec_doc,
        "step_policy": (step_policy or StepPolicy()).to_dict(),
        "outputs": list(outputs),
    }
    return SweepResult(columns, rows, manifest)
