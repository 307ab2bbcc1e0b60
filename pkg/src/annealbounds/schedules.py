"""Annealing schedules ``g_t`` and control schedules ``f_t``."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .errors import InvalidParameterRange, TimeOutOfRange, UnsupportedForm

FORMS = ("linear", "piecewise_linear", "roland_cerf", "pulses")
_TIME_SLACK = 1e-12

_PI_RE = re.compile(r"^\s*([+-]?)\s*(\d+(?:\.\d+)?)?\s*\*?\s*pi\s*(?:/\s*(\d+))?\s*$")


def parse_pi_rational(value) -> float:
    """Parse numbers such as ``0.5``, ``"pi/4"``, ``"3pi/4"`` or ``"-2*pi"``."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower()
    m = _PI_RE.match(text)
    if m is None:
        try:
            return float(Fraction(text))
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"cannot parse {value!r} as a number or rational multiple of pi")
    sign, coeff, denom = m.groups()
    factor = Fraction(coeff) if coeff else Fraction(1)
    if denom:
        factor /= int(denom)
    out = float(factor) * math.pi
    return -out if sign == "-" else out


def roland_cerf_total_time(d: int, epsilon: float) -> float:
    """Duration of the locally adiabatic search schedule ``dg/dt = eps * gap(g)**2``.

    ``tf = (1/eps) * d / sqrt(d-1) * arctan(sqrt(d-1))``, which tends to
    ``pi sqrt(d) / (2 eps)`` for large ``d``.
    """
    if d < 2 or not 0.0 < epsilon < 1.0:
        raise InvalidParameterRange(f"need d >= 2 and 0 < epsilon < 1, got d={d}, epsilon={epsilon}")
    r = math.sqrt(d - 1.0)
    return d / r * math.atan(r) / epsilon


def search_gap_squared(d: int, g):
    return 1.0 - 4.0 * (1.0 - 1.0 / d) * g * (1.0 - g)


def roland_cerf_time_of_g(d: int, epsilon: float, g):
    """Closed-form elapsed time at which the schedule reaches ``g``."""
    a = 1.0 - 1.0 / d
    r = math.sqrt(d - 1.0)
    scale = d / (2.0 * r * epsilon)
    return scale * (np.arctan(2.0 * math.sqrt(a / (1.0 - a)) * (np.asarray(g) - 0.5)) + math.atan(r))


@dataclass(frozen=True)
class Schedule:
    """An annealing schedule on ``[0, tf]``.

    Use the constructors :meth:`linear`, :meth:`piecewise_linear`,
    :meth:`roland_cerf` and :meth:`pulses` rather than the raw fields.
    ``allow_g_outside_unit`` lifts the default restriction of g to [0, 1].
    """

    form: str
    tf: float
    knots: tuple = ()
    pulse_list: tuple = ()
    d: Optional[int] = None
    epsilon: Optional[float] = None
    allow_g_outside_unit: bool = False

    def __post_init__(self):
        if self.form not in FORMS:
            raise InvalidParameterRange(f"unknown schedule form {self.form!r}")
        if not (self.tf > 0 and math.isfinite(self.tf)):
            raise InvalidParameterRange(f"tf must be positive and finite, got {self.tf}")
        gs = []
        if self.form == "piecewise_linear":
            ts = [t for t, _ in self.knots]
            if len(ts) < 2 or ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])):
                raise InvalidParameterRange("knot times must start at 0 and strictly increase")
            if abs(ts[-1] - self.tf) > _TIME_SLACK * self.tf:
                raise InvalidParameterRange("last knot must sit at tf")
            gs = [g for _, g in self.knots]
        elif self.form == "pulses":
            if not self.pulse_list:
                raise InvalidParameterRange("pulse schedule needs at least one pulse")
            durs = [dur for _, dur in self.pulse_list]
            if any(not dur > 0 for dur in durs):
                raise InvalidParameterRange("pulse durations must be positive")
            if abs(math.fsum(durs) - self.tf) > 1e-12 * self.tf:
                raise InvalidParameterRange("pulse durations must sum to tf")
            gs = [g for g, _ in self.pulse_list]
        elif self.form == "roland_cerf":
            expected = roland_cerf_total_time(self.d, self.epsilon)
            if abs(expected - self.tf) > 1e-9 * expected:
                raise InvalidParameterRange("roland_cerf tf must equal its closed-form duration")
        if not self.allow_g_outside_unit and any(g < 0.0 or g > 1.0 for g in gs):
            raise InvalidParameterRange("g outside [0, 1]; pass allow_g_outside_unit=True to permit")

    # constructors
    @classmethod
    def linear(cls, tf: float) -> "Schedule":
        return cls("linear", float(tf))

    @classmethod
    def piecewise_linear(cls, knots: Sequence, allow_g_outside_unit: bool = False) -> "Schedule":
        knots = tuple((float(t), float(g)) for t, g in knots)
        return cls("piecewise_linear", knots[-1][0], knots=knots,
                   allow_g_outside_unit=allow_g_outside_unit)

    @classmethod
    def roland_cerf(cls, d: int, epsilon: float) -> "Schedule":
        return cls("roland_cerf", roland_cerf_total_time(d, epsilon), d=int(d), epsilon=float(epsilon))

    @classmethod
    def pulses(cls, pulses: Sequence, allow_g_outside_unit: bool = False) -> "Schedule":
        """``pulses`` is a sequence of ``(g_value, duration)``; durations may be "pi/4" strings."""
        plist = tuple((float(parse_pi_rational(g)), parse_pi_rational(dur)) for g, dur in pulses)
        tf = math.fsum(dur for _, dur in plist)
        return cls("pulses", tf, pulse_list=plist, allow_g_outside_unit=allow_g_outside_unit)

    # evaluation
    def _check_time(self, t: float) -> float:
        if t < -_TIME_SLACK * self.tf or t > self.tf * (1 + _TIME_SLACK) or math.isnan(t):
            raise TimeOutOfRange(f"t={t} outside [0, {self.tf}]")
        return min(max(t, 0.0), self.tf)

    def segment_bounds(self) -> list[tuple[float, float]]:
        """Start and end times of the pieces on which g is smooth.

        These are the pulses, the intervals between piecewise-linear knots,
        or the whole run for the other forms.
        """
        if self.form == "piecewise_linear":
            ts = [t for t, _ in self.knots]
            return list(zip(ts, ts[1:]))
        if self.form != "pulses":
            return [(0.0, self.tf)]
        out, start = [], 0.0
        for _, dur in self.pulse_list:
            out.append((start, start + dur))
            start += dur
        out[-1] = (out[-1][0], self.tf)
        return out

    def evaluate(self, t: float) -> float:
        t = self._check_time(t)
        if self.form == "linear":
            g = t / self.tf
        elif self.form == "piecewise_linear":
            ts, gs = zip(*self.knots)
            g = float(np.interp(t, ts, gs))
        elif self.form == "roland_cerf":
            g = self._roland_cerf_g(t)
        else:
            g = self.pulse_list[-1][0]
            for (gv, _), (start, end) in zip(self.pulse_list, self.segment_bounds()):
                if t < end:
                    g = gv
                    break
        if not self.allow_g_outside_unit:
            g = min(max(g, 0.0), 1.0)
        return g

    def _roland_cerf_g(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        if t >= self.tf:
            return 1.0
        d, eps = self.d, self.epsilon
        f = lambda g: roland_cerf_time_of_g(d, eps, g) - t
        # rounding in the closed form can leave no sign change within a few ulps of an end
        if f(0.0) >= 0.0:
            return 0.0
        if f(1.0) <= 0.0:
            return 1.0
        return brentq(f, 0.0, 1.0, xtol=1e-13)

    def derivative(self, t: float) -> float:
        """``dg/dt``, right-sided at knots (left-sided at ``tf``)."""
        t = self._check_time(t)
        if self.form == "linear":
            return 1.0 / self.tf
        if self.form == "piecewise_linear":
            ts = [k[0] for k in self.knots]
            i = int(np.searchsorted(ts, t, side="right")) - 1
            i = min(max(i, 0), len(ts) - 2)
            (t0, g0), (t1, g1) = self.knots[i], self.knots[i + 1]
            return (g1 - g0) / (t1 - t0)
        if self.form == "roland_cerf":
            return self.epsilon * search_gap_squared(self.d, self._roland_cerf_g(t))
        raise UnsupportedForm("pulse schedules have no pointwise derivative")

    def g_range(self) -> tuple[float, float]:
        if self.form == "piecewise_linear":
            gs = [g for _, g in self.knots]
        elif self.form == "pulses":
            gs = [g for g, _ in self.pulse_list]
        else:
            gs = [0.0, 1.0]
        return min(gs), max(gs)

    def to_dict(self) -> dict:
        doc = {"form": self.form, "tf": self.tf}
        if self.form == "piecewise_linear":
            doc["knots"] = [list(k) for k in self.knots]
        elif self.form == "pulses":
            doc["pulses"] = [list(p) for p in self.pulse_list]
        elif self.form == "roland_cerf":
            doc["d"], doc["epsilon"] = self.d, self.epsilon
        if self.allow_g_outside_unit:
            doc["allow_g_outside_unit"] = True
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Schedule":
        form = doc["form"]
        loose = bool(doc.get("allow_g_outside_unit", False))
        if form == "linear":
            return cls.linear(parse_pi_rational(doc["tf"]))
        if form == "piecewise_linear":
            return cls.piecewise_linear([(parse_pi_rational(t), g) for t, g in doc["knots"]], loose)
        if form == "roland_cerf":
            return cls.roland_cerf(int(doc["d"]), float(doc["epsilon"]))
        if form == "pulses":
            return cls.pulses(doc["pulses"], loose)
        raise InvalidParameterRange(f"unknown schedule form {form!r}")


def evaluate(schedule: Schedule, t: float) -> float:
    return schedule.evaluate(t)


def derivative(schedule: Schedule, t: float) -> float:
    return schedule.derivative(t)


@dataclass(frozen=True)
class ControlSchedule:
    """Non-negative piecewise-linear control amplitude pinned to zero at both ends."""

    knots: tuple

    def __post_init__(self):
        knots = tuple((float(t), float(f)) for t, f in self.knots)
        ts = [t for t, _ in knots]
        if len(ts) < 2 or ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidParameterRange("control knot times must start at 0 and strictly increase")
        if any(f < 0 for _, f in knots):
            raise InvalidParameterRange("control amplitudes must be non-negative")
        if knots[0][1] != 0.0 or knots[-1][1] != 0.0:
            raise InvalidParameterRange("control amplitudes must vanish at t=0 and t=tf")
        object.__setattr__(self, "knots", knots)

    @property
    def tf(self) -> float:
        return self.knots[-1][0]

    @classmethod
    def zero(cls, tf: float) -> "ControlSchedule":
        return cls(((0.0, 0.0), (tf, 0.0)))

    @classmethod
    def bump(cls, tf: float, amplitude: float, start: float, stop: float, n: int = 16) -> "ControlSchedule":
        """Sine-squared bump of the given peak on ``[start, stop]``, zero elsewhere."""
        if not 0.0 <= start < stop <= tf:
            raise InvalidParameterRange("bump must satisfy 0 <= start < stop <= tf")
        ts = np.linspace(start, stop, n + 1)
        fs = amplitude * np.sin(np.pi * (ts - start) / (stop - start)) ** 2
        fs[0] = fs[-1] = 0.0
        pts = [(float(t), float(f)) for t, f in zip(ts, fs)]
        if start > 0.0:
            pts.insert(0, (0.0, 0.0))
        if stop < tf:
            pts.append((float(tf), 0.0))
        return cls(tuple(pts))

    def evaluate(self, t: float) -> float:
        ts, fs = zip(*self.knots)
        return float(np.interp(t, ts, fs))

    def peak(self) -> float:
        return max(f for _, f in self.knots)

    def time_average(self) -> float:
        ts, fs = zip(*self.knots)
        return float(trapezoid(fs, ts) / self.tf)

    def to_dict(self) -> dict:
        return {"knots": [list(k) for k in self.knots]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ControlSchedule":
        return cls(tuple((parse_pi_rational(t), f) for t, f in doc["knots"]))
