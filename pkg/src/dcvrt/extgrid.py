"""Reduced-order external grid: an EMF behind a reactance, with scripted events.

The data center's aggregate consumption (P_load, Q_load) is drawn at the PCC.
The PCC voltage is the high-voltage root of the two-bus power balance

    u^2 + (2 Q X - E^2) u + X^2 (P^2 + Q^2) = 0,     v0 = sqrt(u).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dcvrt.errors import ConfigError, VoltageCollapse

EVENT_KINDS = ("set_emf_setpoint", "set_thevenin_reactance")


@dataclass(frozen=True)
class GridEvent:
    time: float
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigError(f"unknown grid event kind {self.kind!r}")
        if self.time < 0:
            raise ConfigError("grid event time must be >= 0")
        if self.value <= 0:
            raise ConfigError(f"{self.kind} value must be > 0")


@dataclass(frozen=True)
class TheveninState:
    E: float
    E_set: float
    X_th: float
    tau: float

    def __post_init__(self):
        for name in ("E", "E_set", "X_th", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"Thevenin {name} must be > 0")


def pcc_voltage(E: float, X_th: float, P_load: float, Q_load: float) -> float:
    """PCC voltage magnitude for a load (P_load, Q_load) fed through ``X_th`` from ``E``.

    Raises :class:`VoltageCollapse` when the load exceeds the deliverable power.
    """
    if E <= 0 or X_th <= 0:
        raise ConfigError("E and X_th must be positive")
    half = 0.5 * E * E - Q_load * X_th
    disc = half * half - X_th * X_th * (P_load * P_load + Q_load * Q_load)
    if disc < 0:
        raise VoltageCollapse(
            f"no power-flow solution: E={E:.4f}, X_th={X_th:.4f}, P={P_load:.4f}, Q={Q_load:.4f}"
        )
    u = half + math.sqrt(disc)
    if u <= 0:
        raise VoltageCollapse(f"non-positive voltage root (u={u:.3e})")
    return math.sqrt(u)


def grid_sensitivity(E: float, X_th: float, P_load: float, Q_load: float, h: float = 1e-6) -> tuple:
    """``(dv0/dP_inj, dv0/dQ_inj)``: PCC voltage lift per unit of injection by the facility.

    Injection is minus load. Central differences; raises :class:`VoltageCollapse`
    when the stencil leaves the solvable region.
    """
    g_p = (pcc_voltage(E, X_th, P_load - h, Q_load) - pcc_voltage(E, X_th, P_load + h, Q_load)) / (2 * h)
    g_q = (pcc_voltage(E, X_th, P_load, Q_load - h) - pcc_voltage(E, X_th, P_load, Q_load + h)) / (2 * h)
    return g_p, g_q


def apply_event(state: TheveninState, event: GridEvent) -> TheveninState:
    if event.kind == "set_emf_setpoint":
        return replace(state, E_set=event.value)
    return replace(state, X_th=event.value)


def step_thevenin(state: TheveninState, P_load: float, Q_load: float, dt: float,
                  events_due: Iterable[GridEvent] = ()) -> tuple:
    """Advance the EMF by one forward-Euler step after applying ``events_due``.

    Returns ``(new_state, v0)``.
    """
    if dt <= 0:
        raise ConfigError("dt must be > 0")
    for ev in events_due:
        state = apply_event(state, ev)
    E = state.E + dt * (state.E_set - state.E) / state.tau
    state = replace(state, E=E)
    return state, pcc_voltage(state.E, state.X_th, P_load, Q_load)


class TheveninGrid:
    """Stateful wrapper that releases scripted events as simulation time advances."""

    def __init__(self, state: TheveninState, events: Sequence[GridEvent] = ()):
        self.state = state
        self.events = sorted(events, key=lambda ev: ev.time)
        self._next = 0

    def initial_voltage(self, P_load: float, Q_load: float) -> float:
        return pcc_voltage(self.state.E, self.state.X_th, P_load, Q_load)

    def step(self, t: float, dt: float, P_load: float, Q_load: float) -> float:
        """Advance from ``t`` to ``t + dt``; events with time in (t, t + dt] fire now."""
        due = []
        eps = 1e-9 * dt
        while self._next < len(self.events) and self.events[self._next].time <= t + dt + eps:
            due.append(self.events[self._next])
            self._next += 1
        self.state, v0 = step_thevenin(self.state, P_load, Q_load, dt, due)
        return v0


@dataclass(frozen=True)
class TraceSource:
    """Open-loop PCC voltage replay, held constant between samples."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size == 0:
            raise ConfigError("trace needs at least one (time, v0) sample")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("trace times must be strictly increasing")
        if np.any(values <= 0):
            raise ConfigError("trace voltages must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_samples(cls, samples) -> "TraceSource":
        samples = list(samples)
        return cls(np.array([s[0] for s in samples], dtype=float), np.array([s[1] for s in samples], dtype=float))


def step_trace(source: TraceSource, t: float) -> float:
    """Zero-order-hold lookup; a sample time takes the new value."""
    if t < source.times[0]:
        raise ConfigError(f"t={t} precedes the first trace sample at {source.times[0]}")
    k = int(np.searchsorted(source.times, t, side="right")) - 1
    return float(source.values[k])


class TraceGrid:
    def __init__(self, source: TraceSource):
        self.source = source

    def initial_voltage(self, P_load: float, Q_load: float) -> float:
        return step_trace(self.source, self.source.times[0])

    def step(self, t: float, dt: float, P_load: float, Q_load: float) -> float:
        return step_trace(self.source, t + dt)


def load_trace_csv(path) -> TraceSource:
    """Read a two-column ``time_s,v0_pu`` CSV with a header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ConfigError(f"{path}: expected header 'time_s,v0_pu'")
        try:
            samples = [(float(row[0]), float(row[1])) for row in reader if row]
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{path}: malformed trace row ({exc})") from None
    return TraceSource.from_samples(samples)
