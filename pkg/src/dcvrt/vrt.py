"""Low-voltage ride-through envelopes and the facility trip supervisor."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from dcvrt.errors import ConfigError

BUILTIN_CURVES = {
    "iec62040-3": "iec62040_3.json",
    "iti-cbema": "iti_cbema.json",
}


@dataclass(frozen=True)
class VrtCurve:
    """Staircase envelope.

    ``breakpoints`` holds ``(min_voltage, max_duration)`` pairs sorted by
    descending voltage: a sag below ``min_voltage`` must be tolerated for up to
    ``max_duration`` seconds. Deeper sags get shorter durations.
    """

    name: str
    continuous_threshold: float
    breakpoints: tuple

    def __post_init__(self):
        bps = tuple((float(v), float(d)) for v, d in self.breakpoints)
        if not bps:
            raise ConfigError(f"curve {self.name!r} has no breakpoints")
        volts = [v for v, _ in bps]
        durs = [d for _, d in bps]
        if any(b >= a for a, b in zip(volts, volts[1:])):
            raise ConfigError(f"curve {self.name!r}: breakpoint voltages must strictly descend")
        if any(b >= a for a, b in zip(durs, durs[1:])):
            raise ConfigError(f"curve {self.name!r}: deeper sags need strictly shorter durations")
        if any(d <= 0 for d in durs):
            raise ConfigError(f"curve {self.name!r}: durations must be positive")
        if self.continuous_threshold < volts[0]:
            raise ConfigError(f"curve {self.name!r}: continuous threshold below highest breakpoint")
        object.__setattr__(self, "breakpoints", bps)

    @property
    def voltages(self) -> np.ndarray:
        return np.array([v for v, _ in self.breakpoints])

    @property
    def durations(self) -> np.ndarray:
        return np.array([d for _, d in self.breakpoints])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "continuous_threshold": self.continuous_threshold,
            "breakpoints": [{"voltage_pu": v, "duration_s": d} for v, d in self.breakpoints],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VrtCurve":
        try:
            rows = data["breakpoints"]
            bps = [(r["voltage_pu"], r["duration_s"]) if isinstance(r, dict) else (r[0], r[1]) for r in rows]
            return cls(str(data["name"]), float(data["continuous_threshold"]), tuple(bps))
        except (KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"malformed curve definition: {exc}") from None


def load_curve(ref) -> VrtCurve:
    """Load a curve from a built-in name (``iec62040-3``, ``iti-cbema``) or a JSON file path."""
    if isinstance(ref, VrtCurve):
        return ref
    if isinstance(ref, dict):
        return VrtCurve.from_dict(ref)
    key = str(ref).lower()
    if key in BUILTIN_CURVES:
        text = resources.files("dcvrt.data.curves").joinpath(BUILTIN_CURVES[key]).read_text()
    else:
        path = Path(ref)
        if not path.is_file():
            raise ConfigError(f"unknown curve {ref!r} (not a built-in name or a file)")
        text = path.read_text()
    try:
        return VrtCurve.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"curve {ref!r}: invalid JSON ({exc})") from None


@dataclass
class TripSupervisor:
    curve: VrtCurve
    timers: np.ndarray = None
    tripped: bool = False
    trip_time: Optional[float] = None
    elapsed: float = 0.0

    def __post_init__(self):
        if self.timers is None:
            self.timers = np.zeros(len(self.curve.breakpoints))


def update_trip(sup: TripSupervisor, v_pcc: float, dt: float, t: Optional[float] = None) -> bool:
    """Advance every below-threshold timer by ``dt``; latch a trip once any exceeds its duration.

    ``t`` stamps the trip time; without it the supervisor's own elapsed clock is used.
    """
    if dt <= 0:
        raise ConfigError("dt must be > 0")
    sup.elapsed += dt
    if sup.tripped:
        return True
    below = v_pcc < sup.curve.voltages
    sup.timers = np.where(below, sup.timers + dt, 0.0)
    # tolerance keeps the verdict independent of accumulated float error in the timers
    if np.any(sup.timers > sup.curve.durations + 1e-9):
        sup.tripped = True
        sup.trip_time = sup.elapsed if t is None else t
    return sup.tripped


def max_time_below(times, values, threshold: float) -> float:
    """Longest continuous stretch of samples strictly below ``threshold``, in sample-time units.

    Each sample is taken to represent the interval up to the next sample; the
    final sample spans the median step.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0:
        raise ConfigError("trajectory is empty")
    if times.size > 1:
        widths = np.diff(times)
        widths = np.append(widths, np.median(widths))
    else:
        widths = np.array([0.0])
    best = run = 0.0
    for w, below in zip(widths, values < threshold):
        run = run + w if below else 0.0
        best = max(best, run)
    return best


def envelope_margin(times, v_pcc, curve: VrtCurve) -> float:
    """Worst-case slack ``min_k (d_k - longest stay below v_k)``; negative means the curve was violated."""
    return float(min(d - max_time_below(times, v_pcc, v) for v, d in curve.breakpoints))
