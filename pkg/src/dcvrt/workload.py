"""Computing-cluster load profiles: seeded synthetic bursts or CSV replay."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dcvrt.errors import ConfigError


@dataclass(frozen=True)
class WorkloadTrace:
    """Per-cluster active consumption (per-unit, >= 0), held between change times.

    ``levels[k]`` applies from ``times[k]`` until ``times[k + 1]``.
    """

    times: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        levels = np.atleast_2d(np.asarray(self.levels, dtype=float))
        if times.ndim != 1 or levels.shape[0] != times.size or times.size == 0:
            raise ConfigError("workload needs one level row per change time")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("workload change times must be strictly increasing")
        if np.any(levels < 0):
            raise ConfigError("cluster consumption must be nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "levels", levels)

    @property
    def n_clusters(self) -> int:
        return self.levels.shape[1]

    def at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return self.levels[max(k, 0)]

    def mean(self, horizon: float) -> np.ndarray:
        """Time-weighted mean consumption per cluster over ``[times[0], horizon]``."""
        edges = np.append(self.times, max(horizon, self.times[-1]))
        widths = np.clip(np.minimum(edges[1:], horizon) - edges[:-1], 0.0, None)
        if widths.sum() <= 0:
            return self.levels[0].copy()
        return (self.levels * widths[:, None]).sum(axis=0) / widths.sum()


def synth_workload(seed: int, horizon: float, dt: float, params: dict) -> WorkloadTrace:
    """Piecewise-constant utilization bursts scaled by the cluster nameplate.

    ``params`` keys: ``n_clusters``, ``nameplate_pu``, ``low``, ``high``,
    ``dwell_min_s``, ``dwell_max_s`` and optionally ``quantum_s`` (grid that
    change times snap to, default 10 ms, independent of ``dt`` so that refining
    the time step leaves the trace unchanged).
    """
    low = float(params.get("low", 0.5))
    high = float(params.get("high", low))
    dmin = float(params.get("dwell_min_s", 0.1))
    dmax = float(params.get("dwell_max_s", dmin))
    quantum = float(params.get("quantum_s", 0.01))
    n_clusters = int(params.get("n_clusters", 1))
    nameplate = float(params.get("nameplate_pu", 1.0))
    if not (0.0 <= low <= high <= 1.0):
        raise ConfigError("utilization bounds must satisfy 0 <= low <= high <= 1")
    if not (0.0 < dmin <= dmax):
        raise ConfigError("dwell-time bounds must satisfy 0 < min <= max")
    if horizon <= 0 or dt <= 0 or quantum <= 0 or n_clusters < 1 or nameplate < 0:
        raise ConfigError("horizon, dt, quantum, n_clusters and nameplate must be positive")

    rng = np.random.default_rng(seed)
    grid = set()
    per_cluster = []
    for _ in range(n_clusters):
        t = 0.0
        changes = []
        while t < horizon:
            changes.append((round(t / quantum) * quantum, rng.uniform(low, high)))
            t += rng.uniform(dmin, dmax)
        per_cluster.append(changes)
        grid.update(c[0] for c in changes)

    times = np.array(sorted(grid))
    levels = np.empty((times.size, n_clusters))
    for j, changes in enumerate(per_cluster):
        ct = np.array([c[0] for c in changes])
        cv = np.array([c[1] for c in changes])
        idx = np.searchsorted(ct, times + 1e-12, side="right") - 1
        levels[:, j] = cv[idx]
    return WorkloadTrace(times, levels * nameplate)


def constant_workload(consumption) -> WorkloadTrace:
    consumption = np.atleast_1d(np.asarray(consumption, dtype=float))
    return WorkloadTrace(np.array([0.0]), consumption[None, :])


def load_workload_csv(path, s_base_mva: float = 100.0) -> WorkloadTrace:
    """Read ``time_s,cluster_1,...`` rows of cluster consumption in MW."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ConfigError(f"{path}: expected header 'time_s,cluster_1,...'")
        rows = [r for r in reader if r]
    try:
        data = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed workload row ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: ragged workload rows")
    return WorkloadTrace(data[:, 0], data[:, 1:] / s_base_mva)
