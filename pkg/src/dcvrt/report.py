"""Performance metrics, delay sweeps and CSV artifacts.

Conventions written into every metrics file:

* voltage deviations are ``|v_i - 1|`` over internal nodes only (the PCC is
  excluded) and over records before the facility tripped;
* control effort is the time average of ``sum_i |u_i - u_i^nom|`` converted to
  MW / MVAr with the scenario base, where ``u^nom`` is the uncontrolled
  injection the workload would have drawn.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dcvrt.errors import ConfigError, DcvrtError
from dcvrt.scenario import Scenario, with_overrides
from dcvrt.sim import SimResult, run

METRICS_HEADER = ["scheme", "largest_dev_pu", "mean_dev_pu", "avg_p_effort_mw", "avg_q_effort_mvar",
                  "tripped", "trip_time_s"]
METRICS_NOTE = ("# deviations: |v_i-1| over internal nodes before trip; "
                "effort: time-mean of sum_i |u_i - u_i_nominal| in MW/MVAr")
WORKERS_ENV = "DCVRT_WORKERS"


@dataclass(frozen=True)
class Metrics:
    largest_voltage_deviation: float
    mean_voltage_deviation: float
    avg_real_effort: float
    avg_reactive_effort: float
    tripped: bool
    trip_time: Optional[float] = None

    def row(self, scheme: str) -> list:
        return [scheme, f"{self.largest_voltage_deviation:.6f}", f"{self.mean_voltage_deviation:.6f}",
                f"{self.avg_real_effort:.6f}", f"{self.avg_reactive_effort:.6f}", str(self.tripped).lower(),
                "" if self.trip_time is None else f"{self.trip_time:.4f}"]


def compute_metrics(result: SimResult, nominal=None, s_base_mva: Optional[float] = None) -> Metrics:
    """Deviation and effort metrics of one run.

    ``nominal`` is an optional ``(p_nom, q_nom)`` pair of arrays shaped like
    ``result.p``; it defaults to the nominal trajectory stored in the result.
    """
    if len(result) == 0:
        raise ConfigError("cannot compute metrics of an empty result")
    s_base = result.s_base_mva if s_base_mva is None else s_base_mva
    p_nom, q_nom = (result.p_nom, result.q_nom) if nominal is None else nominal
    live = ~np.asarray(result.tripped, dtype=bool)
    if not live.any():
        live = np.zeros(len(result), dtype=bool)
        live[0] = True
    dev = np.abs(result.v[live] - 1.0)
    p_eff = np.abs(result.p[live] - np.asarray(p_nom)[live]).sum(axis=1)
    q_eff = np.abs(result.q[live] - np.asarray(q_nom)[live]).sum(axis=1)
    return Metrics(
        largest_voltage_deviation=float(dev.max()),
        mean_voltage_deviation=float(dev.mean()),
        avg_real_effort=float(p_eff.mean() * s_base),
        avg_reactive_effort=float(q_eff.mean() * s_base),
        tripped=bool(result.status == "tripped"),
        trip_time=result.trip_time,
    )


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv(rows: Sequence) -> str:
    """``rows`` holds ``(scheme, Metrics)`` pairs."""
    buf = io.StringIO()
    buf.write(METRICS_NOTE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for scheme, m in rows:
        w.writerow(m.row(scheme))
    return buf.getvalue()


def write_metrics_csv(path, rows: Sequence) -> None:
    _atomic_write(path, metrics_csv(rows))


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def trajectory_csv(result: SimResult) -> str:
    n = result.v.shape[1] if result.v.ndim == 2 else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "v0", "tripped"] + [f"v_{i}" for i in range(1, n + 1)] + [f"p_{i}" for i in range(1, n + 1)]
               + [f"q_{i}" for i in range(1, n + 1)] + ["p_dc", "q_dc"])
    fmt = lambda a: [f"{x:.9g}" for x in a]
    for k in range(len(result)):
        w.writerow([f"{result.t[k]:.6f}", f"{result.v0[k]:.9g}", int(result.tripped[k])] + fmt(result.v[k])
                   + fmt(result.p[k]) + fmt(result.q[k]) + [f"{result.p_dc[k]:.9g}", f"{result.q_dc[k]:.9g}"])
    return buf.getvalue()


def write_trajectory_csv(path, result: SimResult) -> None:
    _atomic_write(path, trajectory_csv(result))


def write_json(path, data) -> None:
    _atomic_write(path, json.dumps(data, indent=2, sort_keys=False) + "\n")


def _run_metrics(scenario: Scenario) -> Metrics:
    return compute_metrics(run(scenario))


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_many(scenarios: Sequence[Scenario], workers: Optional[int] = None) -> list:
    """Run scenarios and return their metrics in input order; a failing row yields its exception."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(scenarios) <= 1:
        out = []
        for sc in scenarios:
            try:
                out.append(_run_metrics(sc))
            except DcvrtError as exc:
                out.append(exc)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_metrics, sc) for sc in scenarios]
        out = []
        for fut in futures:
            try:
                out.append(fut.result())
            except DcvrtError as exc:
                out.append(exc)
        return out


def delay_sweep(base: Scenario, delays: Sequence[float], workers: Optional[int] = None) -> list:
    """One centralized run per delay on the same seed; returns ``(label, Metrics)`` rows."""
    if base.controller.kind != "centralized":
        raise ConfigError("delay sweep needs a centralized controller")
    scenarios = [with_overrides(base, delay=d) for d in delays]
    rows = []
    for d, m in zip(delays, run_many(scenarios, workers)):
        if isinstance(m, Exception):
            raise m
        rows.append((f"centralized_delay_{d * 1000:g}ms", m))
    return rows
