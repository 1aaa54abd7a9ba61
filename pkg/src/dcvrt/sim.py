"""Co-simulation of the external grid and the data-center network.

Each step ``t -> t + dt`` runs, in order:

1. the grid consumes the previous aggregate injection and pending events, emitting v0;
2. nodal voltages from the currently effective injections;
3. the trip supervisor checks v0 (a trip zeroes all injections for good);
4. at controller update instants the controller measures and issues an action;
5. matured actions take effect;
6. the workload advances nominal loads and bounds.

Actions travel through the delay line as deviations from the nominal
injection at issue time, so a load that is curtailed keeps following its
workload while the curtailment is in force.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dcvrt.control import (
    ControlAction,
    DelayLine,
    centralized_step,
    decentralized_step,
    delay_apply,
)
from dcvrt.distflow import SensitivityMatrices
from dcvrt.errors import VoltageCollapse
from dcvrt.scenario import Scenario
from dcvrt.vrt import TripSupervisor, update_trip

log = logging.getLogger(__name__)

COMPLETED = "completed"
TRIPPED = "tripped"
VOLTAGE_COLLAPSE = "voltage_collapse"


@dataclass(frozen=True)
class TrajectoryRecord:
    t: float
    v0: float
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_dc: float
    q_dc: float
    tripped: bool


@dataclass
class SimResult:
    """Per-step trajectory stored column-wise; ``records`` gives the row view."""

    t: np.ndarray
    v0: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_dc: np.ndarray
    q_dc: np.ndarray
    tripped: np.ndarray
    p_nom: np.ndarray
    q_nom: np.ndarray
    status: str
    trip_time: Optional[float] = None
    nodes: tuple = ()
    s_base_mva: float = 100.0
    scenario_name: str = ""
    dt: float = 0.0
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def records(self) -> list:
        return [
            TrajectoryRecord(float(self.t[k]), float(self.v0[k]), self.v[k], self.p[k], self.q[k],
                             float(self.p_dc[k]), float(self.q_dc[k]), bool(self.tripped[k]))
            for k in range(len(self))
        ]

    def prefix(self, k: int) -> "SimResult":
        """The first ``k`` records as a result of their own."""
        cut = lambda a: a[:k]
        return SimResult(cut(self.t), cut(self.v0), cut(self.v), cut(self.p), cut(self.q), cut(self.p_dc),
                         cut(self.q_dc), cut(self.tripped), cut(self.p_nom), cut(self.q_nom), self.status,
                         self.trip_time, self.nodes, self.s_base_mva, self.scenario_name, self.dt, dict(self.info))


def aggregate_injection(p, q) -> tuple:
    """Lossless aggregation of nodal injections at the PCC."""
    return float(np.sum(p)), float(np.sum(q))


class _Controller:
    """Wraps a centralized or decentralized law behind one ``issue`` call."""

    def __init__(self, scenario: Scenario, S: SensitivityMatrices):
        cfg = scenario.controller
        self.kind = cfg.kind
        self.S = S
        self.weights = scenario.weights() if cfg.kind == "centralized" else None
        self.gains = scenario.gain_schedule() if cfg.kind == "decentralized" else None
        self.state = None  # decentralized: last deviation from nominal

    def issue(self, t, v0, v, p_nom, q_nom, bounds) -> ControlAction:
        if self.kind == "centralized":
            act = centralized_step(self.S, v0, 1.0, bounds, self.weights, p_ref=p_nom, q_ref=q_nom, t=t)
        else:
            gains = self.gains.masked(bounds)
            dp, dq = self.state if self.state is not None else (np.zeros_like(p_nom), np.zeros_like(q_nom))
            prev = ControlAction(*bounds.clip(p_nom + dp, q_nom + dq), issued_at=t)
            act = decentralized_step(gains, prev, v, bounds, t=t)
        dev = ControlAction(act.p - p_nom, act.q - q_nom, issued_at=t)
        if self.kind == "decentralized":
            self.state = (dev.p, dev.q)
        return dev


def run(scenario: Scenario, workload=None) -> SimResult:
    """Simulate ``scenario`` over its horizon and return the trajectory."""
    S = scenario.sensitivity()
    dt = scenario.dt
    n_steps = int(round(scenario.horizon / dt))
    workload = scenario.build_workload() if workload is None else workload
    fleet = scenario.fleet(workload)
    grid = scenario.build_grid()
    supervisor = TripSupervisor(scenario.curve)
    ctl_kind = scenario.controller.kind
    controller = _Controller(scenario, S) if ctl_kind != "none" else None
    period = scenario.period_steps if controller else 0
    n = scenario.n

    zeros = np.zeros(n)
    line = DelayLine(scenario.controller.delay_s if controller else 0.0, ControlAction(zeros, zeros))

    size = n_steps + 1
    T = np.empty(size)
    V0 = np.empty(size)
    V = np.empty((size, n))
    P = np.empty((size, n))
    Q = np.empty((size, n))
    PDC = np.empty(size)
    QDC = np.empty(size)
    TRIP = np.zeros(size, dtype=bool)
    PNOM = np.empty((size, n))
    QNOM = np.empty((size, n))

    p_nom, q_nom = fleet.nominal(0.0)
    bounds = fleet.bounds(0.0, p_nom)
    p_eff, q_eff = bounds.clip(p_nom, q_nom)
    status = COMPLETED
    tripped = False
    k_last = size

    for k in range(size):
        t = k * dt
        p_dc, q_dc = aggregate_injection(p_eff, q_eff)
        # (1) grid
        try:
            if k == 0:
                v0 = grid.initial_voltage(-p_dc, -q_dc)
            else:
                v0 = grid.step((k - 1) * dt, dt, -PDC[k - 1], -QDC[k - 1])
        except VoltageCollapse as exc:
            log.warning("voltage collapse at t=%.4f s: %s", t, exc)
            status = VOLTAGE_COLLAPSE
            k_last = k
            break
        # (2) network
        v = S.R @ p_eff + S.X @ q_eff + v0
        T[k], V0[k], V[k], P[k], Q[k] = t, v0, v, p_eff, q_eff
        PDC[k], QDC[k] = p_dc, q_dc
        PNOM[k], QNOM[k] = p_nom, q_nom
        TRIP[k] = tripped
        # (3) protection
        if not tripped and k > 0 and update_trip(supervisor, v0, dt, t=t):
            tripped = True
            log.info("facility tripped at t=%.4f s (v0=%.4f)", t, v0)
            # the trip record already shows the disconnected facility
            TRIP[k] = True
            V[k], P[k], Q[k] = v0, 0.0, 0.0
            PDC[k] = QDC[k] = 0.0
        if tripped:
            p_eff = q_eff = zeros
            continue
        # (4) controller
        if controller is not None and k % period == 0:
            line.push(controller.issue(t, v0, v, p_nom, q_nom, bounds))
        # (5) matured actions
        act = delay_apply(line, t)
        # (6) workload
        if k + 1 < size:
            p_nom, q_nom = fleet.nominal((k + 1) * dt)
            bounds = fleet.bounds((k + 1) * dt, p_nom)
        p_eff, q_eff = bounds.clip(p_nom + act.p, q_nom + act.q)

    cut = slice(0, k_last)
    if status != VOLTAGE_COLLAPSE and tripped:
        status = TRIPPED
    return SimResult(
        t=T[cut], v0=V0[cut], v=V[cut], p=P[cut], q=Q[cut], p_dc=PDC[cut], q_dc=QDC[cut],
        tripped=TRIP[cut], p_nom=PNOM[cut], q_nom=QNOM[cut], status=status,
        trip_time=supervisor.trip_time, nodes=scenario.topology.nodes, s_base_mva=scenario.s_base_mva,
        scenario_name=scenario.name, dt=dt,
        info={"capacity_factor": fleet.capacity_factor, "controller": ctl_kind},
    )
