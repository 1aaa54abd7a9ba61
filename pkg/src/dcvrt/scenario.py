"""Scenario files: parsing, validation, overrides and the device fleet.

A scenario is a JSON document with sections ``network``, ``devices``,
``grid``, ``controller``, ``vrt``, ``workload`` and ``sim``. A document may
name another scenario under ``extends``; its sections are deep-merged on top
of that base. Built-in scenarios live in ``dcvrt/data/scenarios``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from dcvrt.control import ControlBounds, CostWeights, GainSchedule, voltvar_restrict
from dcvrt.distflow import NetworkTopology, SensitivityMatrices, build_sensitivity
from dcvrt.errors import ConfigError
from dcvrt.extgrid import GridEvent, TheveninGrid, TheveninState, TraceGrid, load_trace_csv
from dcvrt.vrt import VrtCurve, load_curve
from dcvrt.workload import WorkloadTrace, constant_workload, load_workload_csv, synth_workload

DEFAULT_SEED = 20240701
MANIFEST_KIND = "dcvrt-run-manifest"
DEVICE_TYPES = ("bess", "ups", "cluster", "cooling")
CONTROLLER_TYPES = ("none", "centralized", "decentralized")
BUILTIN_SCENARIOS = (
    "default",
    "baseline-nocontrol",
    "centralized-50ms",
    "decentralized-5ms",
    "centralized-voltvar",
    "decentralized-voltvar",
    "centralized-200ms",
)


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _read_builtin(name: str) -> Optional[str]:
    stem = name[:-5] if name.endswith(".json") else name
    res = resources.files("dcvrt.data.scenarios").joinpath(f"{stem}.json")
    return res.read_text() if res.is_file() else None


def resolve_document(ref, _depth: int = 0) -> tuple:
    """Return ``(document, base_dir)`` with every ``extends`` chain merged in."""
    if _depth > 8:
        raise ConfigError("scenario 'extends' chain too deep")
    if isinstance(ref, dict):
        doc, base_dir = copy.deepcopy(ref), Path.cwd()
    else:
        path = Path(ref)
        if path.is_file():
            text, base_dir = path.read_text(), path.parent
        else:
            text = _read_builtin(path.name if path.suffix == ".json" else str(ref))
            if text is None:
                raise ConfigError(f"scenario {ref!r} not found")
            base_dir = None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario {ref!r}: invalid JSON ({exc})") from None
    if doc.get("kind") == MANIFEST_KIND:
        doc = doc.get("scenario")
        if not isinstance(doc, dict):
            raise ConfigError(f"run manifest {ref!r} has no scenario section")
    parent = doc.pop("extends", None)
    if parent is not None:
        parent_ref = parent
        if base_dir is not None and (base_dir / parent).is_file():
            parent_ref = base_dir / parent
        base, _ = resolve_document(parent_ref, _depth + 1)
        doc = _deep_merge(base, doc)
    return doc, base_dir


@dataclass(frozen=True)
class Device:
    name: str
    node: str
    kind: str
    nameplate_mva: float
    p_range_mw: tuple = (0.0, 0.0)
    q_range_mvar: tuple = (0.0, 0.0)
    flex_fraction: float = 0.0


@dataclass
class ControllerConfig:
    kind: str = "none"
    reactive_only: bool = False
    delay_s: float = 0.0
    period_s: float = 0.001
    q_v: float = 1.0
    w_p: dict = field(default_factory=dict)
    w_q: dict = field(default_factory=dict)
    gains: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    s_base_mva: float
    topology: NetworkTopology
    devices: list
    grid: dict
    controller: ControllerConfig
    curve: VrtCurve
    workload: dict
    dt: float
    horizon: float
    seed: int
    document: dict
    base_dir: Optional[Path] = None

    # -- derived quantities ------------------------------------------------

    @property
    def n(self) -> int:
        return self.topology.n

    def sensitivity(self) -> SensitivityMatrices:
        return build_sensitivity(self.topology)

    @property
    def period_steps(self) -> int:
        return int(round(self.controller.period_s / self.dt))

    def devices_of(self, kind: str) -> list:
        return [d for d in self.devices if d.kind == kind]

    def _path(self, p) -> Path:
        p = Path(p)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    def build_workload(self) -> WorkloadTrace:
        cfg = self.workload
        clusters = self.devices_of("cluster")
        source = cfg.get("source", "synthetic")
        if source == "synthetic":
            nameplate = clusters[0].nameplate_mva / self.s_base_mva if clusters else 0.0
            params = dict(cfg)
            params.setdefault("n_clusters", max(len(clusters), 1))
            params.setdefault("nameplate_pu", nameplate)
            return synth_workload(cfg.get("seed", self.seed), self.horizon, self.dt, params)
        if source == "constant":
            util = float(cfg.get("utilization", 0.5))
            return constant_workload([util * d.nameplate_mva / self.s_base_mva for d in clusters])
        if source == "csv":
            trace = load_workload_csv(self._path(cfg["path"]), self.s_base_mva)
            if trace.n_clusters != len(clusters):
                raise ConfigError(f"workload CSV has {trace.n_clusters} clusters, scenario has {len(clusters)}")
            return trace
        raise ConfigError(f"unknown workload source {source!r}")

    def build_grid(self):
        cfg = self.grid
        model = cfg.get("model", "thevenin")
        if model == "thevenin":
            E = float(cfg["E"])
            state = TheveninState(E=E, E_set=float(cfg.get("E_set", E)), X_th=float(cfg["X_th"]),
                                  tau=float(cfg.get("tau", 1.0)))
            events = [GridEvent(float(e["time"]), e["kind"], float(e["value"])) for e in cfg.get("events", [])]
            return TheveninGrid(state, events)
        if model == "trace":
            return TraceGrid(load_trace_csv(self._path(cfg["path"])))
        raise ConfigError(f"unknown grid model {model!r}")

    def fleet(self, workload: WorkloadTrace) -> "Fleet":
        return Fleet(self, workload)

    def weights(self) -> CostWeights:
        c = self.controller
        return weights_from_dict({"q_v": c.q_v, "w_p": c.w_p, "w_q": c.w_q}, self)

    def gain_schedule(self) -> GainSchedule:
        return gains_from_dict(self.controller.gains, self.topology)

    def to_document(self) -> dict:
        """The resolved configuration with file references made absolute, suitable for re-loading."""
        doc = copy.deepcopy(self.document)
        for section, key in (("workload", "path"), ("grid", "path"), ("vrt", "curve")):
            ref = doc.get(section, {}).get(key)
            if isinstance(ref, str) and self._path(ref).is_file():
                doc[section][key] = str(self._path(ref).resolve())
        return doc


def weights_from_dict(data: dict, scenario: Scenario) -> CostWeights:
    """Diagonal weights from ``{"q_v": .., "w_p": {name or kind: ..}, "w_q": {..}}``."""
    qv = np.full(scenario.n, float(data.get("q_v", 1.0)))
    wp = np.zeros(scenario.n)
    wq = np.zeros(scenario.n)
    w_p, w_q = data.get("w_p", {}) or {}, data.get("w_q", {}) or {}
    for d in scenario.devices:
        i = scenario.topology.index(d.node)
        wp[i] += float(w_p.get(d.name, w_p.get(d.kind, 0.0)))
        wq[i] += float(w_q.get(d.name, w_q.get(d.kind, 0.0)))
    return CostWeights(np.diag(qv), np.diag(wq), np.diag(wp))


def gains_from_dict(data: dict, topology: NetworkTopology) -> GainSchedule:
    kp = np.zeros(topology.n)
    kq = np.zeros(topology.n)
    for key, arr in (("k_p", kp), ("k_q", kq)):
        for node, val in (data.get(key) or {}).items():
            arr[topology.index(node)] = float(val)
    return GainSchedule(kp, kq, float(data.get("v_ref", 1.0)))


def gains_to_dict(gains: GainSchedule, topology: NetworkTopology) -> dict:
    return {
        "v_ref": gains.v_ref,
        "k_p": {node: float(k) for node, k in zip(topology.nodes, gains.k_p) if k != 0},
        "k_q": {node: float(k) for node, k in zip(topology.nodes, gains.k_q) if k != 0},
    }


class Fleet:
    """Time-varying nominal injections and control envelopes of every node."""

    def __init__(self, scenario: Scenario, workload: WorkloadTrace):
        self.scenario = scenario
        self.workload = workload
        n = scenario.n
        base = scenario.s_base_mva
        self.cluster_idx = np.array([scenario.topology.index(d.node) for d in scenario.devices_of("cluster")], dtype=int)
        self.cluster_flex = np.array([d.flex_fraction for d in scenario.devices_of("cluster")])
        self.fixed_p = np.zeros(n)
        self.flex = np.zeros(n)
        self.storage_p = np.zeros((2, n))
        self.storage_q = np.zeros((2, n))
        util = 0.0
        if self.cluster_idx.size:
            namep = np.array([d.nameplate_mva / base for d in scenario.devices_of("cluster")])
            util = float(np.mean(workload.mean(scenario.horizon) / np.where(namep > 0, namep, 1.0)))
        self.capacity_factor = util
        for d in scenario.devices:
            i = scenario.topology.index(d.node)
            if d.kind in ("bess", "ups"):
                self.storage_p[:, i] += np.array(d.p_range_mw) / base
                self.storage_q[:, i] += np.array(d.q_range_mvar) / base
            elif d.kind == "cooling":
                self.fixed_p[i] -= util * d.nameplate_mva / base
                self.flex[i] = d.flex_fraction
        self.reactive_only = scenario.controller.reactive_only

    def nominal(self, t: float) -> tuple:
        p = self.fixed_p.copy()
        if self.cluster_idx.size:
            np.add.at(p, self.cluster_idx, -self.workload.at(t))
        return p, np.zeros_like(p)

    def bounds(self, t: float, p_nom=None) -> ControlBounds:
        if p_nom is None:
            p_nom, _ = self.nominal(t)
        flex = self.flex.copy()
        if self.cluster_idx.size:
            flex[self.cluster_idx] = self.cluster_flex
        swing = np.abs(p_nom) * flex
        p_min = p_nom - swing + self.storage_p[0]
        p_max = p_nom + swing + self.storage_p[1]
        b = ControlBounds(p_min, p_max, self.storage_q[0], self.storage_q[1])
        if self.reactive_only:
            b = voltvar_restrict(b, p_nom)
        return b


def _parse_network(doc: dict) -> NetworkTopology:
    net = doc.get("network")
    if not isinstance(net, dict) or "lines" not in net:
        raise ConfigError("scenario needs a 'network' section with 'lines'")
    try:
        lines = [(ln["from"], ln["to"], ln["r"], ln["x"]) for ln in net["lines"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed network line: {exc}") from None
    return NetworkTopology.from_lines(lines, root=net.get("root", "pcc"))


def _parse_devices(doc: dict, topo: NetworkTopology) -> list:
    out = []
    for raw in doc.get("devices", []):
        try:
            kind = raw["type"]
            if kind not in DEVICE_TYPES:
                raise ConfigError(f"unknown device type {kind!r}")
            dev = Device(
                name=str(raw["name"]),
                node=str(raw["node"]),
                kind=kind,
                nameplate_mva=float(raw["nameplate_mva"]),
                p_range_mw=tuple(float(v) for v in raw.get("p_range_mw", (0.0, 0.0))),
                q_range_mvar=tuple(float(v) for v in raw.get("q_range_mvar", (0.0, 0.0))),
                flex_fraction=float(raw.get("flex_fraction", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed device entry {raw!r}: {exc}") from None
        topo.index(dev.node)
        if dev.p_range_mw[0] > dev.p_range_mw[1] or dev.q_range_mvar[0] > dev.q_range_mvar[1]:
            raise ConfigError(f"device {dev.name}: range min exceeds max")
        if not 0.0 <= dev.flex_fraction <= 1.0:
            raise ConfigError(f"device {dev.name}: flex_fraction must lie in [0, 1]")
        out.append(dev)
    if len({d.name for d in out}) != len(out):
        raise ConfigError("device names must be unique")
    return out


def _parse_controller(doc: dict) -> ControllerConfig:
    raw = doc.get("controller", {}) or {}
    kind = raw.get("type", "none")
    if kind not in CONTROLLER_TYPES:
        raise ConfigError(f"unknown controller type {kind!r}")
    # per-kind presets (``controller.centralized`` etc.) fill in timing the top level leaves open
    preset = raw.get(kind, {}) if isinstance(raw.get(kind), dict) else {}
    pick = lambda key, default: raw.get(key, preset.get(key, default))
    w = raw.get("weights", {}) or {}
    return ControllerConfig(
        kind=kind,
        reactive_only=bool(raw.get("reactive_only", False)),
        delay_s=float(pick("delay_s", 0.0)),
        period_s=float(pick("period_s", doc.get("sim", {}).get("dt", 0.001))),
        q_v=float(w.get("q_v", 1.0)),
        w_p=dict(w.get("w_p", {})),
        w_q=dict(w.get("w_q", {})),
        gains=dict(raw.get("gains", {}) or {}),
    )


def scenario_from_document(doc: dict, base_dir: Optional[Path] = None) -> Scenario:
    topo = _parse_network(doc)
    devices = _parse_devices(doc, topo)
    controller = _parse_controller(doc)
    sim = doc.get("sim", {}) or {}
    dt = float(sim.get("dt", 0.001))
    horizon = float(sim.get("horizon", 10.0))
    seed = int(sim.get("seed", DEFAULT_SEED))
    if not dt > 0 or not horizon > 0:
        raise ConfigError("sim.dt and sim.horizon must be > 0")
    if controller.kind != "none":
        ratio = controller.period_s / dt
        if controller.period_s <= 0 or abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ConfigError("controller period must be a positive integer multiple of dt")
        if controller.delay_s < 0:
            raise ConfigError("controller delay must be >= 0")
    vrt = doc.get("vrt", {}) or {}
    curve_ref = vrt.get("curve", "iec62040-3")
    if isinstance(curve_ref, str) and base_dir is not None and (base_dir / curve_ref).is_file():
        curve_ref = base_dir / curve_ref
    sc = Scenario(
        name=str(doc.get("name", "scenario")),
        s_base_mva=float(doc.get("s_base_mva", 100.0)),
        topology=topo,
        devices=devices,
        grid=dict(doc.get("grid", {}) or {}),
        controller=controller,
        curve=load_curve(curve_ref),
        workload=dict(doc.get("workload", {}) or {}),
        dt=dt,
        horizon=horizon,
        seed=seed,
        document=doc,
        base_dir=base_dir,
    )
    if sc.s_base_mva <= 0:
        raise ConfigError("s_base_mva must be > 0")
    gains_from_dict(controller.gains, topo)
    return sc


def load_scenario(ref, **overrides) -> Scenario:
    """Load a scenario by path, built-in name or dict, then apply :func:`with_overrides`."""
    doc, base_dir = resolve_document(ref)
    sc = scenario_from_document(doc, base_dir)
    return with_overrides(sc, **overrides) if overrides else sc


def with_overrides(sc: Scenario, dt=None, seed=None, controller=None, delay=None, curve=None,
                   horizon=None, reactive_only=None, period=None) -> Scenario:
    """Return a new scenario with the CLI-level overrides applied."""
    doc = copy.deepcopy(sc.document)
    sim = doc.setdefault("sim", {})
    ctl = doc.setdefault("controller", {})
    if dt is not None:
        sim["dt"] = float(dt)
    if horizon is not None:
        sim["horizon"] = float(horizon)
    if seed is not None:
        sim["seed"] = int(seed)
        doc.setdefault("workload", {})["seed"] = int(seed)
    if controller is not None:
        if controller not in CONTROLLER_TYPES:
            raise ConfigError(f"unknown controller type {controller!r}")
        if controller != ctl.get("type", "none"):
            ctl.pop("delay_s", None)
            ctl.pop("period_s", None)
        ctl["type"] = controller
    if delay is not None:
        ctl["delay_s"] = float(delay)
    if period is not None:
        ctl["period_s"] = float(period)
    if reactive_only is not None:
        ctl["reactive_only"] = bool(reactive_only)
    if curve is not None:
        doc.setdefault("vrt", {})["curve"] = str(curve)
    return scenario_from_document(doc, sc.base_dir)
