import json

import numpy as np
import pytest

from conftest import small_document

from dcvrt.errors import ConfigError, TopologyError
from dcvrt.scenario import (
    BUILTIN_SCENARIOS,
    MANIFEST_KIND,
    gains_from_dict,
    gains_to_dict,
    load_scenario,
    weights_from_dict,
    with_overrides,
)


@pytest.mark.parametrize("name", BUILTIN_SCENARIOS)
def test_builtins_load(name):
    sc = load_scenario(name)
    assert sc.name == name
    assert sc.n == 28
    assert sc.sensitivity().uniform_ratio == pytest.approx(0.1)


def test_builtin_presets():
    assert load_scenario("baseline-nocontrol").controller.kind == "none"
    c = load_scenario("centralized-50ms").controller
    assert (c.kind, c.delay_s, c.period_s) == ("centralized", 0.05, 0.05)
    assert load_scenario("centralized-200ms").controller.delay_s == 0.2
    d = load_scenario("decentralized-5ms").controller
    assert (d.kind, d.delay_s, d.period_s) == ("decentralized", 0.0, 0.005)
    assert load_scenario("decentralized-voltvar").controller.reactive_only


def test_controller_switch_takes_preset_timing():
    sc = load_scenario("centralized-200ms", controller="decentralized")
    assert (sc.controller.delay_s, sc.controller.period_s) == (0.0, 0.005)
    sc = load_scenario("decentralized-5ms", controller="centralized", delay=0.1)
    assert (sc.controller.delay_s, sc.controller.period_s) == (0.1, 0.05)


def test_extends_relative_file(tmp_path):
    (tmp_path / "base.json").write_text(json.dumps(small_document()))
    (tmp_path / "child.json").write_text(json.dumps({"extends": "base.json", "name": "child",
                                                     "sim": {"horizon": 0.2}}))
    sc = load_scenario(tmp_path / "child.json")
    assert sc.name == "child" and sc.horizon == 0.2 and sc.dt == 0.001 and sc.n == 4


def test_extends_cycle_is_rejected(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"extends": "b.json"}))
    (tmp_path / "b.json").write_text(json.dumps({"extends": "a.json"}))
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "a.json")


def test_manifest_unwrap():
    doc = small_document(name="wrapped")
    sc = load_scenario({"kind": MANIFEST_KIND, "scenario": doc, "seed": 7})
    assert sc.name == "wrapped"
    with pytest.raises(ConfigError):
        load_scenario({"kind": MANIFEST_KIND})


def test_overrides():
    sc = load_scenario(small_document(), dt=0.0005, seed=3, controller="centralized", reactive_only=True,
                       curve="iti-cbema", horizon=0.1)
    assert sc.dt == 0.0005 and sc.seed == 3 and sc.workload["seed"] == 3
    assert sc.controller.kind == "centralized" and sc.controller.reactive_only
    assert sc.curve.name.lower().startswith("iti")
    assert sc.period_steps == 20
    assert with_overrides(sc, delay=0.07).controller.delay_s == 0.07


def test_to_document_reloads_identically():
    sc = load_scenario("decentralized-5ms")
    again = load_scenario(sc.to_document())
    assert again.document == sc.document


@pytest.mark.parametrize("patch", [
    {"controller": {"type": "fuzzy"}},
    {"controller": {"type": "centralized", "period_s": 0.0015}},
    {"controller": {"type": "centralized", "delay_s": -1}},
    {"sim": {"dt": 0.0}},
    {"devices": [{"name": "x", "node": "nowhere", "type": "bess", "nameplate_mva": 1}]},
    {"devices": [{"name": "x", "node": "bess", "type": "reactor", "nameplate_mva": 1}]},
    {"devices": [{"name": "x", "node": "bess", "type": "bess", "nameplate_mva": 1},
                 {"name": "x", "node": "cluster", "type": "bess", "nameplate_mva": 1}]},
    {"network": {"lines": [{"from": "pcc", "to": "a", "r": 0.1}]}},
    {"controller": {"gains": {"k_q": {"nowhere": 1.0}}}},
    {"controller": {"gains": {"k_q": {"bess": -1.0}}}},
    {"vrt": {"curve": "no-such-curve"}},
])
def test_invalid_documents(patch):
    with pytest.raises(ConfigError):
        load_scenario(small_document(**patch))


def test_topology_errors_surface():
    bad = {"lines": [{"from": "pcc", "to": "a", "r": 0.1, "x": 0.1}, {"from": "zz", "to": "b", "r": 0.1, "x": 0.1}]}
    with pytest.raises(TopologyError):
        load_scenario(small_document(network=bad, devices=[]))


def test_unknown_reference(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario("no-such-scenario")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "broken.json")


def test_weights_by_kind_and_name():
    sc = load_scenario(small_document())
    w = weights_from_dict({"q_v": 2.0, "w_p": {"cluster": 3.0, "cooling": 4.0}, "w_q": {"bess": 0.5}}, sc)
    i = {n: sc.topology.index(n) for n in ("mv", "bess", "cluster", "cooling")}
    assert np.all(np.diag(w.Q_v) == 2.0)
    assert w.W_p[i["cluster"], i["cluster"]] == 3.0 and w.W_p[i["mv"], i["mv"]] == 0.0
    assert w.W_q[i["bess"], i["bess"]] == 0.5


def test_gains_round_trip():
    sc = load_scenario(small_document())
    g = sc.gain_schedule()
    back = gains_from_dict(json.loads(json.dumps(gains_to_dict(g, sc.topology))), sc.topology)
    assert np.array_equal(back.k_p, g.k_p) and np.array_equal(back.k_q, g.k_q) and back.v_ref == g.v_ref


def test_fleet_envelopes():
    sc = load_scenario(small_document())
    fleet = sc.fleet(sc.build_workload())
    p, q = fleet.nominal(0.0)
    i = {n: sc.topology.index(n) for n in ("mv", "bess", "cluster", "cooling")}
    assert p[i["cluster"]] == pytest.approx(-0.1) and p[i["cooling"]] == pytest.approx(-0.1)
    assert p[i["bess"]] == 0.0 and np.all(q == 0)
    b = fleet.bounds(0.0)
    assert (b.p_min[i["cluster"]], b.p_max[i["cluster"]]) == pytest.approx((-0.12, -0.08))
    assert (b.q_min[i["cluster"]], b.q_max[i["cluster"]]) == (0.0, 0.0)
    assert (b.p_min[i["bess"]], b.q_max[i["bess"]]) == pytest.approx((-0.2, 0.2))
    assert b.p_min[i["mv"]] == b.p_max[i["mv"]] == 0.0
    vv = load_scenario(small_document(), reactive_only=True)
    bv = vv.fleet(vv.build_workload()).bounds(0.0)
    assert np.array_equal(bv.p_min, bv.p_max)
