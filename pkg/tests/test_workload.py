import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcvrt.errors import ConfigError
from dcvrt.sim import aggregate_injection
from dcvrt.workload import WorkloadTrace, constant_workload, load_workload_csv, synth_workload

BASE = {"n_clusters": 4, "nameplate_pu": 0.2, "dwell_min_s": 0.05, "dwell_max_s": 0.5}


def test_constant_utilization():
    w = synth_workload(1, 5.0, 0.001, {**BASE, "low": 0.5, "high": 0.5})
    assert np.all(w.levels == 0.1)


def test_same_seed_identical():
    a = synth_workload(7, 5.0, 0.001, {**BASE, "low": 0.2, "high": 0.9})
    b = synth_workload(7, 5.0, 0.001, {**BASE, "low": 0.2, "high": 0.9})
    assert np.array_equal(a.times, b.times) and np.array_equal(a.levels, b.levels)
    c = synth_workload(8, 5.0, 0.001, {**BASE, "low": 0.2, "high": 0.9})
    assert not np.array_equal(a.levels, c.levels)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), low=st.floats(0.0, 1.0), span=st.floats(0.0, 1.0))
def test_range_contract(seed, low, span):
    high = low + span * (1.0 - low)
    w = synth_workload(seed, 3.0, 0.001, {**BASE, "low": low, "high": high})
    assert np.all(w.levels >= low * 0.2 - 1e-15) and np.all(w.levels <= high * 0.2 + 1e-15)
    assert w.times[0] == 0.0


def test_dt_does_not_change_trace():
    p = {**BASE, "low": 0.2, "high": 0.9}
    a, b = synth_workload(3, 4.0, 0.001, p), synth_workload(3, 4.0, 0.0005, p)
    assert np.array_equal(a.levels, b.levels)


@pytest.mark.parametrize("bad", [{"low": 0.6, "high": 0.5}, {"low": -0.1}, {"high": 1.2, "low": 0.1},
                                 {"dwell_min_s": 0.0}, {"dwell_min_s": 1.0, "dwell_max_s": 0.5}])
def test_invalid_params(bad):
    with pytest.raises(ConfigError):
        synth_workload(0, 1.0, 0.001, {**BASE, "low": 0.3, "high": 0.4, **bad})


def test_hold_and_mean():
    w = WorkloadTrace([0.0, 1.0], [[1.0], [3.0]])
    assert w.at(0.999)[0] == 1.0 and w.at(1.0)[0] == 3.0
    assert w.mean(2.0)[0] == pytest.approx(2.0)
    assert constant_workload([0.1, 0.2]).at(50.0).tolist() == [0.1, 0.2]
    with pytest.raises(ConfigError):
        WorkloadTrace([0.0], [[-0.1]])


def test_csv(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("time_s,cluster_1,cluster_2\n0,10,20\n1.5,12,18\n")
    w = load_workload_csv(path, s_base_mva=100.0)
    assert w.at(2.0).tolist() == [0.12, 0.18]
    path.write_text("time_s,cluster_1\n0,1\n1,2,3\n")
    with pytest.raises(ConfigError):
        load_workload_csv(path)


def test_aggregate_injection():
    assert aggregate_injection(np.zeros(3), np.zeros(3)) == (0.0, 0.0)
    assert aggregate_injection([-0.5, -0.3, 0.2], [0, 0, 0])[0] == pytest.approx(-0.6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-10**6, 10**6), min_size=1, max_size=20), st.randoms())
def test_aggregate_permutation_invariant(vals, rnd):
    # integer-valued entries keep the sums exact under reordering
    p = np.array(vals, dtype=float) / 1024
    perm = list(range(len(vals)))
    rnd.shuffle(perm)
    assert aggregate_injection(p, -p) == aggregate_injection(p[perm], -p[perm])
